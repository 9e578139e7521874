//! Input-complexity term: per-sample compressed bit counts from a lossless
//! byte compressor, and the complexity-adjusted likelihood score.
//!
//! Samples in [0, 1]^D quantize to one byte per coordinate; the compressed
//! length of those bytes (in bits) estimates the sample's complexity. The
//! adjusted score subtracts the per-dimension bit count from the
//! per-dimension negative log-likelihood, both expressed in bits.

use crate::error::{Error, Result};
use flate2::write::ZlibEncoder;
use flate2::Compression;
use std::io::Write;

/// One byte per coordinate: `round(clamp(x, 0, 1) * 255)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedSample {
    pub bytes: Vec<u8>,
    pub shape: Vec<usize>,
    /// How many coordinates fell outside [0, 1] and were clamped.
    pub clamped: usize,
}

pub fn quantize(values: &[f64], shape: &[usize]) -> QuantizedSample {
    let mut clamped = 0;
    let bytes = values
        .iter()
        .map(|&v| {
            let c = v.clamp(0.0, 1.0);
            if c != v {
                clamped += 1;
            }
            (c * 255.0).round() as u8
        })
        .collect();
    QuantizedSample {
        bytes,
        shape: shape.to_vec(),
        clamped,
    }
}

pub fn dequantize(sample: &QuantizedSample) -> Vec<f64> {
    sample.bytes.iter().map(|&b| b as f64 / 255.0).collect()
}

/// A lossless byte compressor. Implementations must be deterministic for a
/// fixed configuration; the identifier is recorded in score file headers.
pub trait Codec {
    fn id(&self) -> String;
    fn compress(&self, bytes: &[u8]) -> Result<Vec<u8>>;
}

/// DEFLATE-class stream (zlib container) at a fixed compression level.
#[derive(Clone, Copy, Debug)]
pub struct DeflateCodec {
    pub level: u32,
}

impl Default for DeflateCodec {
    fn default() -> Self {
        // Maximum compression: the bit count is the complexity estimate, so
        // spend the effort.
        Self { level: 9 }
    }
}

impl Codec for DeflateCodec {
    fn id(&self) -> String {
        format!("deflate:{}", self.level)
    }

    fn compress(&self, bytes: &[u8]) -> Result<Vec<u8>> {
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(self.level));
        enc.write_all(bytes)
            .and_then(|_| enc.finish())
            .map_err(|e| Error::Numeric(format!("codec failure: {e}")))
    }
}

/// Compressed size in bits: 8 x compressed byte length.
pub fn complexity_bits(sample: &QuantizedSample, codec: &dyn Codec) -> Result<u64> {
    if sample.bytes.is_empty() {
        return Err(Error::Config("complexity_bits needs a non-empty sample".into()));
    }
    Ok(8 * codec.compress(&sample.bytes)?.len() as u64)
}

/// Complexity-adjusted score in bits per dimension:
/// `nll / (D ln 2) - bits / D`.
pub fn ic_adjusted_nll(nll_nats: f64, bits: u64, dim: usize) -> f64 {
    assert!(dim > 0, "dimension must be positive");
    nll_nats / (dim as f64 * std::f64::consts::LN_2) - bits as f64 / dim as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SeededRng;

    #[test]
    fn quantize_endpoints() {
        let q = quantize(&[0.0, 1.0, 0.5], &[3]);
        assert_eq!(q.bytes, vec![0, 255, 128]);
        assert_eq!(q.clamped, 0);
        let q = quantize(&[-0.5, 2.0], &[2]);
        assert_eq!(q.bytes, vec![0, 255]);
        assert_eq!(q.clamped, 2);
    }

    #[test]
    fn quantization_round_trip_bound() {
        let mut rng = SeededRng::new(1);
        let xs: Vec<f64> = (0..1000).map(|_| rng.next_f64()).collect();
        let q = quantize(&xs, &[1000]);
        let back = dequantize(&q);
        for (a, b) in xs.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12, "{a} vs {b}");
        }
        // Idempotent once on the byte grid.
        let q2 = quantize(&back, &[1000]);
        assert_eq!(q.bytes, q2.bytes);
    }

    #[test]
    fn constant_compresses_far_below_random() {
        let codec = DeflateCodec::default();
        let constant = QuantizedSample {
            bytes: vec![37u8; 1024],
            shape: vec![1024],
            clamped: 0,
        };
        let mut rng = SeededRng::new(9);
        let random = QuantizedSample {
            bytes: (0..1024).map(|_| (rng.next_u64() & 0xff) as u8).collect(),
            shape: vec![1024],
            clamped: 0,
        };
        let bc = complexity_bits(&constant, &codec).unwrap();
        let br = complexity_bits(&random, &codec).unwrap();
        assert!(bc * 4 < br, "constant {bc} bits, random {br} bits");
    }

    #[test]
    fn deterministic_bit_counts() {
        let codec = DeflateCodec::default();
        let mut rng = SeededRng::new(4);
        let s = QuantizedSample {
            bytes: (0..512).map(|_| (rng.next_u64() & 0xff) as u8).collect(),
            shape: vec![512],
            clamped: 0,
        };
        let a = complexity_bits(&s, &codec).unwrap();
        let b = complexity_bits(&s, &codec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a % 8, 0);
    }

    #[test]
    fn empty_sample_rejected() {
        let codec = DeflateCodec::default();
        let empty = QuantizedSample {
            bytes: vec![],
            shape: vec![0],
            clamped: 0,
        };
        assert!(complexity_bits(&empty, &codec).is_err());
    }

    #[test]
    fn adjusted_score_units() {
        let d = 64;
        // nll = D ln 2 nats is exactly 1 bit/dim; bits = D is 1 bit/dim.
        let s = ic_adjusted_nll(d as f64 * std::f64::consts::LN_2, d as u64, d);
        assert_eq!(s, 0.0);
        // bits = 0 degenerates to plain bits-per-dimension.
        let s = ic_adjusted_nll(2.0 * d as f64 * std::f64::consts::LN_2, 0, d);
        assert!((s - 2.0).abs() < 1e-15);
    }

    #[test]
    fn codec_id_records_level() {
        assert_eq!(DeflateCodec::default().id(), "deflate:9");
        assert_eq!(DeflateCodec { level: 6 }.id(), "deflate:6");
    }
}
