//! Binary tensor container and the generator-metadata sidecar.
//!
//! Layout: 8-byte magic `OODTENSR`, format version (u32 LE), rank (u64 LE,
//! at least 1), dims (u64 LE each), payload (f64 LE). Round-trips are
//! bit-exact.

use crate::data::{GenMeta, Nonlinearity, ThetaProfile};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"OODTENSR";
const VERSION: u32 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    if t.shape().is_empty() {
        return Err(Error::Format("rank-0 tensors are not supported".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 + 8 * (1 + t.shape().len()) + 8 * t.len());
    write_tensor(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    origin: String,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated at byte offset {} (wanted {} more bytes)",
                self.origin, self.offset, n
            )));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_tensor(bytes: &[u8], origin: &str) -> Result<Tensor> {
    let mut c = Cursor {
        bytes,
        offset: 0,
        origin: origin.to_string(),
    };
    let magic = c.take(8)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "{origin}: bad magic at byte offset 0 (not a tensor container)"
        )));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{origin}: unsupported container version {version} (supported: {VERSION})"
        )));
    }
    let rank = c.u64()? as usize;
    if rank == 0 {
        return Err(Error::Format(format!("{origin}: rank-0 tensor forbidden")));
    }
    if rank > 8 {
        return Err(Error::Format(format!("{origin}: implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(c.u64()? as usize);
    }
    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(c.f64()?);
    }
    if c.offset != bytes.len() {
        return Err(Error::Format(format!(
            "{origin}: {} trailing bytes after payload",
            bytes.len() - c.offset
        )));
    }
    Tensor::new(shape, data)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_tensor(&bytes, &path.display().to_string())
}

/// Sidecar path for a data file: `<path>.meta`.
pub fn sidecar_path(data_path: &Path) -> std::path::PathBuf {
    let mut s = data_path.as_os_str().to_os_string();
    s.push(".meta");
    std::path::PathBuf::from(s)
}

impl GenMeta {
    /// Single JSON-style line describing the generator and its parameters.
    pub fn to_json_line(&self) -> String {
        match self {
            GenMeta::Semicircle {
                n,
                noise_sigma,
                profile,
                seed,
            } => format!(
                "{{\"generator\":\"semicircle\",\"n\":{n},\"noise_sigma\":{noise_sigma},\"profile\":\"{}\",\"seed\":{seed}}}",
                profile.name()
            ),
            GenMeta::Embedded {
                n,
                d,
                dim,
                nonlinearity,
                noise_sigma,
                seed,
            } => format!(
                "{{\"generator\":\"embedded\",\"n\":{n},\"d\":{d},\"D\":{dim},\"nonlinearity\":\"{}\",\"noise_sigma\":{noise_sigma},\"seed\":{seed}}}",
                nonlinearity.name()
            ),
            GenMeta::Idx { source, n, dim } => format!(
                "{{\"generator\":\"idx\",\"source\":\"{source}\",\"n\":{n},\"D\":{dim}}}"
            ),
            GenMeta::Sample {
                checkpoint,
                mode,
                n,
                seed,
            } => format!(
                "{{\"generator\":\"sample\",\"checkpoint\":\"{checkpoint}\",\"mode\":\"{mode}\",\"n\":{n},\"seed\":{seed}}}"
            ),
        }
    }

    pub fn parse_json_line(line: &str) -> Result<Self> {
        let fields = parse_flat_json(line)?;
        let get = |k: &str| -> Result<&JsonValue> {
            fields
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Format(format!("metadata missing key {k:?}")))
        };
        let gen = get("generator")?.as_str()?;
        match gen {
            "semicircle" => Ok(GenMeta::Semicircle {
                n: get("n")?.as_usize()?,
                noise_sigma: get("noise_sigma")?.as_f64()?,
                profile: ThetaProfile::parse(get("profile")?.as_str()?)?,
                seed: get("seed")?.as_u64()?,
            }),
            "embedded" => Ok(GenMeta::Embedded {
                n: get("n")?.as_usize()?,
                d: get("d")?.as_usize()?,
                dim: get("D")?.as_usize()?,
                nonlinearity: Nonlinearity::parse(get("nonlinearity")?.as_str()?)?,
                noise_sigma: get("noise_sigma")?.as_f64()?,
                seed: get("seed")?.as_u64()?,
            }),
            "idx" => Ok(GenMeta::Idx {
                source: get("source")?.as_str()?.to_string(),
                n: get("n")?.as_usize()?,
                dim: get("D")?.as_usize()?,
            }),
            "sample" => Ok(GenMeta::Sample {
                checkpoint: get("checkpoint")?.as_str()?.to_string(),
                mode: get("mode")?.as_str()?.to_string(),
                n: get("n")?.as_usize()?,
                seed: get("seed")?.as_u64()?,
            }),
            other => Err(Error::Format(format!("unknown generator {other:?}"))),
        }
    }
}

#[derive(Debug)]
enum JsonValue {
    Str(String),
    Num(f64),
}

impl JsonValue {
    fn as_str(&self) -> Result<&str> {
        match self {
            JsonValue::Str(s) => Ok(s),
            JsonValue::Num(_) => Err(Error::Format("expected a string value".into())),
        }
    }

    fn as_f64(&self) -> Result<f64> {
        match self {
            JsonValue::Num(v) => Ok(*v),
            JsonValue::Str(_) => Err(Error::Format("expected a numeric value".into())),
        }
    }

    fn as_usize(&self) -> Result<usize> {
        let v = self.as_f64()?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Format(format!("expected a non-negative integer, got {v}")));
        }
        Ok(v as usize)
    }

    fn as_u64(&self) -> Result<u64> {
        Ok(self.as_usize()? as u64)
    }
}

/// Minimal parser for one flat JSON object with string and number values —
/// exactly the shape the sidecar writes.
fn parse_flat_json(line: &str) -> Result<Vec<(String, JsonValue)>> {
    let s = line.trim();
    let inner = s
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| Error::Format("metadata line is not a JSON object".into()))?;
    let mut out = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        rest = rest.trim_start_matches(',').trim();
        if rest.is_empty() {
            break;
        }
        let rest2 = rest
            .strip_prefix('"')
            .ok_or_else(|| Error::Format("expected a quoted key".into()))?;
        let kq = rest2
            .find('"')
            .ok_or_else(|| Error::Format("unterminated key".into()))?;
        let key = rest2[..kq].to_string();
        let after = rest2[kq + 1..]
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| Error::Format(format!("missing ':' after key {key:?}")))?
            .trim_start();
        if let Some(vs) = after.strip_prefix('"') {
            let vq = vs
                .find('"')
                .ok_or_else(|| Error::Format("unterminated string value".into()))?;
            out.push((key, JsonValue::Str(vs[..vq].to_string())));
            rest = &vs[vq + 1..];
        } else {
            let end = after
                .find([',', '}'])
                .unwrap_or(after.len());
            let num: f64 = after[..end]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad number {:?}", &after[..end])))?;
            out.push((key, JsonValue::Num(num)));
            rest = &after[end..];
        }
    }
    Ok(out)
}

pub fn write_sidecar(data_path: &Path, meta: &GenMeta) -> Result<()> {
    std::fs::write(sidecar_path(data_path), meta.to_json_line() + "\n")?;
    Ok(())
}

pub fn read_sidecar(data_path: &Path) -> Result<GenMeta> {
    let text = std::fs::read_to_string(sidecar_path(data_path))?;
    let line = text
        .lines()
        .next()
        .ok_or_else(|| Error::Format("empty sidecar file".into()))?;
    GenMeta::parse_json_line(line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_semicircle, regenerate};
    use crate::nn::SeededRng;

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("oodflow_container_{name}"));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn round_trip_bit_identical() {
        let mut rng = SeededRng::new(1);
        let t = Tensor::new(vec![7, 3], (0..21).map(|_| rng.normal()).collect()).unwrap();
        let path = tmpdir("rt").join("t.tensor");
        save_tensor(&path, &t).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Re-serialization is byte-identical.
        let mut again = Vec::new();
        write_tensor(&mut again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), again);
    }

    #[test]
    fn golden_bytes_for_fixed_tensor() {
        // Frozen byte layout: magic, version, rank 2, dims [1, 2],
        // payload [1.0, -2.5].
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut want: Vec<u8> = Vec::new();
        want.extend_from_slice(b"OODTENSR");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1.0f64.to_le_bytes());
        want.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn rejects_bad_input() {
        // Rank 0.
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"OODTENSR");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&0u64.to_le_bytes());
        assert!(matches!(read_tensor(&buf, "mem"), Err(Error::Format(_))));
        // Bad magic.
        assert!(matches!(
            read_tensor(b"NOTMAGIC", "mem"),
            Err(Error::Format(_))
        ));
        // Version mismatch.
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"OODTENSR");
        buf.extend_from_slice(&9u32.to_le_bytes());
        assert!(matches!(read_tensor(&buf, "mem"), Err(Error::Format(_))));
        // Truncation reports the byte offset.
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_tensor(&buf, "mem").unwrap_err();
        assert!(err.to_string().contains("byte offset"), "{err}");
    }

    #[test]
    fn empty_tensor_valid() {
        let t = Tensor::new(vec![0, 4], vec![]).unwrap();
        let path = tmpdir("empty").join("e.tensor");
        save_tensor(&path, &t).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.shape(), &[0, 4]);
    }

    #[test]
    fn sidecar_regenerates_dataset() {
        let ds = gen_semicircle(32, 0.02, crate::data::ThetaProfile::Concentrated, 77).unwrap();
        let dir = tmpdir("sidecar");
        let path = dir.join("d.tensor");
        save_tensor(&path, &ds.tensor).unwrap();
        write_sidecar(&path, &ds.meta).unwrap();
        let meta = read_sidecar(&path).unwrap();
        assert_eq!(meta, ds.meta);
        let again = regenerate(&meta).unwrap();
        assert_eq!(again.tensor.data(), ds.tensor.data());
    }

    #[test]
    fn json_line_round_trip() {
        let metas = [
            GenMeta::Semicircle {
                n: 10,
                noise_sigma: 0.05,
                profile: crate::data::ThetaProfile::Uniform,
                seed: 3,
            },
            GenMeta::Embedded {
                n: 20,
                d: 4,
                dim: 16,
                nonlinearity: crate::data::Nonlinearity::Smooth,
                noise_sigma: 0.01,
                seed: 9,
            },
            GenMeta::Idx {
                source: "train-images".into(),
                n: 100,
                dim: 784,
            },
        ];
        for m in &metas {
            let line = m.to_json_line();
            let back = GenMeta::parse_json_line(&line).unwrap();
            assert_eq!(&back, m, "line {line}");
        }
    }
}
