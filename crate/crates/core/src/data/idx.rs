//! IDX file ingestion (the MNIST container format).
//!
//! Magic: two zero bytes, a dtype byte (0x08 = unsigned byte is the only
//! supported one), and the dimension count; then big-endian u32 dimensions
//! and the raw payload. Pixels scale to [0, 1] by /255 and images flatten to
//! `[n, rows * cols]`.

use crate::data::{Dataset, GenMeta};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use std::io::Read;
use std::path::Path;

pub fn load_idx(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_idx(&bytes, &path.display().to_string())
}

pub fn parse_idx(bytes: &[u8], origin: &str) -> Result<Dataset> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "{origin}: truncated at byte offset 0 (no magic)"
        )));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format(format!(
            "{origin}: bad magic at byte offset 0: {:02x}{:02x}",
            bytes[0], bytes[1]
        )));
    }
    let dtype = bytes[2];
    if dtype != 0x08 {
        return Err(Error::Format(format!(
            "{origin}: unsupported dtype 0x{dtype:02x} at byte offset 2 (only unsigned byte 0x08)"
        )));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Format(format!(
            "{origin}: zero dimensions at byte offset 3"
        )));
    }
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(Error::Format(format!(
            "{origin}: truncated at byte offset {} (incomplete dimension list)",
            bytes.len()
        )));
    }
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let off = 4 + 4 * i;
        dims.push(u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let count: usize = dims.iter().product();
    if bytes.len() != header_len + count {
        return Err(Error::Format(format!(
            "{origin}: payload has {} bytes at byte offset {header_len}, expected {count}",
            bytes.len() - header_len
        )));
    }
    let n = dims[0];
    let width: usize = dims[1..].iter().product::<usize>().max(1);
    let data: Vec<f64> = bytes[header_len..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Dataset {
        tensor: Tensor::new(vec![n, width], data)?,
        meta: GenMeta::Idx {
            source: origin.to_string(),
            n,
            dim: width,
        },
    })
}
