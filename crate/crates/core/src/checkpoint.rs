//! Binary model checkpoints.
//!
//! Single file: 8-byte magic `OODFMDL1`, format version (u32 LE), ambient
//! dimension `D` and manifold dimension `d` (u64 LE), the penalty spec, a
//! manifold-flow flag, then per-layer descriptors followed by their parameter
//! arrays as little-endian f64. Round-trips are bit-exact.

use crate::error::{Error, Result};
use crate::flow::{ActNorm, Coupling, FlowModel, InvLinear, Layer};
use crate::manifold::{LatentSplit, ManifoldFlowModel, PenaltyKind, PenaltySpec};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 8] = b"OODFMDL1";
const VERSION: u32 = 1;

const TAG_ACTNORM: u8 = 1;
const TAG_INVLINEAR: u8 = 2;
const TAG_COUPLING: u8 = 3;

pub fn serialize_model(model: &ManifoldFlowModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(model.split.d() as u64).to_le_bytes());
    out.push(match model.penalty.kind {
        PenaltyKind::Mse => 0,
        PenaltyKind::Huber => 1,
    });
    out.extend_from_slice(&model.penalty.delta.to_le_bytes());
    out.extend_from_slice(&model.penalty.lambda_train.to_le_bytes());
    out.push(u8::from(model.manifold_flow.is_some()));
    write_flow(&mut out, &model.flow);
    if let Some(mf) = &model.manifold_flow {
        write_flow(&mut out, mf);
    }
    out
}

fn write_flow(out: &mut Vec<u8>, flow: &FlowModel) {
    out.extend_from_slice(&(flow.layers.len() as u64).to_le_bytes());
    for layer in &flow.layers {
        match layer {
            Layer::ActNorm(l) => {
                out.push(TAG_ACTNORM);
                out.extend_from_slice(&(l.dim() as u64).to_le_bytes());
                out.push(u8::from(l.initialized));
            }
            Layer::InvLinear(l) => {
                out.push(TAG_INVLINEAR);
                out.extend_from_slice(&(l.dim() as u64).to_le_bytes());
                for &p in &l.perm {
                    out.extend_from_slice(&(p as u64).to_le_bytes());
                }
                for &s in &l.diag_sign {
                    out.push(if s >= 0.0 { 1 } else { 0 });
                }
            }
            Layer::Coupling(l) => {
                out.push(TAG_COUPLING);
                out.extend_from_slice(&(l.dim() as u64).to_le_bytes());
                for &m in &l.mask {
                    out.push(u8::from(m));
                }
                out.extend_from_slice(&l.clamp.to_le_bytes());
                let widths = l.conditioner.widths();
                out.extend_from_slice(&(widths.len() as u64).to_le_bytes());
                for &w in widths {
                    out.extend_from_slice(&(w as u64).to_le_bytes());
                }
            }
        }
        let mut params = Vec::new();
        layer.write_params(&mut params);
        for v in params {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn save_model(path: &Path, model: &ManifoldFlowModel) -> Result<()> {
    std::fs::write(path, serialize_model(model))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    origin: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated checkpoint at byte offset {}",
                self.origin, self.offset
            )));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

pub fn deserialize_model(bytes: &[u8], origin: &str) -> Result<ManifoldFlowModel> {
    let mut r = Reader {
        bytes,
        offset: 0,
        origin: origin.to_string(),
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Format(format!(
            "{origin}: bad magic (not a model checkpoint)"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{origin}: unsupported checkpoint version {version} (supported: {VERSION})"
        )));
    }
    let dim = r.u64()? as usize;
    let d = r.u64()? as usize;
    let kind = match r.u8()? {
        0 => PenaltyKind::Mse,
        1 => PenaltyKind::Huber,
        t => {
            return Err(Error::Format(format!(
                "{origin}: unknown penalty kind tag {t}"
            )))
        }
    };
    let delta = r.f64()?;
    let lambda_train = r.f64()?;
    let has_mflow = r.u8()? != 0;
    let flow = read_flow(&mut r, dim)?;
    let mflow = if has_mflow {
        Some(read_flow(&mut r, d)?)
    } else {
        None
    };
    if r.offset != bytes.len() {
        return Err(Error::Format(format!(
            "{origin}: {} trailing bytes after checkpoint payload",
            bytes.len() - r.offset
        )));
    }
    let penalty = PenaltySpec {
        kind,
        delta,
        lambda_train,
    };
    ManifoldFlowModel::new(flow, LatentSplit::new(d, dim)?, mflow, penalty)
}

fn read_flow(r: &mut Reader, expect_dim: usize) -> Result<FlowModel> {
    let n_layers = r.u64()? as usize;
    if n_layers > 10_000 {
        return Err(Error::Format(format!(
            "{}: implausible layer count {n_layers}",
            r.origin
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.u8()?;
        let mut layer = match tag {
            TAG_ACTNORM => {
                let dim = r.u64()? as usize;
                let initialized = r.u8()? != 0;
                let mut l = ActNorm::new(dim);
                l.initialized = initialized;
                Layer::ActNorm(l)
            }
            TAG_INVLINEAR => {
                let dim = r.u64()? as usize;
                let mut perm = Vec::with_capacity(dim);
                for _ in 0..dim {
                    perm.push(r.u64()? as usize);
                }
                let mut signs = Vec::with_capacity(dim);
                for _ in 0..dim {
                    signs.push(if r.u8()? != 0 { 1.0 } else { -1.0 });
                }
                Layer::InvLinear(InvLinear::from_saved(dim, perm, signs)?)
            }
            TAG_COUPLING => {
                let dim = r.u64()? as usize;
                let mut mask = Vec::with_capacity(dim);
                for _ in 0..dim {
                    mask.push(r.u8()? != 0);
                }
                let clamp = r.f64()?;
                let n_widths = r.u64()? as usize;
                if n_widths < 2 || n_widths > 64 {
                    return Err(Error::Format(format!(
                        "{}: implausible conditioner depth {n_widths}",
                        r.origin
                    )));
                }
                let mut widths = Vec::with_capacity(n_widths);
                for _ in 0..n_widths {
                    widths.push(r.u64()? as usize);
                }
                Layer::Coupling(Coupling::from_saved(dim, mask, &widths, clamp)?)
            }
            t => {
                return Err(Error::Format(format!(
                    "{}: unknown layer tag {t} at byte offset {}",
                    r.origin,
                    r.offset - 1
                )))
            }
        };
        let count = layer.param_count();
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(r.f64()?);
        }
        layer.read_params(&params);
        layers.push(layer);
    }
    FlowModel::from_layers(expect_dim, layers)
}

pub fn load_model(path: &Path) -> Result<ManifoldFlowModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    deserialize_model(&bytes, &path.display().to_string())
}
