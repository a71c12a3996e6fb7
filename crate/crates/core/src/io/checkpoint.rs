use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::teacher::{ConditionKind, DenoiserModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named `f32` array with a row-major shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

/// Container layout, all little-endian: magic, version, tensor count, then
/// per tensor the name length and bytes, rank, dims and raw `f32` data.
pub fn encode_tensors(tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let count: u64 = t.dims.iter().map(|&d| d as u64).product();
        if count != t.data.len() as u64 {
            return Err(Error::invalid(format!(
                "tensor `{}` has dims {:?} but {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::CorruptCheckpoint(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint(format!(
            "bad magic `{}`",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u32("dims")?);
        }
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let n = n
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor `{name}` is too large")))?;
        let raw = r.take(n, &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

pub fn write_tensors(tensors: &[Tensor], path: &Path) -> Result<()> {
    write_file(path, &encode_tensors(tensors)?)
}

pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    decode_tensors(&read_file(path)?)
}

fn model_tensors(model: &DenoiserModel) -> Vec<Tensor> {
    let (kind, classes) = model.cond_kind().code();
    let meta = [model.data_dim_inner() as u32, kind, classes, model.time_steps() as u32];
    let mut tensors = vec![Tensor {
        name: "meta".into(),
        dims: vec![meta.len() as u32],
        data: meta.iter().map(|&v| v as f32).collect(),
    }];
    let widths = model.widths();
    for (i, (w, b)) in model.layers().into_iter().enumerate() {
        tensors.push(Tensor {
            name: format!("layer{i}.weight"),
            dims: vec![widths[i] as u32, widths[i + 1] as u32],
            data: w.iter().map(|&v| v as f32).collect(),
        });
        tensors.push(Tensor {
            name: format!("layer{i}.bias"),
            dims: vec![widths[i + 1] as u32],
            data: b.iter().map(|&v| v as f32).collect(),
        });
    }
    tensors
}

fn model_from_tensors(tensors: &[Tensor]) -> Result<DenoiserModel> {
    let corrupt = |m: String| Error::CorruptCheckpoint(m);
    let meta = tensors
        .first()
        .filter(|t| t.name == "meta" && t.data.len() == 4)
        .ok_or_else(|| corrupt("missing meta tensor".into()))?;
    let m: Vec<u32> = meta.data.iter().map(|&v| v as u32).collect();
    let cond_kind = ConditionKind::from_code(m[1], m[2])?;
    let layers = &tensors[1..];
    if layers.is_empty() || !layers.len().is_multiple_of(2) {
        return Err(corrupt(format!("expected weight/bias pairs, found {} tensors", layers.len())));
    }
    let mut widths = vec![];
    let mut params = vec![];
    for (i, pair) in layers.chunks_exact(2).enumerate() {
        let (w, b) = (&pair[0], &pair[1]);
        if w.name != format!("layer{i}.weight") || b.name != format!("layer{i}.bias") {
            return Err(corrupt(format!("unexpected tensors `{}`, `{}`", w.name, b.name)));
        }
        if w.dims.len() != 2 || b.dims.len() != 1 || b.dims[0] != w.dims[1] {
            return Err(corrupt(format!("layer {i} has inconsistent shapes")));
        }
        if i == 0 {
            widths.push(w.dims[0] as usize);
        } else if widths.last() != Some(&(w.dims[0] as usize)) {
            return Err(corrupt(format!("layer {i} input does not match the previous output")));
        }
        widths.push(w.dims[1] as usize);
        params.extend(w.data.iter().chain(&b.data).map(|&v| v as f64));
    }
    DenoiserModel::from_parts(m[0] as usize, cond_kind, m[3] as usize, widths, params)
        .map_err(|e| corrupt(e.to_string()))
}

pub fn save_checkpoint(model: &DenoiserModel, path: &Path) -> Result<()> {
    write_tensors(&model_tensors(model), path)
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserModel> {
    model_from_tensors(&read_tensors(path)?)
}
