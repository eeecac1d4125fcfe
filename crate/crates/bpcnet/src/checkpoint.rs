//! Checkpoint files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "BPCT" version=1
//! spec_len  spec_json[spec_len]
//! tensor_count
//! repeated: name_len name[name_len] rank dims[rank] f64 payload (LE)
//! ```

use std::path::Path;

use bpcnet_core::model::{Model, ModelSpec};
use bpcnet_core::{Rng, Tensor};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 4] = b"BPCT";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let spec = serde_json::to_string(model.spec()).map_err(|e| Error::Config(e.to_string()))?;
    let params = model.named_params();
    let mut out = Vec::with_capacity(16 + spec.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, spec.len());
    out.extend_from_slice(spec.as_bytes());
    put_u32(&mut out, params.len());
    for (name, t) in params {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
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
            None => Err(Error::format(self.bytes.len(), format!("truncated while reading {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)?;
        let at = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(at, format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let spec_at = r.pos;
    let spec_text = r.text("spec")?;
    let spec: ModelSpec =
        serde_json::from_str(&spec_text).map_err(|e| Error::format(spec_at, format!("spec snapshot: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.text("tensor name")?;
        let rank = r.u32("rank")?;
        if !(1..=4).contains(&rank) {
            return Err(Error::format(r.pos - 4, format!("tensor {name:?} has rank {rank}")));
        }
        let dims: Vec<usize> = (0..rank).map(|_| r.u32("dims")).collect::<Result<_>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).unwrap_or(usize::MAX);
        let raw = r.take(numel.saturating_mul(8), "tensor payload")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.push((name, Tensor::new(&dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    spec.validate()?;
    let mut model = Model::build(&spec, &mut Rng::new(0))?;
    model.load_params(params).map_err(|e| Error::Integrity(e.to_string()))?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
