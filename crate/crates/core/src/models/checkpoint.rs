//! Binary checkpoints: `"NPDM" | version u32 | spec length u32 | spec JSON |
//! parameter count u64 | f32 LE values in registry order`.

use std::fs;
use std::path::Path;

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NPDM";
const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(model: &Model<T>) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(&model.spec().resolved()).map_err(|e| Error::Config(e.to_string()))?;
    let n = model.parameter_count();
    let mut out = Vec::with_capacity(24 + spec.len() + 4 * n);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for t in model.params() {
        for &v in t.data() {
            out.extend_from_slice(&(v.to_f64().unwrap_or(f64::NAN) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return Err(r.fail("not a model checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("spec length")? as usize;
    let start = r.pos;
    let spec: ModelSpec = serde_json::from_slice(r.take(len, "spec")?)
        .map_err(|e| Error::Format { offset: start as u64, message: format!("invalid spec: {e}") })?;
    let layout = spec.layout()?;
    let n = r.u64("parameter count")?;
    if n != layout.count() as u64 {
        return Err(r.fail(format!("checkpoint holds {n} parameters, its spec needs {}", layout.count())));
    }
    let mut params = Vec::with_capacity(layout.defs().len());
    for d in layout.defs() {
        let raw = r.take(4 * d.numel(), &d.name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Tensor::new(&d.shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Model::from_parts(&spec, params)
}

pub fn write_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Model<f32>> {
    decode_checkpoint(&fs::read(path)?)
}
