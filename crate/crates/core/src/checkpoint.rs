//! Binary model checkpoints: magic, version, the model configuration as
//! TOML, then every parameter tensor by name in little-endian f64.

use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"EXLABCK1";
const VERSION: u32 = 1;

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let cfg = toml::to_string(&model.config).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_bytes(&mut out, cfg.as_bytes());
    out.extend_from_slice(&(model.params.tensors().len() as u64).to_le_bytes());
    for (name, t) in model.params.names().zip(model.params.tensors()) {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Parse("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Parse("length does not fit in memory".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        Ok(std::str::from_utf8(self.take(n)?)?.to_string())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(Error::Parse("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let config: ModelConfig =
        toml::from_str(&r.string()?).map_err(|e| Error::Parse(format!("checkpoint config: {}", e.message())))?;
    config.validate()?;
    let count = r.len()?;
    let mut named = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .ok_or_else(|| Error::Parse(format!("shape of `{name}` overflows")))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Parse("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    let params = ParamSet::from_named(&config, named)?;
    Model::new(config, params)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &to_bytes(model)?)
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
