//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//! `"IAMC"`, u32 version (1), u32 config length, UTF-8 `key=value` lines,
//! then per parameter in store order: u16 name length, UTF-8 name,
//! u32 rank, u32 dims, f32 data.

use std::path::Path;

use super::{CellConfig, IamModel};
use crate::error::{Error, Result};
use crate::numerics::{ParamKind, ParamStore, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IAMC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Prefix of non-cell entries in the config block.
pub const META_PREFIX: &str = "meta.";

/// A loaded checkpoint: the model plus free-form metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: IamModel<f32>,
    /// `(key, value)` pairs without the `meta.` prefix, in file order.
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn kind_for(name: &str) -> ParamKind {
    if name.ends_with(".norm.gain") {
        ParamKind::NormGain
    } else if name.ends_with(".norm.bias") {
        ParamKind::NormBias
    } else if name.ends_with(".bias") {
        ParamKind::Bias
    } else {
        ParamKind::Weight
    }
}

pub fn encode_checkpoint<T: Real>(model: &IamModel<T>, meta: &[(String, String)]) -> Result<Vec<u8>> {
    let mut text = String::new();
    for (k, v) in model.config().to_pairs() {
        text.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::contract(format!("metadata entry {k:?} is not a single key=value line")));
        }
        text.push_str(&format!("{META_PREFIX}{k}={v}\n"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for (name, p) in model.params().iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::contract("parameter name too long"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &dim in p.value.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(
                self.source,
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} remain", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.source, at as u64, msg)
    }
}

pub fn decode_checkpoint(bytes: &[u8], source: &str) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0, source };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(r.err(0, "bad magic, expected \"IAMC\""));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(4, format!("unsupported checkpoint version {version}")));
    }
    let text_len = r.u32("config length")? as usize;
    let text_at = r.pos;
    let text = std::str::from_utf8(r.take(text_len, "config block")?)
        .map_err(|e| r.err(text_at + e.valid_up_to(), "config block is not UTF-8"))?;
    let mut cell_pairs = Vec::new();
    let mut meta = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| r.err(text_at, format!("config line without '=': {line:?}")))?;
        match k.strip_prefix(META_PREFIX) {
            Some(m) => meta.push((m.to_string(), v.to_string())),
            None => cell_pairs.push((k, v)),
        }
    }
    let config = CellConfig::from_pairs(cell_pairs)?;

    let mut store = ParamStore::<f32>::new();
    while r.pos < bytes.len() {
        let at = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| r.err(at + 2, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if !(1..=2).contains(&rank) {
            return Err(r.err(at, format!("{name}: unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4, &format!("data of {name}"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store
            .insert(&name, kind_for(&name), Tensor::from_vec(&shape, data)?)
            .map_err(|_| r.err(at, format!("duplicate parameter {name:?}")))?;
    }
    let model = IamModel::from_parts(config, store)?;
    Ok(Checkpoint { model, meta })
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &IamModel<T>, meta: &[(String, String)]) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}
