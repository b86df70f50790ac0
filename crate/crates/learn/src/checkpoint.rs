//! `SSCK` container: step, seed, string metadata and named sections of f64 tensors.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{LearnError, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::{Mat, ParamStore};

const MAGIC: &[u8; 4] = b"SSCK";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub const SECTION_PARAMS: &str = "params";
pub const SECTION_ADAM_M: &str = "adam.m";
pub const SECTION_ADAM_V: &str = "adam.v";
pub const SECTION_EMA: &str = "ema";
pub const SECTION_AE: &str = "ae.params";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
    pub sections: BTreeMap<String, ParamStore>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn take<const N: usize>(r: &mut Cursor<&[u8]>, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| LearnError::Checkpoint(format!("truncated while reading {what}")))?;
    Ok(b)
}

fn take_u32(r: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take::<4>(r, what)?))
}

fn take_str(r: &mut Cursor<&[u8]>, what: &str) -> Result<String> {
    let n = take_u32(r, what)? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(LearnError::Checkpoint(format!("truncated while reading {what}")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).unwrap();
    String::from_utf8(b).map_err(|_| LearnError::Checkpoint(format!("{what} is not UTF-8")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.sections.len() as u32);
        for (name, store) in &self.sections {
            put_str(&mut out, name);
            put_u32(&mut out, store.len() as u32);
            for (path, m) in store.iter() {
                put_str(&mut out, path);
                put_u32(&mut out, m.nrows() as u32);
                put_u32(&mut out, m.ncols() as u32);
                out.push(DTYPE_F64);
                for v in m.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        if &take::<4>(&mut r, "magic")? != MAGIC {
            return Err(LearnError::Checkpoint("not an SSCK checkpoint".into()));
        }
        let version = take_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let step = u64::from_le_bytes(take::<8>(&mut r, "step")?);
        let seed = u64::from_le_bytes(take::<8>(&mut r, "seed")?);
        let mut meta = BTreeMap::new();
        for _ in 0..take_u32(&mut r, "metadata count")? {
            let k = take_str(&mut r, "metadata key")?;
            let v = take_str(&mut r, "metadata value")?;
            meta.insert(k, v);
        }
        let mut sections = BTreeMap::new();
        for _ in 0..take_u32(&mut r, "section count")? {
            let name = take_str(&mut r, "section name")?;
            let mut store = ParamStore::new();
            for _ in 0..take_u32(&mut r, "tensor count")? {
                let path = take_str(&mut r, "tensor path")?;
                let rows = take_u32(&mut r, "rows")? as usize;
                let cols = take_u32(&mut r, "cols")? as usize;
                let dtype = take::<1>(&mut r, "dtype")?[0];
                if dtype != DTYPE_F64 {
                    return Err(LearnError::Checkpoint(format!("tensor {path}: unsupported dtype {dtype}")));
                }
                let n = rows * cols;
                let remaining = bytes.len() - r.position() as usize;
                if n * 8 > remaining {
                    return Err(LearnError::Checkpoint(format!("tensor {path} is truncated")));
                }
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    data.push(f64::from_le_bytes(take::<8>(&mut r, "tensor data")?));
                }
                store.insert(path, Mat::from_shape_vec((rows, cols), data).unwrap());
            }
            sections.insert(name, store);
        }
        Ok(Self { step, seed, meta, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| LearnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| LearnError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn section(&self, name: &str) -> Result<&ParamStore> {
        self.sections
            .get(name)
            .ok_or_else(|| LearnError::Checkpoint(format!("checkpoint has no {name} section")))
    }

    pub fn put_optimizer(&mut self, opt: &AdamW) {
        let to_store = |m: &BTreeMap<String, Mat>| {
            let mut s = ParamStore::new();
            for (k, v) in m {
                s.insert(k.clone(), v.clone());
            }
            s
        };
        self.sections.insert(SECTION_ADAM_M.into(), to_store(&opt.m));
        self.sections.insert(SECTION_ADAM_V.into(), to_store(&opt.v));
        self.meta.insert("adam.step".into(), opt.step.to_string());
        self.meta.insert(
            "adam.config".into(),
            serde_json::to_string(&opt.config).expect("serializable optimizer config"),
        );
    }

    pub fn optimizer(&self) -> Result<AdamW> {
        let config: AdamWConfig = match self.meta.get("adam.config") {
            Some(s) => serde_json::from_str(s).map_err(|e| LearnError::Checkpoint(format!("adam.config: {e}")))?,
            None => return Err(LearnError::Checkpoint("checkpoint has no optimizer state".into())),
        };
        let step = self
            .meta
            .get("adam.step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| LearnError::Checkpoint("missing adam.step".into()))?;
        let from_store = |s: &ParamStore| s.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        Ok(AdamW {
            config,
            step,
            m: from_store(self.section(SECTION_ADAM_M)?),
            v: from_store(self.section(SECTION_ADAM_V)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_bit_exact() {
        let mut p = ParamStore::new();
        p.insert("a.w", array![[1.0, -0.0, f64::MIN_POSITIVE], [1e300, 3.25, -7.5]]);
        p.insert("b", array![[0.1]]);
        let mut ck = Checkpoint { step: 17, seed: 9, ..Default::default() };
        ck.meta.insert("spec".into(), "{}".into());
        ck.sections.insert(SECTION_PARAMS.into(), p.clone());
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.m.insert("b".into(), array![[0.5]]);
        opt.v.insert("b".into(), array![[0.25]]);
        opt.step = 3;
        ck.put_optimizer(&opt);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.optimizer().unwrap(), opt);
        assert_eq!(back.section(SECTION_PARAMS).unwrap().checksum(), p.checksum());
        assert!(Checkpoint::from_bytes(&ck.to_bytes()[..40]).is_err());
    }
}
