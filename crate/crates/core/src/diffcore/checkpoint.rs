//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CMZTNSR1"
//! count   u32
//! entry*  name_len u32, name utf-8, ndim u32, dims u64*ndim, payload f64*numel
//! ```
//!
//! Entries keep insertion order, so a load followed by a save reproduces the
//! input bytes.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamTree;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CMZTNSR1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Format(format!("duplicate container entry `{name}`")));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn put_scalar(&mut self, name: impl Into<String>, v: f64) -> Result<()> {
        self.put(name, Tensor::scalar(v))
    }

    /// Stores a `u64` as two exact 32-bit halves.
    pub fn put_u64(&mut self, name: impl Into<String>, v: u64) -> Result<()> {
        self.put(name, Tensor::vector(vec![(v >> 32) as f64, (v & 0xffff_ffff) as f64]))
    }

    pub fn put_tree(&mut self, prefix: &str, tree: &ParamTree) -> Result<()> {
        for (n, t) in tree.iter() {
            self.put(format!("{prefix}{n}"), t.clone())?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing container entry `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        if t.len() != 1 {
            return Err(Error::Format(format!("entry `{name}` is not a scalar")));
        }
        Ok(t.item())
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        let t = self.get(name)?;
        if t.len() != 2 {
            return Err(Error::Format(format!("entry `{name}` is not a u64")));
        }
        Ok(((t.data()[0] as u64) << 32) | t.data()[1] as u64)
    }

    /// All entries under `prefix`, prefix stripped, in stored order.
    pub fn get_tree(&self, prefix: &str) -> ParamTree {
        let mut tree = ParamTree::new();
        for (n, t) in &self.entries {
            if let Some(rest) = n.strip_prefix(prefix) {
                tree.insert(rest, t.clone()).expect("container names are unique");
            }
        }
        tree
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic: not a tensor container".into()));
        }
        let count = read_u32(&mut r)?;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(take(&mut r, name_len)?.to_vec())
                .map_err(|_| Error::Format("entry name is not utf-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut r, 8)?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = take(&mut r, numel * 8)?;
            let data = payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            c.put(name, Tensor::new(shape, data)?)?;
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into().unwrap()))
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Format("truncated container".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}
