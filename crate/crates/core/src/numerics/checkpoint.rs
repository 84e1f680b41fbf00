//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MEDKITCK"
//! version  u32
//! count    u64
//! count × { name_len u64, name utf-8, rank u64, dims u64 × rank, payload f64 × prod(dims) }
//! ```
//!
//! Tensors are written in name order, so identical contents give identical
//! files. Scalar metadata lives in ordinary tensors named `meta.*`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MEDKITCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn set_meta(&mut self, key: &str, value: f64) {
        self.insert(format!("meta.{key}"), Tensor::scalar(value));
    }

    pub fn meta(&self, key: &str) -> Result<f64> {
        self.get(&format!("meta.{key}"))
            .map(|t| t.data()[0])
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata {key}")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        let v = self.meta(key)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Checkpoint(format!("metadata {key}={v} is not a count")));
        }
        Ok(v as usize)
    }

    pub fn has_meta(&self, key: &str) -> bool {
        self.tensors.contains_key(&format!("meta.{key}"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
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
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut v = [0u8; 4];
        read_exact(&mut r, &mut v)?;
        let version = u32::from_le_bytes(v);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u64(&mut r)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u64(&mut r)? as usize;
            if name_len > r.len() {
                return Err(Error::Checkpoint("truncated name".into()));
            }
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
            let rank = read_u64(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("rank {rank} of {name}")));
            }
            let dims = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.len()))
                .ok_or_else(|| Error::Checkpoint(format!("truncated payload for {name}")))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::new(dims, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.insert(name, t);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut c = Checkpoint::new();
        c.insert("w", Tensor::matrix(1, 2, vec![1.5, -2.0]).unwrap());
        let b = c.to_bytes();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[20..28].try_into().unwrap()), 1);
        assert_eq!(&b[28..29], b"w");
        assert_eq!(u64::from_le_bytes(b[29..37].try_into().unwrap()), 2);
        assert_eq!(b.len(), 29 + 8 + 16 + 16);
    }

    #[test]
    fn rejects_corruption() {
        let mut c = Checkpoint::new();
        c.insert("w", Tensor::scalar(1.0));
        let b = c.to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(entries in proptest::collection::btree_map("[a-z.]{1,12}", proptest::collection::vec(-1e6f64..1e6, 1..20), 0..6)) {
            let mut c = Checkpoint::new();
            for (name, data) in entries {
                c.insert(name, Tensor::vector(data));
            }
            prop_assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }
}
