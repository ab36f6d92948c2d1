//! `STWT` named-tensor container.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::init::ParamSpec;
use crate::io_util::{atomic_write, read_all};
use crate::tensor::Tensor;

pub const STWT_MAGIC: &[u8; 4] = b"STWT";
pub const STWT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightContainer {
    pub version: u32,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self { version: STWT_VERSION, tensors: BTreeMap::new() }
    }

    /// Fails if `name` is already present.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Container(format!("duplicate tensor {name:?}")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors.get(name).ok_or_else(|| Error::Container(format!("missing tensor {name:?}")))
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Every spec present with its exact shape, and nothing else.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        for s in specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Container(format!(
                    "tensor {:?} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        if self.tensors.len() != specs.len() {
            let extra = self.tensors.keys().find(|k| !specs.iter().any(|s| &s.name == *k)).unwrap();
            return Err(Error::Container(format!("unexpected tensor {extra:?}")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.numel() + 64 * self.tensors.len());
        out.extend_from_slice(STWT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != STWT_MAGIC {
            return Err(Error::Format("missing STWT magic".into()));
        }
        let version = r.u32()?;
        if version != STWT_VERSION {
            return Err(Error::Format(format!("unsupported STWT version {version}")));
        }
        let count = r.u32()?;
        let mut c = WeightContainer { version, tensors: BTreeMap::new() };
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let head = r.take(2)?;
            if head[0] != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {name:?}: unsupported dtype {}", head[0])));
            }
            let shape = (0..head[1])
                .map(|_| Ok(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()));
            let n = n.ok_or_else(|| Error::Format(format!("tensor {name:?}: implausible shape {shape:?}")))?;
            let data = r.take(4 * n)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor {name:?}: {e}")))?;
            c.insert(name, t)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after last tensor", bytes.len() - r.pos)));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes();
        atomic_write(path.as_ref(), |w| w.write_all(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_all(path.as_ref())?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated STWT file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
