//! Self-describing named-array container used for checkpoints and
//! persisted synthesis latents.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"SMGTENS\0"
//! version      u32       currently 1
//! meta_len     u32       byte length of the metadata block
//! meta         meta_len  UTF-8 `key = value` lines
//! count        u32       number of arrays
//! per array:
//!   name_len   u32
//!   name       name_len  UTF-8
//!   dtype      u8        1 = f32, 2 = f64
//!   rank       u8
//!   dims       rank x u64
//!   data       prod(dims) x sizeof(dtype), row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use smgarn_autograd::{DType, Element};

use crate::config::{parse_kv, write_kv};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SMGTENS\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
}

impl ArrayData {
    pub fn from_array<T: Element>(a: &ArrayD<T>) -> Self {
        match T::DTYPE {
            DType::F32 => ArrayData::F32(a.mapv(|v| v.as_f64() as f32)),
            DType::F64 => ArrayData::F64(a.mapv(|v| v.as_f64())),
        }
    }

    /// Converts to the requested element type (exact for f32 <-> f64 of
    /// values that originated as f32).
    pub fn to_array<T: Element>(&self) -> ArrayD<T> {
        match self {
            ArrayData::F32(a) => a.mapv(|v| T::from_real(v as f64)),
            ArrayData::F64(a) => a.mapv(T::from_real),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            ArrayData::F32(a) => a.shape(),
            ArrayData::F64(a) => a.shape(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: Vec<(String, String)>,
    pub arrays: Vec<(String, ArrayData)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))
    }

    pub fn push<T: Element>(&mut self, name: impl Into<String>, array: &ArrayD<T>) {
        self.arrays.push((name.into(), ArrayData::from_array(array)));
    }

    pub fn get(&self, name: &str) -> Option<&ArrayData> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = write_kv(self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, data) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(data.dtype().code());
            out.push(data.shape().len() as u8);
            for &d in data.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match data {
                ArrayData::F32(a) => a.iter().for_each(|v| v.write_le(&mut out)),
                ArrayData::F64(a) => a.iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta_text =
            std::str::from_utf8(r.take(meta_len)?).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let meta = parse_kv(meta_text)?.into_iter().map(|e| (e.key, e.value)).collect();
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?
                .to_string();
            let dtype =
                DType::from_code(r.u8()?).ok_or_else(|| Error::Format(format!("unknown dtype for `{name}`")))?;
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64()? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("array `{name}` is too large")))?;
            let raw = r.take(
                n.checked_mul(dtype.size_of())
                    .ok_or_else(|| Error::Format(format!("array `{name}` is too large")))?,
            )?;
            let data = match dtype {
                DType::F32 => ArrayData::F32(decode::<f32>(raw, &dims)),
                DType::F64 => ArrayData::F64(decode::<f64>(raw, &dims)),
            };
            arrays.push((name, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last array",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { meta, arrays })
    }

    /// Writes to a sibling temp file, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn decode<T: Element>(raw: &[u8], dims: &[usize]) -> ArrayD<T> {
    let size = T::DTYPE.size_of();
    let values: Vec<T> = raw.chunks_exact(size).map(T::read_le).collect();
    ArrayD::from_shape_vec(IxDyn(dims), values).expect("length checked")
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}
