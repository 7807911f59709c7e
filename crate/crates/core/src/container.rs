//! Binary container shared by graph caches, datasets and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "PGNOPACK"
//! offset 8   u32       format version (currently 1)
//! offset 12  u64       header length H in bytes
//! offset 20  H bytes   UTF-8 JSON header
//!            padding   zero bytes up to the next multiple of 8
//!            data      array payloads, each starting on an 8-byte boundary
//! ```
//!
//! The JSON header is `{"kind", "meta", "arrays": [{"name", "dtype", "shape",
//! "offset", "nbytes"}]}` where `offset` is relative to the start of the data
//! section and `dtype` is one of `f64`, `i64`, `u8`. Object keys are emitted
//! in sorted order, so identical contents produce identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PGNOPACK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::I64(_) => "i64",
            ArrayData::U8(_) => "u8",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    fn nbytes(&self) -> usize {
        match self {
            ArrayData::U8(v) => v.len(),
            other => other.len() * 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Serialize, Deserialize)]
struct ArrayIndex {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayIndex>,
}

/// In-memory container: a kind tag, JSON metadata, and named typed arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    arrays: BTreeMap<String, NamedArray>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: ArrayData) {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "array {name}: shape {shape:?} does not match {} elements",
            data.len()
        );
        self.arrays.insert(name, NamedArray { shape, data });
    }

    pub fn insert_mat(&mut self, name: impl Into<String>, m: &Array2<f64>) {
        let data = m.iter().copied().collect();
        self.insert(name, vec![m.nrows(), m.ncols()], ArrayData::F64(data));
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.insert(name, shape, ArrayData::F64(data));
    }

    pub fn insert_i64(&mut self, name: impl Into<String>, data: Vec<i64>) {
        let n = data.len();
        self.insert(name, vec![n], ArrayData::I64(data));
    }

    pub fn insert_bools(&mut self, name: impl Into<String>, data: &[bool]) {
        let bytes = data.iter().map(|&b| b as u8).collect::<Vec<_>>();
        self.insert(name, vec![data.len()], ArrayData::U8(bytes));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::SchemaMismatch(format!("missing array `{name}`")))
    }

    pub fn f64s(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let a = self.array(name)?;
        match &a.data {
            ArrayData::F64(v) => Ok((&a.shape, v)),
            _ => Err(Error::SchemaMismatch(format!("array `{name}` is not f64"))),
        }
    }

    pub fn i64s(&self, name: &str) -> Result<&[i64]> {
        match &self.array(name)?.data {
            ArrayData::I64(v) => Ok(v),
            _ => Err(Error::SchemaMismatch(format!("array `{name}` is not i64"))),
        }
    }

    pub fn bools(&self, name: &str) -> Result<Vec<bool>> {
        match &self.array(name)?.data {
            ArrayData::U8(v) => Ok(v.iter().map(|&b| b != 0).collect()),
            _ => Err(Error::SchemaMismatch(format!("array `{name}` is not u8"))),
        }
    }

    /// A 2-D f64 array. 1-D arrays are returned as a single column.
    pub fn mat(&self, name: &str) -> Result<Array2<f64>> {
        let (shape, data) = self.f64s(name)?;
        let (r, c) = match shape {
            [r, c] => (*r, *c),
            [r] => (*r, 1),
            _ => {
                return Err(Error::SchemaMismatch(format!(
                    "array `{name}` has shape {shape:?}, expected 2-D"
                )))
            }
        };
        Ok(Array2::from_shape_vec((r, c), data.to_vec()).expect("validated shape"))
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let (_, data) = self.f64s(name)?;
        Ok(Array1::from(data.to_vec()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut index = Vec::with_capacity(self.arrays.len());
        let mut offset = 0usize;
        for (name, a) in &self.arrays {
            let nbytes = a.data.nbytes();
            index.push(ArrayIndex {
                name: name.clone(),
                dtype: a.data.dtype().to_string(),
                shape: a.shape.clone(),
                offset,
                nbytes,
            });
            offset += nbytes.div_ceil(8) * 8;
        }
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: index,
        };
        let header_bytes = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(32 + header_bytes.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        pad8(&mut out);
        let data_start = out.len();
        for a in self.arrays.values() {
            match &a.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U8(v) => out.extend_from_slice(v),
            }
            let rel = out.len() - data_start;
            out.resize(data_start + rel.div_ceil(8) * 8, 0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::SchemaMismatch(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a physgno container (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "unsupported container version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let hend = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..hend]).map_err(|e| Error::SchemaMismatch(format!("header: {e}")))?;
        let data_start = hend.div_ceil(8) * 8;
        let mut arrays = BTreeMap::new();
        for idx in header.arrays {
            let start = data_start + idx.offset;
            let end = start + idx.nbytes;
            if end > bytes.len() {
                return Err(Error::SchemaMismatch(format!("array `{}` truncated", idx.name)));
            }
            let raw = &bytes[start..end];
            let count: usize = idx.shape.iter().product();
            let data = match idx.dtype.as_str() {
                "f64" => ArrayData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                "i64" => ArrayData::I64(
                    raw.chunks_exact(8)
                        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                "u8" => ArrayData::U8(raw.to_vec()),
                other => {
                    return Err(Error::SchemaMismatch(format!("unknown dtype `{other}`")));
                }
            };
            if data.len() != count {
                return Err(Error::SchemaMismatch(format!(
                    "array `{}`: {} elements for shape {:?}",
                    idx.name,
                    data.len(),
                    idx.shape
                )));
            }
            arrays.insert(idx.name, NamedArray { shape: idx.shape, data });
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Like [`Container::read`] but also checks the kind tag.
    pub fn read_kind(path: &Path, kind: &str) -> Result<Self> {
        let c = Self::read(path)?;
        if c.kind != kind {
            return Err(Error::SchemaMismatch(format!(
                "{} holds a `{}` container, expected `{kind}`",
                path.display(),
                c.kind
            )));
        }
        Ok(c)
    }
}

fn pad8(out: &mut Vec<u8>) {
    let padded = out.len().div_ceil(8) * 8;
    out.resize(padded, 0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn byte_roundtrip_is_exact(
            vals in proptest::collection::vec(any::<f64>(), 0..40),
            ints in proptest::collection::vec(any::<i64>(), 0..10),
            flags in proptest::collection::vec(any::<bool>(), 0..13),
        ) {
            let mut c = Container::new("test", serde_json::json!({"b": 1, "a": [1.5, "x"]}));
            c.insert_f64("vals", vec![vals.len()], vals.clone());
            c.insert_i64("ints", ints.clone());
            c.insert_bools("flags", &flags);
            let bytes = c.to_bytes();
            let back = Container::from_bytes(&bytes).unwrap();
            let (_, v) = back.f64s("vals").unwrap();
            prop_assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            vals.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.i64s("ints").unwrap(), &ints[..]);
            prop_assert_eq!(back.bools("flags").unwrap(), flags);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            Container::from_bytes(b"not a container at all"),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn missing_array_is_schema_mismatch() {
        let c = Container::new("x", serde_json::Value::Null);
        assert!(matches!(c.mat("nope"), Err(Error::SchemaMismatch(_))));
    }
}
