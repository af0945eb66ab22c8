//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 8                | magic `SPKSPARS`                          |
//! | 4                | format version (`u32`, currently 1)       |
//! | 4                | header length `h` (`u32`)                 |
//! | `h`              | UTF-8 JSON header                         |
//! | payload          | arrays in header order, LE IEEE-754/`u32` |
//! | 4                | CRC-32 of every preceding byte            |
//!
//! The header carries the container kind (`dnn` or `snn`), the model spec,
//! free-form metadata and the name, dtype and shape of every array.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerParams, ModelParams, ModelSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPKSPARS";
pub const VERSION: u32 = 1;

/// Training provenance stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub reg: String,
    pub lambda: f64,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData<T> {
    Real(Vec<T>),
    Count(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData<T>,
}

impl<T: Scalar> NamedArray<T> {
    pub fn real(name: impl Into<String>, t: &Tensor<T>) -> Self {
        NamedArray {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: ArrayData::Real(t.data().to_vec()),
        }
    }

    pub fn counts(name: impl Into<String>, shape: Vec<usize>, data: Vec<u32>) -> Self {
        NamedArray {
            name: name.into(),
            shape,
            data: ArrayData::Count(data),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        match &self.data {
            ArrayData::Real(v) => Tensor::new(self.shape.clone(), v.clone()),
            ArrayData::Count(_) => Err(Error::dim(format!("array {} holds counts, not reals", self.name))),
        }
    }

    pub fn as_counts(&self) -> Result<&[u32]> {
        match &self.data {
            ArrayData::Count(v) => Ok(v),
            ArrayData::Real(_) => Err(Error::dim(format!("array {} holds reals, not counts", self.name))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    spec: ModelSpec,
    metadata: Metadata,
    #[serde(default)]
    extra: serde_json::Value,
    arrays: Vec<ArrayHeader>,
}

/// Everything stored in one checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container<T> {
    pub kind: String,
    pub spec: ModelSpec,
    pub metadata: Metadata,
    pub extra: serde_json::Value,
    pub arrays: Vec<NamedArray<T>>,
}

impl<T: Scalar> Container<T> {
    pub fn array(&self, name: &str) -> Result<&NamedArray<T>> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Input(format!("checkpoint has no array '{name}'")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            spec: self.spec.clone(),
            metadata: self.metadata.clone(),
            extra: self.extra.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayHeader {
                    name: a.name.clone(),
                    dtype: match a.data {
                        ArrayData::Real(_) => T::DTYPE.to_string(),
                        ArrayData::Count(_) => "u32".to_string(),
                    },
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            match &a.data {
                ArrayData::Real(v) => v.iter().for_each(|x| x.write_le(&mut out)),
                ArrayData::Count(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |msg: String| Error::format(path, msg);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(fail("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}, expected {VERSION}")));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        let header_bytes = body
            .get(16..16 + hlen)
            .ok_or_else(|| fail("header truncated".into()))?;
        let header: Header = serde_json::from_slice(header_bytes).map_err(|e| fail(format!("bad header: {e}")))?;
        let mut pos = 16 + hlen;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in header.arrays {
            let n: usize = a.shape.iter().product();
            let data = if a.dtype == T::DTYPE {
                let raw = body
                    .get(pos..pos + n * T::BYTES)
                    .ok_or_else(|| fail(format!("array {} truncated", a.name)))?;
                pos += n * T::BYTES;
                ArrayData::Real(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
            } else if a.dtype == "u32" {
                let raw = body
                    .get(pos..pos + n * 4)
                    .ok_or_else(|| fail(format!("array {} truncated", a.name)))?;
                pos += n * 4;
                ArrayData::Count(
                    raw.chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                )
            } else {
                return Err(fail(format!("array {} has dtype {}, expected {}", a.name, a.dtype, T::DTYPE)));
            };
            arrays.push(NamedArray {
                name: a.name,
                shape: a.shape,
                data,
            });
        }
        if pos != body.len() {
            return Err(fail(format!("{} trailing payload bytes", body.len() - pos)));
        }
        Ok(Container {
            kind: header.kind,
            spec: header.spec,
            metadata: header.metadata,
            extra: header.extra,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // Write-then-rename so a crash never leaves a half-written checkpoint.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    params: &ModelParams<T>,
    spec: &ModelSpec,
    metadata: &Metadata,
) -> Result<()> {
    params.check_against(spec)?;
    let mut arrays = Vec::new();
    for l in &params.layers {
        arrays.push(NamedArray::real(format!("{}.weight", l.name), &l.weight));
        arrays.push(NamedArray::real(format!("{}.bias", l.name), &l.bias));
    }
    Container {
        kind: "dnn".into(),
        spec: spec.clone(),
        metadata: metadata.clone(),
        extra: serde_json::Value::Null,
        arrays,
    }
    .write(path.as_ref())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelParams<T>, ModelSpec, Metadata)> {
    let path = path.as_ref();
    let c = Container::<T>::read(path)?;
    if c.kind != "dnn" {
        return Err(Error::format(path, format!("expected a dnn checkpoint, found '{}'", c.kind)));
    }
    if c.arrays.len() % 2 != 0 {
        return Err(Error::format(path, "unpaired weight/bias arrays"));
    }
    let mut layers = Vec::new();
    for pair in c.arrays.chunks_exact(2) {
        let name = pair[0]
            .name
            .strip_suffix(".weight")
            .ok_or_else(|| Error::format(path, format!("unexpected array {}", pair[0].name)))?;
        layers.push(LayerParams {
            name: name.to_string(),
            weight: pair[0].to_tensor()?,
            bias: pair[1].to_tensor()?,
        });
    }
    let params = ModelParams { layers };
    params.check_against(&c.spec)?;
    Ok((params, c.spec, c.metadata))
}
