//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! "CGUS"                      4 bytes
//! version                     u32
//! header length, header JSON  u32, UTF-8 bytes
//! tensor count                u32
//! per tensor:
//!   name length, name         u32, UTF-8 bytes
//!   dtype tag                 u8   (0 = f32, 1 = f64)
//!   rank                      u8
//!   dims                      rank × u32
//!   data                      row-major scalars
//! ```
//!
//! Optimizer moments are stored as ordinary tensors named `adam.m/<param>`
//! and `adam.v/<param>`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TokenizeMode;
use crate::error::{Error, Result};
use crate::layers::{InitKind, ParamSource};
use crate::model::{Model, ModelConfig};
use crate::tensor::{DType, Scalar, Tensor};
use crate::trainer::AdamState;

pub const MAGIC: &[u8; 4] = b"CGUS";
pub const VERSION: u32 = 1;

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    epoch: u32,
    lr: f64,
    tokenize: TokenizeMode,
    adam: Option<AdamMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamMeta {
    step: u64,
    alpha: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub config: ModelConfig,
    /// Model parameters in registration order.
    pub tensors: Vec<(String, Tensor<T>)>,
    pub adam: Option<AdamState<T>>,
    pub epoch: u32,
    pub lr: f64,
    pub tokenize: TokenizeMode,
}

fn fmt_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(fmt_err(self.pos, format!("truncated {what}: need {n} bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn str(&mut self, what: &str) -> Result<&'a str> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let b = self.take(len, what)?;
        std::str::from_utf8(b).map_err(|_| fmt_err(at, format!("{what} is not UTF-8")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("length fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.tag());
    out.push(u8::try_from(t.rank()).expect("rank fits in u8"));
    for &d in t.shape() {
        put_u32(out, d);
    }
    for &x in t.data() {
        x.write_le(out);
    }
}

/// Dtype of the first tensor in a serialized checkpoint.
pub fn peek_dtype(bytes: &[u8]) -> Result<DType> {
    let mut r = Reader { buf: bytes, pos: 0 };
    read_preamble(&mut r)?;
    if r.u32("tensor count")? == 0 {
        return Err(fmt_err(r.pos, "checkpoint holds no tensors"));
    }
    r.str("tensor name")?;
    let at = r.pos;
    DType::from_tag(r.u8("dtype tag")?).ok_or_else(|| fmt_err(at, "unknown dtype tag"))
}

fn read_preamble(r: &mut Reader<'_>) -> Result<Header> {
    if r.take(4, "magic")? != MAGIC {
        return Err(fmt_err(0, "bad magic, not a checkpoint"));
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(fmt_err(at, format!("unsupported version {version}")));
    }
    let at = r.pos + 4;
    let json = r.str("header")?;
    serde_json::from_str(json).map_err(|e| fmt_err(at, format!("bad header: {e}")))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &Model<T>, epoch: u32, lr: f64, adam: Option<AdamState<T>>) -> Self {
        Checkpoint {
            config: model.config.clone(),
            tensors: model.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
            adam,
            epoch,
            lr,
            tokenize: TokenizeMode::default(),
        }
    }

    /// Rebuilds the model; every parameter must be present with the shape
    /// its config implies.
    pub fn to_model(&self) -> Result<Model<T>> {
        struct Named<'a, T: Scalar> {
            map: HashMap<&'a str, &'a Tensor<T>>,
        }
        impl<T: Scalar> ParamSource<T> for Named<'_, T> {
            fn take(&mut self, name: &str, shape: &[usize], _: InitKind) -> Result<Tensor<T>> {
                let t = self
                    .map
                    .remove(name)
                    .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
                if t.shape() != shape {
                    return Err(Error::Config(format!(
                        "parameter {name}: checkpoint shape {:?}, config expects {shape:?}",
                        t.shape()
                    )));
                }
                Ok(t.clone())
            }
        }
        let mut src = Named {
            map: self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect(),
        };
        if src.map.len() != self.tensors.len() {
            return Err(Error::Config("checkpoint repeats a parameter name".into()));
        }
        let model = Model::build(self.config.clone(), &mut src)?;
        if let Some(extra) = src.map.keys().next() {
            return Err(Error::Config(format!("checkpoint has unknown parameter {extra}")));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.config.clone(),
            epoch: self.epoch,
            lr: self.lr,
            tokenize: self.tokenize,
            adam: self.adam.as_ref().map(|a| AdamMeta {
                step: a.t,
                alpha: a.alpha,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
            }),
        };
        let json = serde_json::to_string(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, json.len());
        out.extend_from_slice(json.as_bytes());
        let adam_count = self.adam.as_ref().map_or(0, |a| a.m.len() + a.v.len());
        put_u32(&mut out, self.tensors.len() + adam_count);
        for (name, t) in &self.tensors {
            put_tensor(&mut out, name, t);
        }
        if let Some(a) = &self.adam {
            for ((name, _), m) in self.tensors.iter().zip(&a.m) {
                put_tensor(&mut out, &format!("{ADAM_M}{name}"), m);
            }
            for ((name, _), v) in self.tensors.iter().zip(&a.v) {
                put_tensor(&mut out, &format!("{ADAM_V}{name}"), v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let header = read_preamble(&mut r)?;
        let count = r.u32("tensor count")? as usize;
        let mut params = Vec::new();
        let mut moments: HashMap<String, Tensor<T>> = HashMap::new();
        for _ in 0..count {
            let name = r.str("tensor name")?.to_string();
            let at = r.pos;
            let dtype = DType::from_tag(r.u8("dtype tag")?)
                .ok_or_else(|| fmt_err(at, "unknown dtype tag"))?;
            if dtype != T::DTYPE {
                return Err(fmt_err(at, format!("tensor {name} is {dtype:?}, expected {:?}", T::DTYPE)));
            }
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dims")? as usize);
            }
            let at = r.pos;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| fmt_err(at, format!("tensor {name}: bad shape {shape:?}")))?;
            let nbytes = numel
                .checked_mul(dtype.size())
                .ok_or_else(|| fmt_err(at, "tensor too large"))?;
            let raw = r.take(nbytes, "tensor data")?;
            let data = raw.chunks_exact(dtype.size()).map(T::read_le).collect();
            let t = Tensor::new(shape, data).map_err(|e| fmt_err(at, e.to_string()))?;
            if name.starts_with(ADAM_M) || name.starts_with(ADAM_V) {
                if moments.insert(name.clone(), t).is_some() {
                    return Err(fmt_err(at, format!("duplicate tensor {name}")));
                }
            } else {
                params.push((name, t));
            }
        }
        if r.pos != bytes.len() {
            return Err(fmt_err(r.pos, "trailing bytes after last tensor"));
        }
        let adam = match header.adam {
            None if moments.is_empty() => None,
            None => return Err(fmt_err(r.pos, "optimizer moments without optimizer header")),
            Some(meta) => {
                let mut m = Vec::with_capacity(params.len());
                let mut v = Vec::with_capacity(params.len());
                for (name, p) in &params {
                    for (prefix, out) in [(ADAM_M, &mut m), (ADAM_V, &mut v)] {
                        let key = format!("{prefix}{name}");
                        let t = moments
                            .remove(&key)
                            .filter(|t| t.shape() == p.shape())
                            .ok_or_else(|| fmt_err(r.pos, format!("missing or misshapen {key}")))?;
                        out.push(t);
                    }
                }
                if let Some(extra) = moments.keys().next() {
                    return Err(fmt_err(r.pos, format!("moment {extra} has no parameter")));
                }
                Some(AdamState {
                    m,
                    v,
                    t: meta.step,
                    alpha: meta.alpha,
                    beta1: meta.beta1,
                    beta2: meta.beta2,
                    eps: meta.eps,
                })
            }
        };
        Ok(Checkpoint {
            config: header.model,
            tensors: params,
            adam,
            epoch: header.epoch,
            lr: header.lr,
            tokenize: header.tokenize,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh() -> Checkpoint<f32> {
        let model = Model::<f32>::new(ModelConfig::tiny(11, 9, 3, 4)).unwrap();
        Checkpoint::from_model(&model, 2, 0.25, Some(AdamState::new(&model.store, 1e-3)))
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = fresh();
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for ((n1, a), (n2, b)) in ck.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert!(a.bit_eq(b));
        }
        back.to_model().unwrap();
    }

    #[test]
    fn corrupt_header_is_a_format_error() {
        let mut bytes = fresh().to_bytes();
        bytes[1] ^= 0xff;
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = fresh().to_bytes();
        bytes[4] = 9;
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn truncation_and_dtype_mismatch() {
        let bytes = fresh().to_bytes();
        let err = Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes), Err(Error::Format { .. })));
        assert_eq!(peek_dtype(&bytes).unwrap(), DType::F32);
    }
}
