//! Binary parameter container: the magic `FSPCCKPT`, a little-endian `u64`
//! header length, a JSON header, then every tensor as little-endian `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{TensorKind, Tensors};

pub const MAGIC: &[u8; 8] = b"FSPCCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub learnable: bool,
    /// Offset in values (not bytes) from the start of the data section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub data: Vec<f64>,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::MalformedRecord {
        path: "checkpoint".into(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn capture<T: Tensors + ?Sized>(config: serde_json::Value, t: &T) -> Self {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        t.visit("", &mut |name, kind, shape, values| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: shape.to_vec(),
                learnable: kind == TensorKind::Learnable,
                offset: data.len(),
            });
            data.extend_from_slice(values);
        });
        Self {
            config,
            tensors,
            data,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            tensors: self.tensors.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len])?;
        if header.format_version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let raw = &body[len..];
        if !raw.len().is_multiple_of(8) {
            return Err(corrupt("data section is not a whole number of values"));
        }
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            if t.offset + n > data.len() {
                return Err(corrupt(format!("tensor {} runs past the data", t.name)));
            }
        }
        Ok(Self {
            config: header.config,
            tensors: header.tensors,
            data,
        })
    }

    /// Copies stored values into `t`. Names and shapes must match exactly.
    pub fn restore_into<T: Tensors + ?Sized>(&self, t: &mut T) -> Result<()> {
        let index: BTreeMap<&str, &TensorEntry> =
            self.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
        let mut seen = 0;
        let mut err = None;
        t.visit_mut("", &mut |name, _, shape, values| {
            if err.is_some() {
                return;
            }
            match index.get(name) {
                Some(e) if e.shape == shape => {
                    values.copy_from_slice(&self.data[e.offset..e.offset + values.len()]);
                    seen += 1;
                }
                Some(e) => {
                    err = Some(corrupt(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        e.shape
                    )))
                }
                None => err = Some(corrupt(format!("tensor {name} is missing"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != self.tensors.len() {
            return Err(corrupt("checkpoint holds tensors the model does not have"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::MalformedRecord { reason, .. } => Error::MalformedRecord {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::backbone::{Dense, Norm};

    #[test]
    fn round_trip_preserves_bits() {
        let d = Dense {
            weight: array![[1.5, -0.0], [f64::MIN_POSITIVE, 3.0e300]],
            bias: array![0.1, -0.2],
        };
        let ck = Checkpoint::capture(serde_json::json!({"a": 1}), &d);
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let mut target = Dense {
            weight: array![[0.0, 0.0], [0.0, 0.0]],
            bias: array![0.0, 0.0],
        };
        back.restore_into(&mut target).unwrap();
        assert_eq!(
            target.weight.mapv(f64::to_bits),
            d.weight.mapv(f64::to_bits)
        );
        assert_eq!(target.bias, d.bias);
    }

    #[test]
    fn buffers_are_stored_and_flagged() {
        let mut n = Norm::new(2);
        n.running_var[1] = 4.0;
        let ck = Checkpoint::capture(serde_json::Value::Null, &n);
        let names: Vec<(&str, bool)> = ck
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t.learnable))
            .collect();
        assert!(names.contains(&("running_var", false)));
        assert!(names.contains(&("gamma", true)));
    }

    #[test]
    fn mismatches_are_rejected() {
        let d = Dense {
            weight: array![[1.0, 2.0]],
            bias: array![0.0],
        };
        let ck = Checkpoint::capture(serde_json::Value::Null, &d);
        let mut wrong = Dense {
            weight: array![[1.0], [2.0]],
            bias: array![0.0, 0.0],
        };
        assert!(ck.restore_into(&mut wrong).is_err());
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT\0\0\0\0\0\0\0\0").is_err());
    }
}
