//! Versioned checkpoint container.
//!
//! Layout: magic `VXCK`, format version (u32 LE), header length (u64 LE),
//! JSON header, then every tensor's entries as little-endian f64 in header
//! order, then a SHA-256 digest of all preceding bytes.
//!
//! The header stores arbitrary serde state with every tensor lifted out
//! into the binary payload, so floats in tensors round-trip bit-exactly.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VXCK";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const TENSOR_REF: &str = "$tensor";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub env_step: u64,
    pub rng: ChaCha8Rng,
    /// Serialized state with tensors replaced by references into `tensors`.
    pub state: Value,
    pub tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    env_step: u64,
    rng: ChaCha8Rng,
    state: Value,
    shapes: Vec<[usize; 2]>,
}

fn is_tensor(m: &Map<String, Value>) -> bool {
    m.len() == 2 && m.get("shape").is_some_and(Value::is_array) && m.get("data").is_some_and(Value::is_array)
}

fn lift(v: &mut Value, out: &mut Vec<Tensor>) -> Result<()> {
    match v {
        Value::Object(m) if is_tensor(m) => {
            let t: Tensor = serde_json::from_value(Value::Object(std::mem::take(m)))?;
            *v = serde_json::json!({ TENSOR_REF: out.len() });
            out.push(t);
        }
        Value::Object(m) => {
            for x in m.values_mut() {
                lift(x, out)?;
            }
        }
        Value::Array(a) => {
            for x in a {
                lift(x, out)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn lower(v: &mut Value, tensors: &[Tensor]) -> Result<()> {
    match v {
        Value::Object(m) if m.len() == 1 && m.contains_key(TENSOR_REF) => {
            let i = m[TENSOR_REF].as_u64().ok_or_else(|| Error::Data("bad tensor reference".into()))? as usize;
            let t = tensors.get(i).ok_or_else(|| Error::Data(format!("tensor reference {i} out of range")))?;
            *v = serde_json::to_value(t)?;
        }
        Value::Object(m) => {
            for x in m.values_mut() {
                lower(x, tensors)?;
            }
        }
        Value::Array(a) => {
            for x in a {
                lower(x, tensors)?;
            }
        }
        _ => {}
    }
    Ok(())
}

impl Checkpoint {
    pub fn pack<T: Serialize>(config_hash: &str, env_step: u64, rng: &ChaCha8Rng, state: &T) -> Result<Self> {
        let mut value = serde_json::to_value(state)?;
        let mut tensors = Vec::new();
        lift(&mut value, &mut tensors)?;
        Ok(Self { config_hash: config_hash.to_string(), env_step, rng: rng.clone(), state: value, tensors })
    }

    pub fn unpack<T: DeserializeOwned>(&self) -> Result<T> {
        let mut value = self.state.clone();
        lower(&mut value, &self.tensors)?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config_hash: self.config_hash.clone(),
            env_step: self.env_step,
            rng: self.rng.clone(),
            state: self.state.clone(),
            shapes: self.tensors.iter().map(Tensor::shape).collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let payload: usize = self.tensors.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * payload + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |offset: usize, reason: &str| Error::Integrity { offset: offset as u64, reason: reason.into() };
        if bytes.len() < 16 + DIGEST_LEN {
            return Err(bad(bytes.len(), "file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad(0, "bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(4, &format!("unsupported version {version}")));
        }
        let body = bytes.len() - DIGEST_LEN;
        if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
            return Err(bad(body, "digest mismatch (truncated or corrupt)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hend = 16usize.checked_add(hlen).filter(|&e| e <= body).ok_or_else(|| bad(8, "header length past end"))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| bad(16, &e.to_string()))?;
        let need: usize = header.shapes.iter().map(|[r, c]| r * c).sum();
        if body - hend != 8 * need {
            return Err(bad(hend, &format!("payload holds {} bytes, header needs {}", body - hend, 8 * need)));
        }
        let mut pos = hend;
        let mut tensors = Vec::with_capacity(header.shapes.len());
        for &[r, c] in &header.shapes {
            let data = bytes[pos..pos + 8 * r * c]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::new(r, c, data).map_err(|_| bad(pos, "bad tensor shape"))?);
            pos += 8 * r * c;
        }
        Ok(Self { config_hash: header.config_hash, env_step: header.env_step, rng: header.rng, state: header.state, tensors })
    }
}

/// Writes atomically via a temporary sibling file.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = ck.to_bytes()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads and verifies a checkpoint; a mismatching config hash is an error
/// when `expected_hash` is given.
pub fn load_checkpoint(path: &Path, expected_hash: Option<&str>) -> Result<Checkpoint> {
    let ck = Checkpoint::from_bytes(&std::fs::read(path)?)?;
    if let Some(h) = expected_hash {
        if h != ck.config_hash {
            return Err(Error::Data(format!("config hash mismatch: file {} vs expected {h}", ck.config_hash)));
        }
    }
    Ok(ck)
}
