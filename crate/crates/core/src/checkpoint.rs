//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "FFCP"
//! version u32      1
//! dtype   u8       0 = f32, 1 = f64
//! digest  u64      config digest the parameters belong to
//! epoch   u32
//! best    f64      best validation mean IoU
//! rng     u64      trainer RNG counter
//! count   u32      number of tensors
//! then per tensor: name_len u32, name bytes (utf-8), ndim u32,
//!                  dims u64 * ndim, payload (little-endian floats)
//! ```
//!
//! Payload bytes round-trip exactly, so a reloaded model reproduces forward
//! outputs bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{DType, Float, Tensor};

const MAGIC: &[u8; 4] = b"FFCP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub config_digest: u64,
    pub epoch: u32,
    pub best_miou: f64,
    pub rng_state: u64,
}

fn dtype_tag(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

pub fn save<E: Float>(path: &Path, store: &ParamStore<E>, meta: &CheckpointMeta) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&[dtype_tag(E::DTYPE)]).map_err(io)?;
    w.write_all(&meta.config_digest.to_le_bytes()).map_err(io)?;
    w.write_all(&meta.epoch.to_le_bytes()).map_err(io)?;
    w.write_all(&meta.best_miou.to_le_bytes()).map_err(io)?;
    w.write_all(&meta.rng_state.to_le_bytes()).map_err(io)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;

    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        let dims = p.value.shape().dims();
        w.write_all(&(dims.len() as u32).to_le_bytes()).map_err(io)?;
        for &d in dims {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        match E::DTYPE {
            DType::F32 => {
                for &v in p.value.data() {
                    w.write_all(&(v.to_f64() as f32).to_le_bytes()).map_err(io)?;
                }
            }
            DType::F64 => {
                for &v in p.value.data() {
                    w.write_all(&v.to_f64().to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

/// Load parameters into a store built from the same configuration; every
/// stored tensor must match an existing parameter's name and shape.
pub fn load<E: Float>(path: &Path, store: &mut ParamStore<E>) -> Result<CheckpointMeta> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: String| Error::data(format!("checkpoint {}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    read_exact(&mut r, path, &mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic, not a checkpoint file".to_string()));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut dtype = [0u8; 1];
    read_exact(&mut r, path, &mut dtype)?;
    if dtype[0] != dtype_tag(E::DTYPE) {
        return Err(bad(format!(
            "stored dtype tag {} does not match requested {}",
            dtype[0],
            E::DTYPE.name()
        )));
    }
    let meta = CheckpointMeta {
        config_digest: read_u64(&mut r, path)?,
        epoch: read_u32(&mut r, path)?,
        best_miou: f64::from_le_bytes(read_array(&mut r, path)?),
        rng_state: read_u64(&mut r, path)?,
    };
    let count = read_u32(&mut r, path)? as usize;
    if count != store.len() {
        return Err(bad(format!("{count} tensors stored, model has {}", store.len())));
    }

    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, path, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("non-utf8 tensor name".to_string()))?;
        let ndim = read_u32(&mut r, path)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u64(&mut r, path)? as usize);
        }
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        match E::DTYPE {
            DType::F32 => {
                for _ in 0..numel {
                    data.push(E::from_f64(f32::from_le_bytes(read_array(&mut r, path)?) as f64));
                }
            }
            DType::F64 => {
                for _ in 0..numel {
                    data.push(E::from_f64(f64::from_le_bytes(read_array(&mut r, path)?)));
                }
            }
        }

        let id = store
            .id_of(&name)
            .ok_or_else(|| bad(format!("tensor {name} not present in the model")))?;
        if store.value(id).shape().dims() != dims {
            return Err(bad(format!(
                "tensor {name}: stored shape {dims:?} vs model shape {:?}",
                store.value(id).shape().dims()
            )));
        }
        store.get_mut(id).value = Tensor::from_vec(dims, data);
    }
    Ok(meta)
}

fn read_exact(r: &mut impl Read, path: &Path, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}

fn read_array<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, path, &mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r, path)?))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r, path)?))
}
