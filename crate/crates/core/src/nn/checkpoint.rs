//! Binary checkpoint format.
//!
//! ```text
//! "DSSL" | version u32 | count u32 | { name_len u32 | name | rank u32 | dims u32.. | f32 data.. }*
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::config::ModelConfig;
use crate::nn::model::Model;
use crate::nn::params::{model_layout, ModelParams};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"DSSL";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_params<T: Scalar, W: Write>(mut w: W, params: &ModelParams<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * t.len());
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads tensors without checking them against any configuration.
pub fn read_params<T: Scalar, R: Read>(mut r: R) -> Result<ModelParams<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Schema("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Schema(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut tensors = IndexMap::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Schema("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; 4 * n];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
            return Err(Error::Schema(format!("duplicate tensor '{name}' in checkpoint")));
        }
    }
    Ok(ModelParams::from_tensors(tensors))
}

pub fn save<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_params(&mut buf, params)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, buf)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Loads a checkpoint and validates its exact name set and shapes against `config`.
pub fn load<T: Scalar>(path: &Path, config: &ModelConfig) -> Result<Model<T>> {
    let params = read_params(fs::File::open(path)?)?;
    config.validate()?;
    params.validate_layout(&model_layout(config))?;
    Ok(Model { config: config.clone(), params })
}
