//! Checkpoint files: magic "SRCK0001", a JSON config block (u32 length +
//! UTF-8 bytes), u32 tensor count, then per tensor a u32 name length, the
//! UTF-8 name, u32 rank, u32 extents and the little-endian f64 payload.
//! Discriminator parameters share the file under a "disc." name prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::{DecoderConfig, EncoderConfig, ModelError};
use crate::diffcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRCK0001";

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub disc_hidden: usize,
    pub step: usize,
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| ModelError::Truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    meta: &CheckpointMeta,
    stores: &[(&str, &ParamStore)],
) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let config = serde_json::to_vec(meta)?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    let count: usize = stores.iter().map(|(_, s)| s.len()).sum();
    w.write_all(&(count as u32).to_le_bytes())?;
    for (prefix, store) in stores {
        for (name, tensor) in store.iter() {
            let full = format!("{prefix}{name}");
            w.write_all(&(full.len() as u32).to_le_bytes())?;
            w.write_all(full.as_bytes())?;
            w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
            for &e in tensor.shape() {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            let mut bytes = Vec::with_capacity(tensor.numel() * 8);
            for &v in tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(CheckpointMeta, Vec<(String, Tensor)>), ModelError> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| ModelError::Truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let config_len = read_u32(&mut r)? as usize;
    let mut config = vec![0u8; config_len];
    r.read_exact(&mut config).map_err(|_| ModelError::Truncated)?;
    let meta: CheckpointMeta = serde_json::from_slice(&config)?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| ModelError::Truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| ModelError::BadConfig("non-UTF-8 parameter name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(|_| ModelError::Truncated)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data).expect("checkpoint extents")));
    }
    Ok((meta, tensors))
}

/// Copy checkpoint tensors carrying `prefix` into `store`, stripping the
/// prefix. Every store parameter must be present at the right shape.
pub fn restore_into(
    store: &mut ParamStore,
    tensors: &[(String, Tensor)],
    prefix: &str,
) -> Result<(), ModelError> {
    for i in 0..store.len() {
        let name = store.name(i).to_string();
        let full = format!("{prefix}{name}");
        let found = tensors
            .iter()
            .find(|(n, _)| n == &full)
            .ok_or_else(|| ModelError::MissingParam { name: full.clone() })?;
        if found.1.shape() != store.tensor(i).shape() {
            return Err(ModelError::ParamShape {
                name: full,
                stored: found.1.shape().to_vec(),
                expected: store.tensor(i).shape().to_vec(),
            });
        }
        *store.tensor_mut(i) = found.1.clone();
    }
    Ok(())
}
