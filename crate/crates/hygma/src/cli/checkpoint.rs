//! Little-endian binary checkpoints.
//!
//! Layout: 4 magic bytes `HYGM`, `u32` format version, `u32` tensor count,
//! then per tensor: `u32` name length, UTF-8 name bytes, `u32` rank, `u64`
//! per dimension, and the row-major `f64` payload. Everything little-endian.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::{ParamSet, Tensor};

use super::CliError;

const MAGIC: &[u8; 4] = b"HYGM";
const FORMAT_VERSION: u32 = 1;

/// Writes every parameter tensor, in parameter-set order.
pub fn save_checkpoint(path: &Path, ps: &ParamSet) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(ps.len() as u32).to_le_bytes())?;
    for p in ps.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], CliError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| truncated())?;
    Ok(buf)
}

fn truncated() -> CliError {
    CliError::Checkpoint("file truncated".into())
}

/// Loads a checkpoint into an existing parameter set whose layout defines
/// the expected names and shapes. Any mismatch — unknown or missing tensor,
/// wrong shape — is rejected.
pub fn load_checkpoint(path: &Path, ps: &mut ParamSet) -> Result<(), CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    if &read_exact::<4>(&mut r)? != MAGIC {
        return Err(CliError::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(CliError::Checkpoint(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let mut entries: HashMap<String, Tensor> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| truncated())?;
        let name = String::from_utf8(name)
            .map_err(|_| CliError::Checkpoint("non-UTF-8 tensor name".into()))?;
        let rank = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_exact::<8>(&mut r)?));
        }
        let tensor = Tensor::from_vec(data, &shape)
            .map_err(|e| CliError::Checkpoint(format!("tensor {name}: {e}")))?;
        if entries.insert(name.clone(), tensor).is_some() {
            return Err(CliError::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if count != ps.len() {
        return Err(CliError::Checkpoint(format!(
            "checkpoint holds {count} tensors, model expects {}",
            ps.len()
        )));
    }
    for p in ps.iter_mut() {
        let stored = entries
            .get(&p.name)
            .ok_or_else(|| CliError::Checkpoint(format!("missing tensor {}", p.name)))?;
        if stored.shape() != p.value.shape() {
            return Err(CliError::Checkpoint(format!(
                "tensor {}: shape {:?} does not match model shape {:?}",
                p.name,
                stored.shape(),
                p.value.shape()
            )));
        }
        p.value.data_mut().copy_from_slice(stored.data());
    }
    Ok(())
}
