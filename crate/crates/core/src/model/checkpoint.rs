//! Binary tensor container plus a JSON config sidecar.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "MTHM" | version | tensor count
//! per tensor: name length | UTF-8 name | rank | dims... | f32 LE data
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::numeric::{Parameters, Real, Tensor};

use super::{ModelConfig, ModelError, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MTHM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_tensors<T: Real>(path: &Path, tensors: &[(String, &Tensor<T>)]) -> Result<(), ModelError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&u32_of(tensors.len())?.to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&u32_of(name.len())?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_of(t.rank())?.to_le_bytes())?;
        for &d in t.dims() {
            w.write_all(&u32_of(d)?.to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&(x.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn u32_of(n: usize) -> Result<u32, ModelError> {
    u32::try_from(n).map_err(|_| ModelError::Checkpoint(format!("{n} does not fit in 32 bits")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_tensors<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>, ModelError> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, at: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        if rank > 3 {
            return Err(ModelError::Checkpoint(format!("tensor {name} has rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| ModelError::Checkpoint(format!("tensor {name} is too large")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| ModelError::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    if r.at != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes after the last tensor".into()));
    }
    Ok(out)
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` (tensors) and the config next to it with a `.json` extension.
pub fn save_checkpoint<T: Real>(path: &Path, cfg: &ModelConfig, params: &ModelParams<T>) -> Result<(), ModelError> {
    write_tensors(path, &params.tensors())?;
    fs::write(sidecar(path), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ModelConfig, ModelParams<T>), ModelError> {
    let cfg: ModelConfig = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    cfg.validate()?;
    let mut params = ModelParams::<T>::zeros_for(&cfg)?;
    let mut stored = read_tensors::<T>(path)?;
    let slots = params.tensors_mut();
    if slots.len() != stored.len() {
        return Err(ModelError::Checkpoint(format!("{} tensors stored, {} expected", stored.len(), slots.len())));
    }
    for (name, slot) in slots {
        let idx = stored
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
        let (_, t) = stored.swap_remove(idx);
        if t.dims() != slot.dims() {
            return Err(ModelError::Checkpoint(format!("tensor {name} has dims {:?}, expected {:?}", t.dims(), slot.dims())));
        }
        *slot = t;
    }
    Ok((cfg, params))
}
