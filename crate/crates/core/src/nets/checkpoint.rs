//! Binary tensor files: checkpoints and optimiser snapshots.
//!
//! Layout (little endian): magic `DOORNSCK`, `u32` format version, `u64`
//! metadata length, metadata JSON, `u32` tensor count, then per tensor a
//! `u32`-prefixed name, `u32` rank, `u64` dims and the raw values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::arch::Arch;
use super::layers::Module;
use super::ns::NsModel;
use super::scalar::Scalar;
use super::vae::VaeModel;
use crate::error::{Error, Result};
use crate::seed::Rng;

const MAGIC: &[u8; 8] = b"DOORNSCK";
const FORMAT_VERSION: u32 = 1;

pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

pub struct TensorFile<T> {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor<T>>,
}

pub fn write_tensor_file<T: Scalar>(
    path: &Path,
    meta: &serde_json::Value,
    tensors: &[(String, &[usize], &[T])],
) -> Result<()> {
    let meta_bytes = serde_json::to_vec(meta).expect("metadata serialises");
    let total: usize = tensors.iter().map(|t| t.2.len()).sum();
    let mut buf = Vec::with_capacity(64 + meta_bytes.len() + total * T::BYTES);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_bytes);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in *shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in *data {
            v.push_le(&mut buf);
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_tensor_file<T: Scalar>(path: &Path) -> Result<TensorFile<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if cur.take(8)? != MAGIC {
        return Err(Error::format(path, "not a tensor file (bad magic)"));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {version}"),
        ));
    }
    let meta_len = cur.u64()? as usize;
    let meta: serde_json::Value =
        serde_json::from_slice(cur.take(meta_len)?).map_err(|e| Error::format(path, e))?;
    if let Some(dtype) = meta.get("dtype").and_then(|d| d.as_str()) {
        if dtype != T::DTYPE {
            return Err(Error::format(
                path,
                format!("stored as {dtype}, requested {}", T::DTYPE),
            ));
        }
    }
    let count = cur.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name =
            String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|e| Error::format(path, e))?;
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n * T::BYTES)?;
        let data = raw.chunks_exact(T::BYTES).map(T::from_le).collect();
        tensors.insert(name, Tensor { shape, data });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    Ok(TensorFile { meta, tensors })
}

/// A model that can be rebuilt from its architecture and checkpointed.
pub trait Model<T: Scalar>: Module<T> + Sized {
    const KIND: &'static str;
    fn arch(&self) -> &Arch;
    fn build(arch: &Arch) -> Result<Self>;

    fn arch_hash(&self) -> String {
        self.arch().hash(Self::KIND, T::DTYPE)
    }
}

impl<T: Scalar> Model<T> for NsModel<T> {
    const KIND: &'static str = "ns";
    fn arch(&self) -> &Arch {
        &self.arch
    }
    fn build(arch: &Arch) -> Result<Self> {
        NsModel::new(arch, &mut Rng::seed_from_u64(0))
    }
}

impl<T: Scalar> Model<T> for VaeModel<T> {
    const KIND: &'static str = "vae";
    fn arch(&self) -> &Arch {
        &self.arch
    }
    fn build(arch: &Arch) -> Result<Self> {
        VaeModel::new(arch, &mut Rng::seed_from_u64(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: String,
    pub dtype: String,
    pub arch: Arch,
    pub arch_hash: String,
    #[serde(default)]
    pub training: serde_json::Value,
}

pub fn save_checkpoint<T: Scalar, M: Model<T>>(
    model: &M,
    path: &Path,
    training: serde_json::Value,
) -> Result<()> {
    let meta = CheckpointMeta {
        kind: M::KIND.into(),
        dtype: T::DTYPE.into(),
        arch: model.arch().clone(),
        arch_hash: model.arch_hash(),
        training,
    };
    let params = model.params();
    let tensors: Vec<_> = params
        .iter()
        .map(|(n, p)| (n.clone(), p.shape.as_slice(), p.value.as_slice()))
        .collect();
    write_tensor_file(path, &serde_json::to_value(&meta).unwrap(), &tensors)
}

/// Copies stored tensors into `model`, rejecting any architecture mismatch.
pub fn restore_checkpoint<T: Scalar, M: Model<T>>(
    model: &mut M,
    path: &Path,
) -> Result<CheckpointMeta> {
    let file = read_tensor_file::<T>(path)?;
    let meta: CheckpointMeta =
        serde_json::from_value(file.meta).map_err(|e| Error::format(path, e))?;
    let expected = model.arch_hash();
    if meta.arch_hash != expected || meta.kind != M::KIND {
        return Err(Error::ArchitectureMismatch {
            expected,
            found: meta.arch_hash,
        });
    }
    copy_tensors(model, &file.tensors, path)?;
    Ok(meta)
}

/// Rebuilds a model from the architecture stored in the checkpoint.
pub fn load_checkpoint<T: Scalar, M: Model<T>>(path: &Path) -> Result<(M, CheckpointMeta)> {
    let file = read_tensor_file::<T>(path)?;
    let meta: CheckpointMeta =
        serde_json::from_value(file.meta).map_err(|e| Error::format(path, e))?;
    let recomputed = meta.arch.hash(&meta.kind, &meta.dtype);
    if meta.kind != M::KIND || recomputed != meta.arch_hash {
        return Err(Error::ArchitectureMismatch {
            expected: meta.arch.hash(M::KIND, T::DTYPE),
            found: meta.arch_hash,
        });
    }
    let mut model = M::build(&meta.arch)?;
    copy_tensors(&mut model, &file.tensors, path)?;
    Ok((model, meta))
}

pub(crate) fn copy_tensors<T: Scalar, M: Module<T>>(
    model: &mut M,
    tensors: &BTreeMap<String, Tensor<T>>,
    path: &Path,
) -> Result<()> {
    let mut params = model.params_mut();
    if params.len() > tensors.len() {
        return Err(Error::format(
            path,
            format!(
                "{} tensors stored, model has {}",
                tensors.len(),
                params.len()
            ),
        ));
    }
    for (name, p) in params.iter_mut() {
        let t = tensors
            .get(name.as_str())
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        if t.shape != p.shape {
            return Err(Error::format(
                path,
                format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape, p.shape
                ),
            ));
        }
        p.value.copy_from_slice(&t.data);
    }
    Ok(())
}
