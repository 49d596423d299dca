//! Model checkpoints: a flat container of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HDRF"  magic, 4 bytes
//! u32     format version (currently 1)
//! u32     entry count
//! entry*  u16 name length, name (UTF-8),
//!         u8 dtype code (1 = f32, 2 = f64), u8 rank, u32 dims…,
//!         payload (numel × dtype size bytes, little-endian)
//! ```
//!
//! Model configuration rides along as scalar `f64` entries under the
//! reserved `__config.` name prefix, so a checkpoint is self-describing:
//! loading rebuilds the exact architecture without any sidecar file.
//! Save → load → save reproduces the file byte for byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::networks::{HdrPipeline, MaskMode, ModelConfig, ParamSet};
use crate::tensor::{Dtype, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"HDRF";
pub const VERSION: u32 = 1;
/// Name prefix reserved for configuration entries.
pub const CONFIG_PREFIX: &str = "__config.";

/// One named tensor as stored on disk, dtype kept abstract.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl RawEntry {
    pub fn from_tensor<E: Scalar>(name: impl Into<String>, t: &Tensor<E>) -> Self {
        let mut bytes = Vec::with_capacity(t.numel() * E::DTYPE.byte_size());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        RawEntry {
            name: name.into(),
            dtype: E::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    /// Decodes as `E`, erroring on a dtype mismatch — checkpoints are never
    /// silently converted between precisions.
    pub fn to_tensor<E: Scalar>(&self) -> Result<Tensor<E>> {
        if self.dtype != E::DTYPE {
            return Err(Error::Validation(format!(
                "tensor `{}` is stored as {:?}, model runs {:?}",
                self.name, self.dtype, E::DTYPE
            )));
        }
        let size = self.dtype.byte_size();
        let data = self
            .bytes
            .chunks_exact(size)
            .map(E::read_le)
            .collect::<Vec<_>>();
        Ok(Tensor::from_vec(self.shape.clone(), data))
    }

    pub fn scalar_f64(name: impl Into<String>, v: f64) -> Self {
        RawEntry::from_tensor(name, &Tensor::scalar(v))
    }

    pub fn as_f64(&self) -> Result<f64> {
        let t: Tensor<f64> = self.to_tensor()?;
        if !t.is_scalar() {
            return Err(Error::Validation(format!(
                "entry `{}` is not a scalar",
                self.name
            )));
        }
        Ok(t.item())
    }
}

pub fn write_entries(path: &Path, entries: &[RawEntry]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        assert!(name.len() <= u16::MAX as usize, "entry name too long");
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.dtype.code());
        assert!(e.shape.len() <= u8::MAX as usize, "entry rank too large");
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let numel: usize = e.shape.iter().product();
        assert_eq!(e.bytes.len(), numel * e.dtype.byte_size());
        out.extend_from_slice(&e.bytes);
    }
    std::fs::write(path, &out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                self.pos,
                format!("unexpected end of file reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn read_entries(path: &Path) -> Result<Vec<RawEntry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, 0, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            4,
            format!("unsupported checkpoint version {version}, expected {VERSION}"),
        ));
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format(path, r.pos, "entry name is not UTF-8"))?
            .to_string();
        let code_at = r.pos;
        let code = r.u8("dtype code")?;
        let dtype = Dtype::from_code(code).ok_or_else(|| {
            Error::format(path, code_at, format!("unknown dtype code {code}"))
        })?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| {
            Error::format(path, r.pos, format!("absurd shape {shape:?} in `{name}`"))
        })?;
        let payload = r.take(numel * dtype.byte_size(), "payload")?;
        entries.push(RawEntry {
            name,
            dtype,
            shape,
            bytes: payload.to_vec(),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            r.pos,
            format!("{} trailing bytes after last entry", bytes.len() - r.pos),
        ));
    }
    Ok(entries)
}

fn config_entries(config: &ModelConfig) -> Vec<RawEntry> {
    let mut out = vec![
        RawEntry::scalar_f64("__config.width", config.width as f64),
        RawEntry::scalar_f64(
            "__config.motion_compensation",
            config.motion_compensation as u8 as f64,
        ),
    ];
    match config.mask_mode {
        MaskMode::Soft => out.push(RawEntry::scalar_f64("__config.mask_mode", 0.0)),
        MaskMode::Hard { tau } => {
            out.push(RawEntry::scalar_f64("__config.mask_mode", 1.0));
            out.push(RawEntry::scalar_f64("__config.mask_tau", tau));
        }
    }
    out.push(RawEntry::scalar_f64(
        "__config.mask_sharpness",
        config.mask_sharpness,
    ));
    out.push(RawEntry::scalar_f64(
        "__config.attention_temperature",
        config.attention_temperature,
    ));
    out
}

fn parse_config(entries: &[RawEntry]) -> Result<ModelConfig> {
    let get = |key: &str| -> Result<f64> {
        entries
            .iter()
            .find(|e| e.name == key)
            .ok_or_else(|| Error::Validation(format!("checkpoint missing `{key}`")))?
            .as_f64()
    };
    let known = [
        "__config.width",
        "__config.motion_compensation",
        "__config.mask_mode",
        "__config.mask_tau",
        "__config.mask_sharpness",
        "__config.attention_temperature",
    ];
    for e in entries {
        if !known.contains(&e.name.as_str()) {
            return Err(Error::Validation(format!(
                "unknown configuration entry `{}`",
                e.name
            )));
        }
    }
    let mask_mode = match get("__config.mask_mode")? {
        x if x == 0.0 => MaskMode::Soft,
        x if x == 1.0 => MaskMode::Hard {
            tau: get("__config.mask_tau")?,
        },
        other => {
            return Err(Error::Validation(format!(
                "bad mask mode code {other} in checkpoint"
            )))
        }
    };
    Ok(ModelConfig {
        width: get("__config.width")? as usize,
        motion_compensation: get("__config.motion_compensation")? != 0.0,
        mask_mode,
        mask_sharpness: get("__config.mask_sharpness")?,
        attention_temperature: get("__config.attention_temperature")?,
    })
}

/// Saves configuration and all weights.
pub fn save_model<E: Scalar>(
    path: &Path,
    config: &ModelConfig,
    ps: &ParamSet<E>,
) -> Result<()> {
    let mut entries = config_entries(config);
    for (name, tensor) in ps.entries() {
        entries.push(RawEntry::from_tensor(name, tensor));
    }
    write_entries(path, &entries)
}

/// Rebuilds a model exactly as saved: architecture from the embedded
/// configuration, every weight from its entry.
pub fn load_model<E: Scalar>(path: &Path) -> Result<(HdrPipeline, ParamSet<E>)> {
    let entries = read_entries(path)?;
    let (config_raw, params_raw): (Vec<_>, Vec<_>) = entries
        .into_iter()
        .partition(|e| e.name.starts_with(CONFIG_PREFIX));
    let config = parse_config(&config_raw)?;
    let (pipeline, mut ps) = HdrPipeline::with_params::<E>(config);
    let decoded = params_raw
        .iter()
        .map(|e| Ok((e.name.clone(), e.to_tensor::<E>()?)))
        .collect::<Result<Vec<_>>>()?;
    ps.load_entries(&decoded)?;
    Ok((pipeline, ps))
}
