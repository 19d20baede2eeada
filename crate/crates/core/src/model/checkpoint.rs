//! "ASCK" tensor archives.
//!
//! Layout: the 5-byte magic `ASCK1`, a little-endian `u64` manifest length,
//! the UTF-8 JSON manifest, then the raw little-endian tensor payloads.
//! Manifest offsets are relative to the first payload byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{AsiError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"ASCK1";
pub const KIND_AUTOENCODER: &str = "autoencoder";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub name: String,
    /// `param` or `buffer`.
    pub role: String,
    pub shape: [usize; 4],
    pub dtype: String,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<ArchiveEntry>,
}

/// A loaded archive: manifest plus payload bytes.
#[derive(Debug)]
pub struct Archive {
    pub kind: String,
    pub config: serde_json::Value,
    pub entries: Vec<ArchiveEntry>,
    payload: Vec<u8>,
}

impl Archive {
    pub fn entry(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Decodes a tensor, widening or narrowing if its stored dtype differs.
    pub fn tensor<T: Scalar>(&self, name: &str) -> Option<Tensor<T>> {
        let e = self.entry(name)?;
        let bytes = &self.payload[e.offset as usize..(e.offset + e.nbytes) as usize];
        let data: Vec<T> = match e.dtype.as_str() {
            d if d == T::DTYPE => bytes.chunks_exact(T::BYTES).map(T::read_le).collect(),
            "f32" => bytes
                .chunks_exact(4)
                .map(|b| T::c(f32::read_le(b) as f64))
                .collect(),
            "f64" => bytes
                .chunks_exact(8)
                .map(|b| T::c(f64::read_le(b)))
                .collect(),
            _ => return None,
        };
        Tensor::from_vec(e.shape, data).ok()
    }
}

pub fn write_archive<T: Scalar>(
    path: &Path,
    kind: &str,
    config: serde_json::Value,
    tensors: &[(&str, &str, &Tensor<T>)],
) -> Result<()> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for &(name, role, t) in tensors {
        let offset = payload.len() as u64;
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        entries.push(ArchiveEntry {
            name: name.to_owned(),
            role: role.to_owned(),
            shape: t.shape(),
            dtype: T::DTYPE.to_owned(),
            offset,
            nbytes: payload.len() as u64 - offset,
        });
    }
    let manifest = serde_json::to_vec(&Manifest {
        kind: kind.to_owned(),
        config,
        tensors: entries,
    })
    .map_err(|e| AsiError::format(path, e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    let mut f = fs::File::create(path).map_err(|e| AsiError::io(path, e))?;
    f.write_all(&out).map_err(|e| AsiError::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    let bytes = fs::read(path).map_err(|e| AsiError::io(path, e))?;
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(AsiError::format(path, "missing ASCK1 magic"));
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&bytes[5..13]);
    let mlen = u64::from_le_bytes(len) as usize;
    let body = bytes
        .get(13..13 + mlen)
        .ok_or_else(|| AsiError::format(path, "truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body)
        .map_err(|e| AsiError::format(path, format!("manifest: {e}")))?;
    let payload = bytes[13 + mlen..].to_vec();
    for e in &manifest.tensors {
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(AsiError::format(path, format!("unsupported dtype {other}"))),
        };
        let numel: usize = e.shape.iter().product();
        if e.nbytes as usize != numel * width || (e.offset + e.nbytes) as usize > payload.len() {
            return Err(AsiError::format(
                path,
                format!("byte range of {} is inconsistent", e.name),
            ));
        }
    }
    Ok(Archive {
        kind: manifest.kind,
        config: manifest.config,
        entries: manifest.tensors,
        payload,
    })
}

impl<T: Scalar> ModelParams<T> {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.config).expect("config serialises");
        let mut tensors: Vec<(&str, &str, &Tensor<T>)> = Vec::new();
        tensors.extend(self.params.iter().map(|(k, v)| (k.as_str(), "param", v)));
        tensors.extend(self.buffers.iter().map(|(k, v)| (k.as_str(), "buffer", v)));
        write_archive(path, KIND_AUTOENCODER, config, &tensors)
    }

    /// Loads and verifies that every parameter the architecture expects is
    /// present with the right shape.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let archive = read_archive(path)?;
        if archive.kind != KIND_AUTOENCODER {
            return Err(AsiError::format(
                path,
                format!("archive kind {} is not a model", archive.kind),
            ));
        }
        let config: ModelConfig = serde_json::from_value(archive.config.clone())
            .map_err(|e| AsiError::format(path, format!("config: {e}")))?;
        config.validate()?;
        let (want_p, want_b) = config.manifest();
        let mut params = std::collections::BTreeMap::new();
        let mut buffers = std::collections::BTreeMap::new();
        for (want, dst) in [(&want_p, &mut params), (&want_b, &mut buffers)] {
            for (name, shape) in want {
                let t: Tensor<T> = archive
                    .tensor(name)
                    .ok_or_else(|| AsiError::format(path, format!("missing tensor {name}")))?;
                if t.shape() != *shape {
                    return Err(AsiError::format(
                        path,
                        format!("{name}: expected shape {shape:?}, found {:?}", t.shape()),
                    ));
                }
                if !t.all_finite() {
                    return Err(AsiError::NonFinite(format!("{name} in {}", path.display())));
                }
                dst.insert(name.clone(), t);
            }
        }
        Ok(Self {
            config,
            params,
            buffers,
        })
    }
}
