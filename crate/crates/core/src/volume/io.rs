//! "VOLF" volume files: a raw little-endian `f32` payload in `(z, y, x)`
//! order at `<name>.volf` and a JSON sidecar at `<name>.volf.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{AsiError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    provenance: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_volume(vol: &Volume, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(vol.data().len() * 4);
    for v in vol.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, payload).map_err(|e| AsiError::io(path, e))?;
    let meta = Sidecar {
        dims: vol.dims(),
        spacing_mm: vol.spacing(),
        provenance: vol.provenance.clone(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serialises");
    fs::write(&side, text).map_err(|e| AsiError::io(&side, e))
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| AsiError::io(&side, e))?;
    let meta: Sidecar =
        serde_json::from_str(&text).map_err(|e| AsiError::format(&side, format!("header: {e}")))?;
    let payload = fs::read(path).map_err(|e| AsiError::io(path, e))?;
    let expected = meta.dims.iter().product::<usize>() * 4;
    if payload.len() != expected {
        return Err(AsiError::format(
            path,
            format!(
                "payload has {} bytes, dims {:?} need {expected}",
                payload.len(),
                meta.dims
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Volume::new(meta.dims, data, meta.spacing_mm, meta.provenance).map_err(|e| match e {
        AsiError::NonFinite(m) => AsiError::format(path, format!("non-finite value: {m}")),
        other => AsiError::format(path, other.to_string()),
    })
}
