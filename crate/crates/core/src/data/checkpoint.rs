//! Checkpoint persistence: a one-line JSON manifest followed by a raw
//! little-endian f64 blob.
//!
//! The manifest pins the format version, model dimensions, observation
//! kind, factoring flag, and one entry per tensor `{name, rows, cols,
//! dtype, offset}` with `offset` counted in f64 elements from the start
//! of the blob. Loading validates the version first, then every tensor's
//! dtype, bounds, and shape, so a truncated or hand-edited file fails
//! with a message naming the offending tensor.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dims::{Dims, ObsKind};
use crate::error::{Error, Result};
use crate::nvil::BaselineParams;
use crate::params::{DeepParams, DeepRecognition, TensorMap};
use crate::semi::ClassifierParams;

use super::NormStats;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    dtype: String,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    dims: Dims,
    obs_kind: ObsKind,
    factored: bool,
    tensors: Vec<TensorEntry>,
}

/// Everything a run needs to resume: dimensions, flags, and a flat
/// name-to-tensor map covering whichever components were saved.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub dims: Dims,
    pub obs: ObsKind,
    pub factored: bool,
    pub tensors: BTreeMap<String, Array2<f64>>,
}

impl Checkpoint {
    pub fn from_parts(
        dims: Dims,
        obs: ObsKind,
        factored: bool,
        parts: &[&dyn TensorMap],
    ) -> Self {
        let mut tensors = BTreeMap::new();
        for p in parts {
            tensors.extend(p.to_tensor_map());
        }
        Checkpoint { dims, obs, factored, tensors }
    }

    pub fn insert_norm_stats(&mut self, stats: &NormStats) {
        let m = stats.mean.len();
        let row = |v: &ndarray::Array1<f64>| {
            Array2::from_shape_fn((1, m), |(_, i)| v[i])
        };
        self.tensors.insert("norm/mean".into(), row(&stats.mean));
        self.tensors.insert("norm/std".into(), row(&stats.std));
        self.tensors.insert(
            "norm/passthrough".into(),
            Array2::from_shape_fn((1, m), |(_, i)| if stats.passthrough[i] { 1.0 } else { 0.0 }),
        );
    }

    pub fn norm_stats(&self) -> Option<NormStats> {
        let mean = self.tensors.get("norm/mean")?;
        let std = self.tensors.get("norm/std")?;
        let pass = self.tensors.get("norm/passthrough")?;
        Some(NormStats {
            mean: mean.row(0).to_owned(),
            std: std.row(0).to_owned(),
            passthrough: pass.row(0).iter().map(|&x| x != 0.0).collect(),
        })
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.keys().any(|k| k.starts_with(prefix))
    }

    /// Rebuild the generative stack (base layer plus any upper layers).
    pub fn build_deep(&self) -> Result<DeepParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = DeepParams::init(&self.dims, self.obs, self.factored, &mut rng)?;
        params.load_tensors(&self.tensors)?;
        Ok(params)
    }

    /// Rebuild the recognition stack, if one was saved.
    pub fn build_deep_recognition(&self) -> Result<Option<DeepRecognition>> {
        if !self.has_prefix("recognition/") {
            return Ok(None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rec = DeepRecognition::init(&self.dims, self.factored, &mut rng)?;
        rec.load_tensors(&self.tensors)?;
        Ok(Some(rec))
    }

    /// Rebuild the baseline network, if one was saved; its sizes come
    /// from the stored tensor shapes.
    pub fn build_baseline(&self) -> Result<Option<BaselineParams>> {
        let w1 = match self.tensors.get("baseline/w1") {
            Some(w1) => w1,
            None => return Ok(None),
        };
        let (hidden, input) = w1.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bl = BaselineParams::init(input, hidden, &mut rng)?;
        bl.load_tensors(&self.tensors)?;
        Ok(Some(bl))
    }

    /// Rebuild the style classifier, if one was saved.
    pub fn build_classifier(&self) -> Result<Option<ClassifierParams>> {
        let w = match self.tensors.get("classifier/w") {
            Some(w) => w,
            None => return Ok(None),
        };
        let (styles, input) = w.dim();
        let mut c = ClassifierParams::init(styles, input);
        c.load_tensors(&self.tensors)?;
        Ok(Some(c))
    }
}

/// Write the manifest line and the tensor blob.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    let mut offset = 0usize;
    for (name, t) in &ckpt.tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            rows: t.nrows(),
            cols: t.ncols(),
            dtype: "f64".into(),
            offset,
        });
        offset += t.len();
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dims: ckpt.dims.clone(),
        obs_kind: ckpt.obs,
        factored: ckpt.factored,
        tensors: entries,
    };
    let mut buf = serde_json::to_vec(&manifest)
        .map_err(|e| Error::format(path.display().to_string(), format!("manifest encode: {e}")))?;
    buf.push(b'\n');
    for t in ckpt.tensors.values() {
        for row in t.rows() {
            for &x in row.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read, validate, and reassemble a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path.display().to_string(), "missing manifest line"))?;

    let header: serde_json::Value = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::format(path.display().to_string(), format!("manifest parse: {e}")))?;
    let version = header
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::format(path.display().to_string(), "manifest lacks format_version"))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::format(
            path.display().to_string(),
            format!("format version {version} is not supported (expected {FORMAT_VERSION})"),
        ));
    }
    let manifest: Manifest = serde_json::from_value(header)
        .map_err(|e| Error::format(path.display().to_string(), format!("manifest parse: {e}")))?;
    manifest.dims.validate()?;

    let blob = &bytes[newline + 1..];
    if blob.len() % 8 != 0 {
        return Err(Error::format(
            path.display().to_string(),
            format!("blob length {} is not a multiple of 8", blob.len()),
        ));
    }
    let total = blob.len() / 8;
    let mut tensors = BTreeMap::new();
    for e in &manifest.tensors {
        if e.dtype != "f64" {
            return Err(Error::format(
                path.display().to_string(),
                format!("tensor {}: unsupported dtype {}", e.name, e.dtype),
            ));
        }
        let len = e.rows * e.cols;
        if e.offset + len > total {
            return Err(Error::format(
                path.display().to_string(),
                format!(
                    "tensor {}: needs elements {}..{} but blob holds {total}",
                    e.name,
                    e.offset,
                    e.offset + len
                ),
            ));
        }
        let mut flat = Vec::with_capacity(len);
        for i in 0..len {
            let at = (e.offset + i) * 8;
            let mut raw = [0u8; 8];
            raw.copy_from_slice(&blob[at..at + 8]);
            flat.push(f64::from_le_bytes(raw));
        }
        let t = Array2::from_shape_vec((e.rows, e.cols), flat)
            .map_err(|err| Error::format(path.display().to_string(), format!("tensor {}: {err}", e.name)))?;
        if tensors.insert(e.name.clone(), t).is_some() {
            return Err(Error::format(
                path.display().to_string(),
                format!("tensor {} appears twice in the manifest", e.name),
            ));
        }
    }
    Ok(Checkpoint {
        dims: manifest.dims,
        obs: manifest.obs_kind,
        factored: manifest.factored,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_checkpoint(factored: bool) -> Checkpoint {
        let mut dims = Dims::new(3, 4, 2, 2, 2);
        dims.layers.push(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = DeepParams::init(&dims, ObsKind::Real, factored, &mut rng).unwrap();
        let rec = DeepRecognition::init(&dims, factored, &mut rng).unwrap();
        let bl = BaselineParams::init(dims.visible * dims.order + dims.styles, 5, &mut rng)
            .unwrap();
        Checkpoint::from_parts(dims, ObsKind::Real, factored, &[&params, &rec, &bl])
    }

    #[test]
    fn round_trip_is_bit_exact_and_rebuildable() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.fctsbn");
        let ckpt = sample_checkpoint(true);
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.tensors.len(), back.tensors.len());
        for (name, t) in &ckpt.tensors {
            assert_eq!(t, back.tensors.get(name).unwrap(), "{name}");
        }
        let params = back.build_deep().unwrap();
        assert_eq!(params.to_tensor_map(), ckpt.build_deep().unwrap().to_tensor_map());
        assert!(back.build_deep_recognition().unwrap().is_some());
        assert!(back.build_baseline().unwrap().is_some());
    }

    #[test]
    fn version_bump_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.fctsbn");
        save_checkpoint(&path, &sample_checkpoint(false)).unwrap();
        let bytes = fs::read(&path).unwrap();
        let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
        let head = std::str::from_utf8(&bytes[..newline]).unwrap();
        let patched = head.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert_ne!(head, patched);
        let mut out = patched.into_bytes();
        out.extend_from_slice(&bytes[newline..]);
        fs::write(&path, out).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn shape_edit_is_rejected_naming_the_tensor() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.fctsbn");
        save_checkpoint(&path, &sample_checkpoint(false)).unwrap();
        let bytes = fs::read(&path).unwrap();
        // Grow one tensor's row count so the blob no longer fits; patch
        // the header bytes only, leaving the binary blob untouched.
        let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
        let head = std::str::from_utf8(&bytes[..newline]).unwrap();
        let needle = "\"name\":\"model/b\",\"rows\":4";
        assert!(head.contains(needle));
        let patched = head.replacen(needle, "\"name\":\"model/b\",\"rows\":4000", 1);
        let mut out = patched.into_bytes();
        out.extend_from_slice(&bytes[newline..]);
        fs::write(&path, out).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("model/b"), "{err}");
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.fctsbn");
        save_checkpoint(&path, &sample_checkpoint(false)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn norm_stats_round_trip_through_tensors() {
        let mut ckpt = sample_checkpoint(false);
        let stats = NormStats {
            mean: ndarray::array![1.0, -2.0, 0.5],
            std: ndarray::array![2.0, 1.0, 3.0],
            passthrough: vec![false, true, false],
        };
        ckpt.insert_norm_stats(&stats);
        let back = ckpt.norm_stats().unwrap();
        assert_eq!(back, stats);
    }

    #[test]
    fn load_rejects_missing_tensors_when_rebuilding() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.fctsbn");
        let mut ckpt = sample_checkpoint(false);
        ckpt.tensors.remove("model/w1/s0");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let err = back.build_deep().unwrap_err().to_string();
        assert!(err.contains("model/w1/s0"), "{err}");
    }
}
