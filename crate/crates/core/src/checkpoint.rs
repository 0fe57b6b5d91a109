//! Parameter checkpoints: a flat little-endian `f64` container plus a JSON
//! manifest of tensor shapes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub level: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: String,
    pub tensors: Vec<TensorEntry>,
    /// Anything the caller wants to keep next to the weights.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn encode(params: &ModelParams) -> (Vec<u8>, Vec<TensorEntry>) {
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    for (level, t) in params.tensors() {
        entries.push(TensorEntry {
            level,
            rows: t.rows(),
            cols: t.cols(),
        });
        for v in t.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    (bytes, entries)
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`.
pub fn save(
    dir: &Path,
    stem: &str,
    model: &str,
    params: &ModelParams,
    extra: serde_json::Value,
) -> Result<()> {
    let (bytes, tensors) = encode(params);
    std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    let manifest = CheckpointManifest {
        model: model.to_string(),
        tensors,
        extra,
    };
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Fills `template` (shaped by the model spec) from a saved checkpoint.
pub fn load(dir: &Path, stem: &str, template: &mut ModelParams) -> Result<CheckpointManifest> {
    let manifest_path = dir.join(format!("{stem}.json"));
    let manifest: CheckpointManifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
    let parse_err = |detail: String| Error::Parse {
        path: manifest_path.clone(),
        detail,
    };
    let mut tensors = template.tensors_mut();
    if tensors.len() != manifest.tensors.len() {
        return Err(parse_err(format!(
            "{} tensors saved, model has {}",
            manifest.tensors.len(),
            tensors.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for (i, ((level, t), e)) in tensors.iter_mut().zip(&manifest.tensors).enumerate() {
        if (*level, t.rows(), t.cols()) != (e.level, e.rows, e.cols) {
            return Err(parse_err(format!(
                "tensor {i} shape differs from the model"
            )));
        }
        for slot in t.as_mut_slice() {
            *slot = values
                .next()
                .ok_or_else(|| parse_err("weight file is truncated".into()))?;
        }
    }
    if values.next().is_some() || bytes.len() % 8 != 0 {
        return Err(parse_err("weight file has trailing data".into()));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ensemble::{ModelKind, ModelSpec};
    use crate::gcn::GcnSpec;
    use crate::graph::{laplacian, make_grid};
    use crate::rng::seeded;

    fn spec() -> ModelSpec {
        let z = Arc::new(laplacian(&make_grid(3, 3).unwrap()));
        let a = GcnSpec::new(Arc::clone(&z), vec![3, 2], vec![4, 1]).unwrap();
        let b = GcnSpec::new(z, vec![2], vec![1]).unwrap();
        ModelSpec::new(
            "pair",
            ModelKind::PlainEnsemble,
            vec![a, b],
            vec![],
            false,
            2,
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec();
        let params = spec.init(&mut seeded(1));
        save(
            dir.path(),
            "ckpt",
            "pair",
            &params,
            serde_json::json!({"seed": 1}),
        )
        .unwrap();
        let mut loaded = spec.init(&mut seeded(2));
        assert_ne!(loaded, params);
        let manifest = load(dir.path(), "ckpt", &mut loaded).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(manifest.model, "pair");
        assert_eq!(manifest.extra["seed"], 1);
    }

    #[test]
    fn rejects_truncated_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec();
        let params = spec.init(&mut seeded(1));
        save(dir.path(), "ckpt", "pair", &params, serde_json::Value::Null).unwrap();
        let bin = dir.path().join("ckpt.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load(dir.path(), "ckpt", &mut spec.init(&mut seeded(3))).is_err());
        std::fs::write(&bin, [bytes.as_slice(), &[0u8; 8]].concat()).unwrap();
        assert!(load(dir.path(), "ckpt", &mut spec.init(&mut seeded(3))).is_err());

        let z = Arc::new(laplacian(&make_grid(3, 3).unwrap()));
        let other = ModelSpec::new(
            "one",
            ModelKind::PlainEnsemble,
            vec![GcnSpec::new(z, vec![3], vec![1]).unwrap()],
            vec![],
            false,
            2,
        )
        .unwrap();
        std::fs::write(&bin, &bytes).unwrap();
        assert!(load(dir.path(), "ckpt", &mut other.init(&mut seeded(4))).is_err());
    }
}
