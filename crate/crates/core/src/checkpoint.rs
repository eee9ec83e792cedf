//! `hcgr-v1` JSON checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HcgrError, Result};
use crate::model::{HyperParams, Model, ModelParams};

pub const CHECKPOINT_FORMAT: &str = "hcgr-v1";

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    hyperparams: HyperParams,
    catalog_size: usize,
    params: BTreeMap<String, Vec<Vec<f64>>>,
    rng_seed: u64,
}

pub fn to_json(model: &Model, rng_seed: u64) -> Result<String> {
    let params = model
        .params
        .named()
        .into_iter()
        .map(|(name, t)| (name, t.to_nested()))
        .collect();
    let doc = Document {
        format: CHECKPOINT_FORMAT.to_string(),
        hyperparams: model.hyper.clone(),
        catalog_size: model.catalog_size(),
        params,
        rng_seed,
    };
    Ok(serde_json::to_string(&doc)?)
}

/// Parses a checkpoint; returns the model and the seed it was trained with.
pub fn from_json(text: &str) -> Result<(Model, u64)> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(CHECKPOINT_FORMAT) => {}
        Some(other) => {
            return Err(HcgrError::Format(format!(
                "unsupported checkpoint format `{other}` (expected {CHECKPOINT_FORMAT})"
            )))
        }
        None => return Err(HcgrError::Format("checkpoint has no format field".into())),
    }
    let mut doc: Document = serde_json::from_value(value)?;
    doc.hyperparams.validate()?;
    if doc.catalog_size == 0 {
        return Err(HcgrError::Format("checkpoint has an empty catalog".into()));
    }
    let mut params = ModelParams::zeros(&doc.hyperparams, doc.catalog_size);
    for (name, tensor) in params.named_mut() {
        let rows = doc
            .params
            .remove(&name)
            .ok_or_else(|| HcgrError::Format(format!("checkpoint lacks parameter `{name}`")))?;
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let shape_ok = rows.len() == tensor.rows() && rows.iter().all(|r| r.len() == tensor.cols());
        if !shape_ok {
            return Err(HcgrError::Format(format!(
                "parameter `{name}` should be {}x{}",
                tensor.rows(),
                tensor.cols()
            )));
        }
        tensor.data_mut().copy_from_slice(&flat);
    }
    if let Some(extra) = doc.params.keys().next() {
        return Err(HcgrError::Format(format!(
            "unknown parameter `{extra}` in checkpoint"
        )));
    }
    if !params.all_finite() {
        return Err(HcgrError::Format(
            "checkpoint contains non-finite values".into(),
        ));
    }
    Ok((
        Model {
            hyper: doc.hyperparams,
            params,
        },
        doc.rng_seed,
    ))
}

pub fn save(model: &Model, rng_seed: u64, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model, rng_seed)?).map_err(|e| HcgrError::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, u64)> {
    let text = std::fs::read_to_string(path).map_err(|e| HcgrError::io(path, e))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Aggregator;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let hyper = HyperParams {
            dim: 5,
            layers: 2,
            blocks: 2,
            aggregator: Aggregator::GatLastLayer,
            ..HyperParams::default()
        };
        Model::new(hyper, 11, &mut ChaCha8Rng::seed_from_u64(42)).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = model();
        let (back, seed) = from_json(&to_json(&m, 17).unwrap()).unwrap();
        assert_eq!(seed, 17);
        assert_eq!(back.hyper, m.hyper);
        for ((_, a), (_, b)) in m.params.named().into_iter().zip(back.params.named()) {
            let same = a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same);
        }
        assert_eq!(
            back.forward(&[1, 2, 3]).unwrap().probs,
            m.forward(&[1, 2, 3]).unwrap().probs
        );
    }

    #[test]
    fn rejects_foreign_or_damaged_documents() {
        let text = to_json(&model(), 1).unwrap();
        assert!(matches!(
            from_json(&text.replace("hcgr-v1", "hcgr-v2")),
            Err(HcgrError::Format(_))
        ));
        assert!(from_json(&text.replace("\"gate\"", "\"gait\"")).is_err());
        assert!(from_json("{}").is_err());
        assert!(from_json("not json").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model();
        save(&m, 3, &path).unwrap();
        assert_eq!(load(&path).unwrap().0, m);
    }
}
