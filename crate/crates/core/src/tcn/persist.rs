//! JSON model container. Floats are written in shortest round-trip form and
//! parsed exactly, so a reload reproduces every bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::TcnModel;
use super::TcnError;
use crate::fusion::Scaler;

pub const MODEL_FORMAT: &str = "arrival-eta-tcn";
pub const MODEL_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub format_version: u64,
    pub config_hash: String,
    pub scaler: Scaler,
    pub model: TcnModel,
}

pub fn save_model(path: &Path, model: &TcnModel, scaler: &Scaler, config_hash: &str) -> Result<(), TcnError> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        format_version: MODEL_FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        scaler: scaler.clone(),
        model: model.clone(),
    };
    let json = serde_json::to_string(&file).map_err(|e| TcnError::CorruptModelFile(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile, TcnError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| TcnError::CorruptModelFile(e.to_string()))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
        return Err(TcnError::CorruptModelFile("not a model file".into()));
    }
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| TcnError::CorruptModelFile("missing format_version".into()))?;
    if found != MODEL_FORMAT_VERSION {
        return Err(TcnError::VersionMismatch {
            found,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    // re-parse from text: going through Value would round floats twice
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| TcnError::CorruptModelFile(e.to_string()))?;
    if !file.model.is_consistent() {
        return Err(TcnError::CorruptModelFile("inconsistent layer shapes".into()));
    }
    if file.scaler.columns.len() != file.model.hyper.in_channels {
        return Err(TcnError::CorruptModelFile("scaler does not match input channels".into()));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{ColumnScale, Feature};
    use crate::tcn::{TcnHyper, Tensor3};

    fn scaler() -> Scaler {
        Scaler {
            columns: Feature::ALL
                .iter()
                .map(|&feature| ColumnScale {
                    feature,
                    min: 0.1,
                    max: 0.7,
                })
                .collect(),
            t_max_min: 120.0,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut model = TcnModel::new(TcnHyper::default(), 11).unwrap();
        model.blocks[2].bn1.running_mean[1] = 0.1 + 0.2;
        save_model(&path, &model, &scaler(), "abc").unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.model, model);
        assert_eq!(loaded.scaler, scaler());
        assert_eq!(loaded.config_hash, "abc");
        let x = Tensor3::from_vec(2, 10, 9, (0..180).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let a = model.predict(&x).unwrap();
        let b = loaded.model.predict(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &TcnModel::new(TcnHyper::default(), 1).unwrap(), &scaler(), "h").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(TcnError::CorruptModelFile(_))));
    }

    #[test]
    fn unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &TcnModel::new(TcnHyper::default(), 1).unwrap(), &scaler(), "h").unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"format_version\":1", "\"format_version\":99");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(TcnError::VersionMismatch { found: 99, .. })
        ));
    }
}
