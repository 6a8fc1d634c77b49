//! Versioned model documents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetHeader;
use crate::error::{Error, Result};
use crate::neural::{CascadedModel, FnnModel, Policy, Prediction, TrainConfig, TrainingSample};
use crate::transfer::Lineage;

pub const MODEL_FORMAT: &str = "qosnet-model";
pub const MODEL_VERSION: u32 = 1;

/// Short hex digest of a model's canonical JSON encoding.
pub fn model_digest<T: Serialize>(model: &T) -> String {
    let json = serde_json::to_string(model).expect("model serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StoredModel {
    Fnn(FnnModel),
    Cascaded(CascadedModel),
}

impl StoredModel {
    /// Digest of the inner model, as recorded in transfer lineage.
    pub fn digest(&self) -> String {
        match self {
            StoredModel::Fnn(m) => model_digest(m),
            StoredModel::Cascaded(m) => model_digest(m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StoredModel::Fnn(m) => {
                m.net.validate()?;
                let k = m.services.len();
                if m.net.input_width() != 2 * k || m.net.output_width() != 2 * k {
                    return Err(Error::invalid("FNN width does not match the user layout"));
                }
                Ok(())
            }
            StoredModel::Cascaded(m) => m.validate(),
        }
    }
}

impl Policy for StoredModel {
    fn predict(&self, sample: &TrainingSample) -> Result<Prediction> {
        match self {
            StoredModel::Fnn(m) => m.predict(sample),
            StoredModel::Cascaded(m) => m.predict(sample),
        }
    }
}

/// A trained model with the configuration it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    /// Digest of the system configuration of the training data.
    pub config_digest: String,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// Training epochs consumed from scratch (or since the source model).
    pub epochs: usize,
    #[serde(default)]
    pub lineage: Option<Lineage>,
    pub model: StoredModel,
}

impl ModelDocument {
    pub fn new(model: StoredModel, config_digest: &str, train: Option<TrainConfig>, epochs: usize) -> Self {
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config_digest: config_digest.into(),
            train,
            epochs,
            lineage: None,
            model,
        }
    }

    pub fn digest(&self) -> String {
        self.model.digest()
    }

    /// Fails unless the document was trained under the dataset's system
    /// configuration.
    pub fn check_dataset(&self, header: &DatasetHeader) -> Result<()> {
        if self.config_digest != header.config_digest {
            return Err(Error::DigestMismatch { model: self.config_digest.clone(), dataset: header.config_digest.clone() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Format { what: "model document", detail: e.to_string() })?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Format { what: "model document", detail: format!("unknown format `{}`", doc.format) });
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::Format { what: "model document", detail: format!("unsupported version {}", doc.version) });
        }
        doc.model.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::stream;
    use crate::neural::{Init, MlpModel, Normalizer};
    use crate::qos::Service;
    use std::collections::BTreeMap;

    fn cascaded() -> CascadedModel {
        let mut rng = stream(3);
        let mut phi_i = MlpModel::new(&[4, 5, 2], Init::He, &mut rng).unwrap();
        phi_i.input_norm = Normalizer { mean: vec![0.1, -3.3e-9, 1e5 / 3.0, 7.0], std: vec![1.0 / 3.0, 2.0, 0.7, 1e-3] };
        let mut phi_ii = BTreeMap::new();
        phi_ii.insert(Service::Urllc, MlpModel::new(&[3, 4, 1], Init::UnitGaussian, &mut rng).unwrap());
        CascadedModel { phi_i, phi_ii, services: vec![Service::Urllc, Service::Urllc], n_max: 8 }
    }

    #[test]
    fn round_trip_is_value_exact() {
        let doc = ModelDocument::new(StoredModel::Cascaded(cascaded()), "abc", Some(TrainConfig::default()), 10);
        let back = ModelDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json(), doc.to_json());
        assert_eq!(back.digest(), doc.digest());
    }

    #[test]
    fn rejects_foreign_documents() {
        let mut doc = ModelDocument::new(StoredModel::Cascaded(cascaded()), "abc", None, 0);
        doc.version = 9;
        assert!(ModelDocument::from_json(&doc.to_json()).is_err());
        assert!(ModelDocument::from_json("{}").is_err());
    }
}
