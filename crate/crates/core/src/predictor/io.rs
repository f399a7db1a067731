//! JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Parameterization, Predictor, PredictorConfig};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::numerics::Tensor;

pub const MODEL_FORMAT: &str = "coopgame-predictor";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedWeight {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadShapes {
    pub mu: Vec<usize>,
    pub logvar: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub config: PredictorConfig,
    pub heads: HeadShapes,
    /// Free-form text describing how the model was produced.
    #[serde(default)]
    pub provenance: String,
    pub weights: Vec<NamedWeight>,
}

impl ModelFile {
    pub fn from_model(model: &Predictor, provenance: &str) -> Self {
        let cfg = model.config();
        let n = cfg.channels;
        let explicit = cfg.parameterization == Parameterization::Explicit;
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            config: cfg.clone(),
            heads: HeadShapes {
                mu: vec![n],
                logvar: vec![n],
                theta: explicit.then(|| vec![cfg.ar_order, n, n]),
                theta0: explicit.then(|| vec![n]),
            },
            provenance: provenance.to_string(),
            weights: cfg
                .layout()
                .into_iter()
                .zip(model.params())
                .map(|((name, shape), p)| NamedWeight {
                    name: name.to_string(),
                    shape,
                    data: p.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<Predictor> {
        if self.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unknown model format `{}`", self.format)));
        }
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported model version {}", self.version)));
        }
        self.config.validate()?;
        let layout = self.config.layout();
        if layout.len() != self.weights.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} weight arrays, file has {}",
                layout.len(),
                self.weights.len()
            )));
        }
        let mut params = Vec::with_capacity(layout.len());
        for ((name, shape), w) in layout.into_iter().zip(self.weights) {
            if w.name != name {
                return Err(Error::ModelFormat(format!("expected weight `{name}`, found `{}`", w.name)));
            }
            if w.shape != shape {
                return Err(Error::ModelFormat(format!(
                    "weight `{name}` has shape {:?}, config implies {shape:?}",
                    w.shape
                )));
            }
            let t = Tensor::new(w.shape, w.data).map_err(|e| Error::ModelFormat(format!("weight `{name}`: {e}")))?;
            params.push(t);
        }
        Predictor::from_params(self.config, params)
    }
}

pub fn save_model(path: &Path, model: &Predictor, provenance: &str) -> Result<()> {
    let json = serde_json::to_string(&ModelFile::from_model(model, provenance))?;
    write_atomic(path, json.as_bytes())
}

pub fn load_model(path: &Path) -> Result<(Predictor, String)> {
    let file: ModelFile = serde_json::from_str(&read_to_string(path)?)?;
    let provenance = file.provenance.clone();
    Ok((file.into_model()?, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_is_exact() {
        for p in [Parameterization::Implicit, Parameterization::Explicit] {
            let mut cfg = PredictorConfig::new(2, p);
            cfg.hidden = 5;
            let m = Predictor::new(cfg).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.json");
            save_model(&path, &m, "lambda = 1").unwrap();
            let (back, prov) = load_model(&path).unwrap();
            assert_eq!(back, m);
            assert_eq!(prov, "lambda = 1");
        }
    }

    #[test]
    fn wrong_shape_is_a_format_error() {
        let m = Predictor::new(PredictorConfig::new(2, Parameterization::Explicit)).unwrap();
        let mut file = ModelFile::from_model(&m, "");
        file.config.ar_order = 3;
        assert!(matches!(file.into_model(), Err(Error::ModelFormat(_))));

        let mut file = ModelFile::from_model(&m, "");
        file.weights[0].data.pop();
        assert!(matches!(file.into_model(), Err(Error::ModelFormat(_))));

        let mut file = ModelFile::from_model(&m, "");
        file.format = "other".into();
        assert!(matches!(file.into_model(), Err(Error::ModelFormat(_))));
    }
}
