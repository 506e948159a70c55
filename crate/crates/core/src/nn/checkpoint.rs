//! JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "propall-mlp",
//!   "version": 1,
//!   "architecture": {"widths": [784, 300, 10], "batch_norm": true},
//!   "layers": [
//!     {"kind": "linear", "rows": 300, "cols": 784, "weight": [...], "bias": [...]},
//!     {"kind": "batch_norm", "eps": 1e-5, "scale": [...], "shift": [...],
//!      "running_mean": [...], "running_var": [...]},
//!     {"kind": "relu"},
//!     {"kind": "linear", ...}
//!   ]
//! }
//! ```
//!
//! Weights are row-major `rows × cols` (`out × in`). Floats are written in
//! shortest round-trip form and parsed exactly, so save → load is
//! bit-identical.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Architecture, BatchNorm, Layer, Linear, MlpModel, NnError};

pub const CHECKPOINT_FORMAT: &str = "propall-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    architecture: Architecture,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerDoc {
    Linear {
        rows: usize,
        cols: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    BatchNorm {
        eps: f64,
        scale: Vec<f64>,
        shift: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Relu,
}

impl MlpModel {
    pub fn to_json(&self) -> String {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear(lin) => LayerDoc::Linear {
                    rows: lin.weight.nrows(),
                    cols: lin.weight.ncols(),
                    weight: lin.weight.iter().copied().collect(),
                    bias: lin.bias.to_vec(),
                },
                Layer::BatchNorm(bn) => LayerDoc::BatchNorm {
                    eps: bn.eps,
                    scale: bn.scale.to_vec(),
                    shift: bn.shift.to_vec(),
                    running_mean: bn.running_mean.to_vec(),
                    running_var: bn.running_var.to_vec(),
                },
                Layer::Relu => LayerDoc::Relu,
            })
            .collect();
        let doc = Document {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: self.architecture.clone(),
            layers,
        };
        let mut text = serde_json::to_string(&doc).expect("checkpoint serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let doc: Document =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!(
                "unknown format {:?}",
                doc.format
            )));
        }
        if doc.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {}",
                doc.version
            )));
        }
        let arch = Architecture::new(doc.architecture.widths, doc.architecture.batch_norm)?;
        let layers = doc
            .layers
            .into_iter()
            .map(|l| match l {
                LayerDoc::Linear {
                    rows,
                    cols,
                    weight,
                    bias,
                } => Ok(Layer::Linear(Linear {
                    weight: Array2::from_shape_vec((rows, cols), weight)
                        .map_err(|e| NnError::Checkpoint(e.to_string()))?,
                    bias: Array1::from(bias),
                })),
                LayerDoc::BatchNorm {
                    eps,
                    scale,
                    shift,
                    running_mean,
                    running_var,
                } => Ok(Layer::BatchNorm(BatchNorm {
                    scale: scale.into(),
                    shift: shift.into(),
                    running_mean: running_mean.into(),
                    running_var: running_var.into(),
                    eps,
                })),
                LayerDoc::Relu => Ok(Layer::Relu),
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        Self::from_layers(arch, layers)
    }
}

pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), NnError> {
    std::fs::write(path, model.to_json())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel, NnError> {
    MlpModel::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gumbel::RandomSource;
    use crate::nn::Mode;
    use ndarray::array;

    #[test]
    fn round_trip_is_bit_identical() {
        let arch = Architecture::new(vec![3, 5, 4, 2], true).unwrap();
        let mut m = MlpModel::init(&arch, &mut RandomSource::new(3)).unwrap();
        let x = array![[0.1, -0.7, 2.0], [1.0 / 3.0, 5e-300, -1.5], [0.0, 0.0, 1.0]];
        m.forward(x.view(), Mode::Train).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.layers(), m.layers());
        let a = m.logits(x.view()).unwrap();
        let b = back.logits(x.view()).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(back.to_json(), m.to_json());
    }

    #[test]
    fn rejects_foreign_or_inconsistent_documents() {
        assert!(MlpModel::from_json("{}").is_err());
        let arch = Architecture::new(vec![2, 2], false).unwrap();
        let m = MlpModel::init(&arch, &mut RandomSource::new(0)).unwrap();
        let text = m.to_json();
        assert!(MlpModel::from_json(&text.replace("propall-mlp", "other")).is_err());
        assert!(
            MlpModel::from_json(&text.replace("\"widths\":[2,2]", "\"widths\":[3,2]")).is_err()
        );
    }
}
