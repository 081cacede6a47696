//! Predictor weight files.
//!
//! Canonical JSON, one object:
//!
//! ```text
//! {
//!   "format": "ncp-predictor",
//!   "version": 1,
//!   "metric_names": ["acc", "flops"],
//!   "activation": "relu",
//!   "dropout": 0.5,
//!   "input_shift": [..input_dim],
//!   "input_scale": [..input_dim],
//!   "w1": [[..hidden] x input_dim],      // row-major, input x hidden
//!   "b1": [..hidden],
//!   "heads": [{
//!     "w2": [[..head_hidden] x hidden], "b2": [..head_hidden],
//!     "w3": [..head_hidden], "b3": f,
//!     "out_shift": f, "out_scale": f
//!   }, ...]                              // one per metric, same order
//! }
//! ```
//!
//! A layer computes `x . W + b`. Inputs are standardized as
//! `(code - input_shift) / input_scale`; head outputs are mapped back as
//! `y * out_scale + out_shift`. Floats are written in shortest round-trip
//! form, so loading reproduces predictions bit for bit.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, MetricHead, Predictor};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "ncp-predictor";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct HeadFile {
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: f64,
    out_shift: f64,
    out_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct PredictorFile {
    format: String,
    version: u32,
    metric_names: Vec<String>,
    activation: Activation,
    dropout: f64,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    heads: Vec<HeadFile>,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(
    rows: Vec<Vec<f64>>,
    cols: usize,
    what: &str,
) -> std::result::Result<Array2<f64>, String> {
    let nrows = rows.len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(format!("{what}: ragged rows (expected {cols} columns)"));
    }
    Array2::from_shape_vec((nrows, cols), rows.into_iter().flatten().collect())
        .map_err(|e| format!("{what}: {e}"))
}

impl Predictor {
    pub fn to_json(&self) -> String {
        let file = PredictorFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            metric_names: self.metric_names.clone(),
            activation: self.activation,
            dropout: self.dropout,
            input_shift: self.input_shift.to_vec(),
            input_scale: self.input_scale.to_vec(),
            w1: to_rows(&self.w1),
            b1: self.b1.to_vec(),
            heads: self
                .heads
                .iter()
                .map(|h| HeadFile {
                    w2: to_rows(&h.w2),
                    b2: h.b2.to_vec(),
                    w3: h.w3.to_vec(),
                    b3: h.b3,
                    out_shift: h.out_shift,
                    out_scale: h.out_scale,
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("predictor serializes")
    }

    /// Parses a weight file body; `origin` names the source in errors.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let corrupt = |detail: String| Error::Corrupt {
            path: origin.to_path_buf(),
            detail,
        };
        let header: Header = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        if header.format != FORMAT_NAME {
            return Err(corrupt(format!(
                "not a predictor file (format {:?})",
                header.format
            )));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::Version {
                path: origin.to_path_buf(),
                found: header.version,
                supported: FORMAT_VERSION,
            });
        }
        let f: PredictorFile = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        let input_dim = f.input_shift.len();
        let hidden = f.b1.len();
        if input_dim == 0 || hidden == 0 || f.input_scale.len() != input_dim {
            return Err(corrupt("inconsistent input or hidden sizes".into()));
        }
        if f.heads.len() != f.metric_names.len() || f.heads.is_empty() {
            return Err(corrupt("need exactly one head per metric".into()));
        }
        let w1 = from_rows(f.w1, hidden, "w1").map_err(corrupt)?;
        if w1.nrows() != input_dim {
            return Err(corrupt(format!(
                "w1 has {} rows, expected {input_dim}",
                w1.nrows()
            )));
        }
        let mut heads = Vec::with_capacity(f.heads.len());
        for (k, h) in f.heads.into_iter().enumerate() {
            let head_hidden = h.b2.len();
            let w2 = from_rows(h.w2, head_hidden, &format!("heads[{k}].w2")).map_err(corrupt)?;
            if w2.nrows() != hidden || h.w3.len() != head_hidden {
                return Err(corrupt(format!("heads[{k}]: layer shapes do not chain")));
            }
            heads.push(MetricHead {
                w2,
                b2: Array1::from(h.b2),
                w3: Array1::from(h.w3),
                b3: h.b3,
                out_shift: h.out_shift,
                out_scale: h.out_scale,
            });
        }
        Ok(Predictor {
            metric_names: f.metric_names,
            activation: f.activation,
            dropout: f.dropout,
            input_shift: Array1::from(f.input_shift),
            input_scale: Array1::from(f.input_scale),
            w1,
            b1: Array1::from(f.b1),
            heads,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_predictor() -> Predictor {
        let names = vec!["acc".to_string(), "flops".to_string()];
        let mut p = Predictor::random(27, &names, 32, 16, 21);
        p.input_shift.fill(0.37);
        p.heads[1].out_scale = 3.3;
        p
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = sample_predictor();
        p.save(&path).unwrap();
        let q = Predictor::load(&path).unwrap();
        assert_eq!(p, q);
        for seed in 0..100 {
            let code = crate::coding::sample(seed);
            assert_eq!(
                p.predict_values(code.as_slice()),
                q.predict_values(code.as_slice())
            );
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let text = sample_predictor().to_json();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(Predictor::load(&path), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn newer_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let text = sample_predictor()
            .to_json()
            .replacen("\"version\":1", "\"version\":2", 1);
        std::fs::write(&path, text).unwrap();
        match Predictor::load(&path) {
            Err(Error::Version {
                found, supported, ..
            }) => assert_eq!((found, supported), (2, 1)),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Predictor::load("/nonexistent/p.json").unwrap_err();
        assert!(err.is_io());
        assert!(matches!(err, Error::Io { .. }));
    }
}
