//! Scoring architectures with a predictor or an oracle.

use serde::{Deserialize, Serialize};

use crate::benchio::SyntheticTask;
use crate::coding::{round_code, ArchCode};
use crate::netmodel::FlopsTable;
use crate::predictor::{MetricSet, Predictor};

/// Anything that maps a code to metrics.
pub trait Evaluator {
    fn evaluate(&self, code: &ArchCode) -> MetricSet;
}

impl Evaluator for Predictor {
    fn evaluate(&self, code: &ArchCode) -> MetricSet {
        self.predict(code.as_slice())
    }
}

/// Synthetic accuracy plus analytic FLOPs of the rounded code.
pub struct OracleEvaluator<'a> {
    pub task: &'a SyntheticTask,
    pub table: &'a FlopsTable,
}

impl Evaluator for OracleEvaluator<'_> {
    fn evaluate(&self, code: &ArchCode) -> MetricSet {
        let raw = round_code(code);
        MetricSet::new()
            .with("acc", self.task.oracle(&raw))
            .with("flops", self.table.lookup_raw(&raw))
    }
}

/// Accuracy-efficiency trade-off `acc - lambda * flops`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub acc_metric: String,
    pub flops_metric: String,
    pub lambda: f64,
}

impl Objective {
    pub fn new(lambda: f64) -> Self {
        Objective {
            acc_metric: "acc".into(),
            flops_metric: "flops".into(),
            lambda,
        }
    }

    /// Missing metrics score as negative infinity, except that FLOPs are
    /// not needed when `lambda` is zero.
    pub fn score(&self, m: &MetricSet) -> f64 {
        let Some(acc) = m.get(&self.acc_metric) else {
            return f64::NEG_INFINITY;
        };
        if self.lambda == 0.0 {
            return acc;
        }
        match m.get(&self.flops_metric) {
            Some(f) => acc - self.lambda * f,
            None => f64::NEG_INFINITY,
        }
    }
}

impl Default for Objective {
    fn default() -> Self {
        Objective::new(0.5)
    }
}
