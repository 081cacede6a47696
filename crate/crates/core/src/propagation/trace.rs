use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    TargetReached,
    MaxIters,
    NoAdmissibleDim,
    Converged,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// A single-dimension edit: `delta` raw units applied to `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub dim: usize,
    pub delta: i32,
}

/// State at the start of one iteration and the edit it chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Code in raw units (continuous for the continuous strategy).
    pub code: Vec<f64>,
    pub predictions: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: Option<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationTrace {
    pub metric_columns: Vec<String>,
    pub rows: Vec<TraceRow>,
    pub stop: StopReason,
    /// Predictor calls made (one per task per iteration).
    pub evaluations: usize,
}

impl PropagationTrace {
    pub(crate) fn new(metric_columns: Vec<String>) -> Self {
        PropagationTrace {
            metric_columns,
            rows: Vec::new(),
            stop: StopReason::MaxIters,
            evaluations: 0,
        }
    }

    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    /// CSV with columns `iter, e_0.., <metrics>.., loss, grad_norm,
    /// chosen_dim, stop_reason`. `chosen_dim` reads `dim:+k` or `dim:-k`;
    /// the stop reason appears on the last row only.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self.rows.first().map_or(0, |r| r.code.len());
        let mut header = vec!["iter".to_string()];
        header.extend((0..dim).map(|i| format!("e_{i}")));
        header.extend(self.metric_columns.iter().cloned());
        header.extend(["loss", "grad_norm", "chosen_dim", "stop_reason"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        let last = self.rows.len().saturating_sub(1);
        for (i, r) in self.rows.iter().enumerate() {
            let mut cells = vec![r.iter.to_string()];
            cells.extend(r.code.iter().map(|v| v.to_string()));
            cells.extend(r.predictions.iter().map(|v| v.to_string()));
            cells.push(r.loss.to_string());
            cells.push(r.grad_norm.to_string());
            cells.push(
                r.step
                    .map_or(String::new(), |s| format!("{}:{:+}", s.dim, s.delta)),
            );
            cells.push(if i == last {
                self.stop.to_string()
            } else {
                String::new()
            });
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = PropagationTrace::new(vec!["acc".into(), "flops".into()]);
        for iter in 0..2 {
            t.rows.push(TraceRow {
                iter,
                code: vec![64.0, 2.0],
                predictions: vec![70.0, 1.5],
                loss: 1.0,
                grad_norm: 0.5,
                step: Some(Step { dim: 1, delta: -1 }),
            });
        }
        t.stop = StopReason::Converged;
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "iter,e_0,e_1,acc,flops,loss,grad_norm,chosen_dim,stop_reason"
        );
        assert_eq!(lines[1], "0,64,2,70,1.5,1,0.5,1:-1,");
        assert_eq!(lines[2], "1,64,2,70,1.5,1,0.5,1:-1,Converged");
    }
}
