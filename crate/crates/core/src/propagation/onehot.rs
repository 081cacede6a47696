use super::config::PropagationConfig;
use super::engine::{norm, JointLoss};
use super::trace::{PropagationTrace, StopReason, TraceRow};
use crate::error::{Error, Result};
use crate::predictor::Predictor;

/// Replaces each group by the one-hot vector of its largest entry (first
/// index on ties).
pub fn project_onehot(values: &[f64], groups: &[usize]) -> Result<Vec<f64>> {
    check_groups(values.len(), groups)?;
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    for &g in groups {
        let seg = &values[start..start + g];
        let mut best = 0;
        for (i, &v) in seg.iter().enumerate() {
            if v > seg[best] {
                best = i;
            }
        }
        out[start + best] = 1.0;
        start += g;
    }
    Ok(out)
}

fn check_groups(len: usize, groups: &[usize]) -> Result<()> {
    if groups.is_empty() || groups.contains(&0) {
        return Err(Error::Config(
            "groups must be non-empty with at least one option each".into(),
        ));
    }
    let total: usize = groups.iter().sum();
    if total != len {
        return Err(Error::Config(format!(
            "group sizes sum to {total}, code has {len} entries"
        )));
    }
    Ok(())
}

/// Propagation over grouped one-hot codes: `onehot_project_every`
/// continuous updates, then every group is snapped to its argmax. Between
/// projections the values are not clamped, so within a group the option
/// with the largest accumulated descent direction wins the argmax. Stops
/// early once a projection no longer changes the code.
pub fn propagate_onehot(
    p: &Predictor,
    init: &[f64],
    groups: &[usize],
    cfg: &PropagationConfig,
) -> Result<(Vec<f64>, PropagationTrace)> {
    check_groups(init.len(), groups)?;
    let mut loss = JointLoss::new(&[p], None, cfg, Some(init.len()))?;
    let mut trace = PropagationTrace::new(loss.columns());
    let mut projected = project_onehot(init, groups)?;
    let mut e = projected.clone();
    for iter in 0..cfg.max_iters {
        let ev = loss.evaluate(&e);
        trace.evaluations += 1;
        trace.rows.push(TraceRow {
            iter,
            code: e.clone(),
            predictions: ev.predictions,
            loss: ev.loss,
            grad_norm: norm(&ev.grad),
            step: None,
        });
        if ev.reached {
            trace.stop = StopReason::TargetReached;
            break;
        }
        for (v, g) in e.iter_mut().zip(&ev.grad) {
            *v -= cfg.eta * g;
        }
        if (iter + 1) % cfg.onehot_project_every == 0 {
            let next = project_onehot(&e, groups)?;
            let unchanged = next == projected;
            projected = next;
            e = projected.clone();
            if unchanged {
                trace.stop = StopReason::Converged;
                break;
            }
        }
    }
    Ok((project_onehot(&e, groups)?, trace))
}

/// Number of projection steps taken by a one-hot run.
pub fn projection_steps(trace: &PropagationTrace, cfg: &PropagationConfig) -> usize {
    trace.iterations() / cfg.onehot_project_every
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_projection() {
        assert_eq!(
            project_onehot(&[0.2, 0.5, 0.3], &[3]).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
        assert_eq!(
            project_onehot(&[1.0, 1.0, -2.0, 0.0, 3.0], &[2, 3]).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert!(matches!(
            project_onehot(&[1.0, 2.0], &[3]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn linear_scores_pick_best_option_per_group() {
        // acc = sum of per-option scores; the best option per group is 2, 0, 1.
        let w = vec![0.1, 0.2, 0.9, 0.8, 0.1, 0.3, 0.0, 0.5, 0.4];
        let p = Predictor::linear(&["acc".to_string()], &[w], &[40.0]).unwrap();
        let cfg = PropagationConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let init = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let (code, trace) = propagate_onehot(&p, &init, &[3, 3, 3], &cfg).unwrap();
        assert_eq!(code, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(trace.stop, StopReason::Converged);
        assert_eq!(projection_steps(&trace, &cfg), 2);
    }

    #[test]
    fn bad_groups_are_config_errors() {
        let p = Predictor::linear(&["acc".to_string()], &[vec![0.0; 4]], &[0.0]).unwrap();
        let cfg = PropagationConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            propagate_onehot(&p, &[1.0, 0.0, 0.0, 1.0], &[3, 3], &cfg),
            Err(Error::Config(_))
        ));
    }
}
