use super::config::PropagationConfig;
use super::engine::{norm, JointLoss};
use super::trace::{PropagationTrace, Step, StopReason, TraceRow};
use crate::coding::{round_code, ArchCode, RawCode, CODE_DIM, DIM_KINDS};
use crate::error::Result;
use crate::netmodel::FlopsTable;
use crate::predictor::Predictor;

/// Outcome of one winner-takes-all selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Move `dim` down (`decrease`) or up by one grid step.
    Move { dim: usize, decrease: bool },
    /// Every normalized gradient is exactly zero.
    Converged,
    /// No dimension can move in its descent direction.
    NoAdmissibleDim,
}

/// Picks the dimension to edit from the loss gradient `grad` and the FLOPs
/// increments `delta[l]` of a one-step change of each dimension
/// (`None` or non-positive when unavailable).
///
/// With `g = grad / delta`, the largest positive `g` among dimensions that
/// can step down is decreased; failing that, the most negative `g` among
/// dimensions that can step up is increased. Ties go to the lower index.
pub fn select_dimension(
    grad: &[f64],
    delta: &[Option<f64>],
    can_down: &[bool],
    can_up: &[bool],
) -> Selection {
    let mut any_nonzero = false;
    let mut down: Option<(usize, f64)> = None;
    let mut up: Option<(usize, f64)> = None;
    for l in 0..grad.len() {
        let Some(dr) = delta[l].filter(|&d| d > 0.0) else {
            continue;
        };
        let g = grad[l] / dr;
        if g != 0.0 {
            any_nonzero = true;
        }
        if g > 0.0 && can_down[l] && down.is_none_or(|(_, best)| g > best) {
            down = Some((l, g));
        }
        if g < 0.0 && can_up[l] && up.is_none_or(|(_, best)| g < best) {
            up = Some((l, g));
        }
    }
    match (down, up) {
        (Some((dim, _)), _) => Selection::Move {
            dim,
            decrease: true,
        },
        (None, Some((dim, _))) => Selection::Move {
            dim,
            decrease: false,
        },
        (None, None) if !any_nonzero => Selection::Converged,
        _ => Selection::NoAdmissibleDim,
    }
}

/// FLOPs increment per dimension: the `+k` step where it exists, otherwise
/// the magnitude of the `-k` step.
fn flops_increments(raw: &RawCode, table: &FlopsTable) -> [Option<f64>; CODE_DIM] {
    let here = table.lookup_raw(raw);
    std::array::from_fn(|l| match raw.stepped(l, 1) {
        Some(up) => Some(table.lookup_raw(&up) - here),
        None => raw
            .stepped(l, -1)
            .map(|down| here - table.lookup_raw(&down)),
    })
}

pub(crate) fn run_wta(
    mut loss: JointLoss<'_>,
    init: &ArchCode,
    cfg: &PropagationConfig,
    table: &FlopsTable,
) -> (ArchCode, PropagationTrace) {
    let mut raw = round_code(init);
    let mut trace = PropagationTrace::new(loss.columns());
    for iter in 0..cfg.max_iters {
        let code = raw.normalize();
        let ev = loss.evaluate(code.as_slice());
        trace.evaluations += loss.len();
        let mut row = TraceRow {
            iter,
            code: raw.values().iter().map(|&v| v as f64).collect(),
            predictions: ev.predictions,
            loss: ev.loss,
            grad_norm: norm(&ev.grad),
            step: None,
        };
        if ev.reached {
            trace.rows.push(row);
            trace.stop = StopReason::TargetReached;
            break;
        }
        let delta = flops_increments(&raw, table);
        let can_down: Vec<bool> = (0..CODE_DIM)
            .map(|l| raw.stepped(l, -1).is_some())
            .collect();
        let can_up: Vec<bool> = (0..CODE_DIM).map(|l| raw.stepped(l, 1).is_some()).collect();
        match select_dimension(&ev.grad, &delta, &can_down, &can_up) {
            Selection::Move { dim, decrease } => {
                let k = DIM_KINDS[dim].bounds().unit as i32;
                let sign = if decrease { -1 } else { 1 };
                raw = raw
                    .stepped(dim, sign)
                    .expect("admissible step stays in bounds");
                row.step = Some(Step {
                    dim,
                    delta: sign * k,
                });
                trace.rows.push(row);
            }
            Selection::Converged => {
                trace.rows.push(row);
                trace.stop = StopReason::Converged;
                break;
            }
            Selection::NoAdmissibleDim => {
                trace.rows.push(row);
                trace.stop = StopReason::NoAdmissibleDim;
                break;
            }
        }
    }
    (raw.normalize(), trace)
}

/// Winner-takes-all propagation: one dimension moves by one grid step per
/// iteration. `init` is rounded onto the grid first.
pub fn propagate_wta(
    p: &Predictor,
    init: &ArchCode,
    cfg: &PropagationConfig,
    table: &FlopsTable,
) -> Result<(ArchCode, PropagationTrace)> {
    let loss = JointLoss::new(&[p], None, cfg, Some(CODE_DIM))?;
    Ok(run_wta(loss, init, cfg, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{Head, InputGeometry};

    fn pad<T: Clone>(head: &[T], fill: T) -> Vec<T> {
        let mut v = head.to_vec();
        v.resize(CODE_DIM, fill);
        v
    }

    #[test]
    fn positive_max_decreases_argmax() {
        let grad = pad(&[0.4, -0.2], 0.0);
        let delta = pad(&[Some(2.0), Some(1.0)], Some(1.0));
        let all = vec![true; CODE_DIM];
        assert_eq!(
            select_dimension(&grad, &delta, &all, &all),
            Selection::Move {
                dim: 0,
                decrease: true
            }
        );
    }

    #[test]
    fn all_negative_increases_argmin() {
        let grad: Vec<f64> = (0..CODE_DIM)
            .map(|i| -0.1 - (i % 5) as f64 * 0.01)
            .collect();
        let delta = vec![Some(1.0); CODE_DIM];
        let all = vec![true; CODE_DIM];
        assert_eq!(
            select_dimension(&grad, &delta, &all, &all),
            Selection::Move {
                dim: 4,
                decrease: false
            }
        );
    }

    #[test]
    fn bounds_and_zero_gradients() {
        let grad = pad(&[0.4, -0.2], 0.0);
        let delta = vec![Some(1.0); CODE_DIM];
        let mut can_down = vec![true; CODE_DIM];
        can_down[0] = false;
        let all = vec![true; CODE_DIM];
        assert_eq!(
            select_dimension(&grad, &delta, &can_down, &all),
            Selection::Move {
                dim: 1,
                decrease: false
            }
        );
        let none = vec![false; CODE_DIM];
        assert_eq!(
            select_dimension(&grad, &delta, &none, &none),
            Selection::NoAdmissibleDim
        );
        assert_eq!(
            select_dimension(&vec![0.0; CODE_DIM], &delta, &all, &all),
            Selection::Converged
        );
    }

    #[test]
    fn ties_pick_lowest_index() {
        let grad = vec![0.3; CODE_DIM];
        let delta = vec![Some(1.0); CODE_DIM];
        let all = vec![true; CODE_DIM];
        assert_eq!(
            select_dimension(&grad, &delta, &all, &all),
            Selection::Move {
                dim: 0,
                decrease: true
            }
        );
    }

    #[test]
    fn trace_moves_one_dimension_per_iteration() {
        let names = vec!["acc".to_string(), "flops".to_string()];
        let p = Predictor::random(CODE_DIM, &names, 32, 16, 17);
        let table = FlopsTable::new(Head::Segmentation, InputGeometry::default()).unwrap();
        let cfg = PropagationConfig {
            max_iters: 50,
            ..Default::default()
        };
        let (code, trace) = propagate_wta(&p, &ArchCode::default_init(), &cfg, &table).unwrap();
        for pair in trace.rows.windows(2) {
            let step = pair[0].step.unwrap();
            for l in 0..CODE_DIM {
                let d = pair[1].code[l] - pair[0].code[l];
                if l == step.dim {
                    assert_eq!(d, step.delta as f64);
                } else {
                    assert_eq!(d, 0.0);
                }
            }
        }
        assert_eq!(round_code(&code).normalize(), code);
    }
}
