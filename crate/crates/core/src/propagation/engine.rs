use super::config::{PropagationConfig, Strategy};
use super::trace::{PropagationTrace, StopReason, TraceRow};
use crate::coding::{round_code, ArchCode, CODE_DIM};
use crate::error::{Error, Result};
use crate::netmodel::FlopsTable;
use crate::predictor::{LossTerm, Predictor};

/// Weighted sum of per-task gradients; weights default to 1.
pub fn accumulate_gradients(grads: &[Vec<f64>], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let Some(first) = grads.first() else {
        return Err(Error::Usage("no gradients to accumulate".into()));
    };
    if grads.iter().any(|g| g.len() != first.len()) {
        return Err(Error::Usage("gradients differ in length".into()));
    }
    if let Some(w) = weights {
        if w.len() != grads.len() {
            return Err(Error::Usage(format!(
                "{} weights for {} gradients",
                w.len(),
                grads.len()
            )));
        }
    }
    let mut out = vec![0.0; first.len()];
    for (k, g) in grads.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        for (o, v) in out.iter_mut().zip(g) {
            *o += w * v;
        }
    }
    Ok(out)
}

struct TaskTerms<'a> {
    predictor: &'a Predictor,
    acc: usize,
    flops: Option<usize>,
    fixed: Option<(f64, f64)>,
}

pub(crate) struct Evaluation {
    pub predictions: Vec<f64>,
    pub loss: f64,
    pub grad: Vec<f64>,
    pub reached: bool,
}

/// The (possibly multi-task) propagation loss as a function of the code.
pub(crate) struct JointLoss<'a> {
    tasks: Vec<TaskTerms<'a>>,
    weights: Vec<f64>,
    cfg: &'a PropagationConfig,
}

impl<'a> JointLoss<'a> {
    pub fn new(
        predictors: &[&'a Predictor],
        weights: Option<&[f64]>,
        cfg: &'a PropagationConfig,
        input_dim: Option<usize>,
    ) -> Result<Self> {
        cfg.validate()?;
        if predictors.is_empty() {
            return Err(Error::Usage("at least one predictor is required".into()));
        }
        let weights = match weights {
            Some(w) if w.len() != predictors.len() => {
                return Err(Error::Usage(format!(
                    "{} task weights for {} predictors",
                    w.len(),
                    predictors.len()
                )))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; predictors.len()],
        };
        let dim = input_dim.unwrap_or(predictors[0].input_dim());
        let mut tasks = Vec::with_capacity(predictors.len());
        for p in predictors {
            if p.input_dim() != dim {
                return Err(Error::Config(format!(
                    "predictor takes {}-dim codes, expected {dim}",
                    p.input_dim()
                )));
            }
            let acc = p.require_metric(&cfg.acc_metric)?;
            let flops = if cfg.lambda > 0.0 {
                Some(p.require_metric(&cfg.flops_metric)?)
            } else {
                p.metric_index(&cfg.flops_metric)
            };
            tasks.push(TaskTerms {
                predictor: p,
                acc,
                flops,
                fixed: None,
            });
        }
        Ok(JointLoss {
            tasks,
            weights,
            cfg,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn columns(&self) -> Vec<String> {
        let multi = self.tasks.len() > 1;
        let mut out = Vec::new();
        for (k, t) in self.tasks.iter().enumerate() {
            for name in t.predictor.metric_names() {
                out.push(if multi {
                    format!("task{k}_{name}")
                } else {
                    name.clone()
                });
            }
        }
        out
    }

    pub fn evaluate(&mut self, code: &[f64]) -> Evaluation {
        let cfg = self.cfg;
        let mut predictions = Vec::new();
        let mut grads = Vec::with_capacity(self.tasks.len());
        let mut loss = 0.0;
        let mut reached = true;
        for (t, &w) in self.tasks.iter_mut().zip(&self.weights) {
            let p = t.predictor.predict_values(code);
            let current = (
                p[t.acc] + cfg.delta_acc,
                t.flops.map_or(0.0, |f| p[f] - cfg.delta_flops),
            );
            let (t_acc, t_flops) = if cfg.retarget {
                current
            } else {
                *t.fixed.get_or_insert(current)
            };
            let mut terms = vec![LossTerm {
                metric: t.acc,
                target: t_acc,
                weight: 1.0,
            }];
            reached &= (p[t.acc] - t_acc).abs() < cfg.tolerance;
            if cfg.lambda > 0.0 {
                let f = t.flops.expect("resolved when lambda > 0");
                terms.push(LossTerm {
                    metric: f,
                    target: t_flops,
                    weight: cfg.lambda,
                });
                reached &= (p[f] - t_flops).abs() < cfg.tolerance;
            }
            let (l, g) = t.predictor.input_gradient(code, &terms);
            loss += w * l;
            grads.push(g);
            predictions.extend(p);
        }
        let grad =
            accumulate_gradients(&grads, Some(&self.weights)).expect("equal-length gradients");
        Evaluation {
            predictions,
            loss,
            grad,
            reached,
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn run_continuous(
    mut loss: JointLoss<'_>,
    init: &ArchCode,
    cfg: &PropagationConfig,
) -> (ArchCode, PropagationTrace) {
    let scale = cfg.step_scale();
    let mut e = *init.values();
    let mut trace = PropagationTrace::new(loss.columns());
    for iter in 0..cfg.max_iters {
        let ev = loss.evaluate(&e);
        trace.evaluations += loss.len();
        trace.rows.push(TraceRow {
            iter,
            code: ArchCode::from_normalized(e).to_raw_units().to_vec(),
            predictions: ev.predictions,
            loss: ev.loss,
            grad_norm: norm(&ev.grad),
            step: None,
        });
        if ev.reached {
            trace.stop = StopReason::TargetReached;
            break;
        }
        if ev.grad.iter().all(|&g| g == 0.0) {
            trace.stop = StopReason::Converged;
            break;
        }
        for i in 0..CODE_DIM {
            e[i] = (e[i] - cfg.eta * ev.grad[i] * scale[i]).clamp(0.0, 1.0);
        }
    }
    (round_code(&ArchCode::from_normalized(e)).normalize(), trace)
}

/// Continuous propagation from `init`. Returns the rounded final code.
pub fn propagate_continuous(
    p: &Predictor,
    init: &ArchCode,
    cfg: &PropagationConfig,
) -> Result<(ArchCode, PropagationTrace)> {
    let loss = JointLoss::new(&[p], None, cfg, Some(CODE_DIM))?;
    Ok(run_continuous(loss, init, cfg))
}

/// Joint propagation over several tasks, each contributing its own loss
/// and gradient; gradients are combined with [`accumulate_gradients`].
/// Winner-takes-all needs `table`.
pub fn propagate_multitask(
    predictors: &[&Predictor],
    weights: Option<&[f64]>,
    init: &ArchCode,
    cfg: &PropagationConfig,
    table: Option<&FlopsTable>,
) -> Result<(ArchCode, PropagationTrace)> {
    let loss = JointLoss::new(predictors, weights, cfg, Some(CODE_DIM))?;
    match cfg.strategy {
        Strategy::Continuous => Ok(run_continuous(loss, init, cfg)),
        Strategy::WinnerTakesAll => {
            let table = table
                .ok_or_else(|| Error::Config("winner-takes-all needs a FLOPs table".into()))?;
            Ok(super::wta::run_wta(loss, init, cfg, table))
        }
        Strategy::OneHot => Err(Error::Config(
            "one-hot mode works on grouped codes; use propagate_onehot".into(),
        )),
    }
}

/// Continuous propagation on a target task, warm-started from another
/// task's optimum.
pub fn transfer(
    source_optimum: &ArchCode,
    target: &Predictor,
    cfg: &PropagationConfig,
) -> Result<(ArchCode, PropagationTrace)> {
    propagate_continuous(target, source_optimum, cfg)
}
