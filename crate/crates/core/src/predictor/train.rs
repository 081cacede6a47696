use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, MetricHead, MetricSet, Predictor};
use crate::error::{Error, Result};
use crate::loss::{smooth_l1, smooth_l1_grad};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate of the one-cycle schedule.
    pub lr: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub head_hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            lr: 0.01,
            weight_decay: 1e-7,
            dropout: 0.5,
            hidden: 256,
            head_hidden: 128,
            seed: 0,
        }
    }
}

/// One-cycle learning-rate schedule: linear warm-up over the first 30% of
/// steps from `max_lr / 25` to `max_lr`, then cosine annealing to
/// `max_lr / 1e4`.
#[derive(Debug, Clone, Copy)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
}

impl OneCycle {
    const WARMUP_FRAC: f64 = 0.3;
    const START_DIV: f64 = 25.0;
    const END_DIV: f64 = 1e4;

    pub fn warmup_steps(&self) -> usize {
        ((self.total_steps as f64 * Self::WARMUP_FRAC).ceil() as usize).max(1)
    }

    pub fn lr(&self, step: usize) -> f64 {
        let start = self.max_lr / Self::START_DIV;
        let end = self.max_lr / Self::END_DIV;
        let warm = self.warmup_steps();
        if step < warm {
            start + (self.max_lr - start) * step as f64 / warm as f64
        } else {
            let span = (self.total_steps.saturating_sub(warm + 1)).max(1) as f64;
            let p = ((step - warm) as f64 / span).min(1.0);
            end + (self.max_lr - end) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
        }
    }
}

/// Index of the first validation record: 2000 for exactly 2500 records,
/// otherwise `floor(0.8 n)`, keeping at least one record on each side.
pub fn split_point(n: usize) -> usize {
    if n == 2500 {
        2000
    } else {
        ((n as f64 * 0.8).floor() as usize).clamp(1, n.saturating_sub(1).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub name: String,
    /// Mean absolute error on the validation split.
    pub mae: f64,
    /// Standard deviation of the metric over the validation split.
    pub std: f64,
    /// Rank correlation of predictions and truth on the validation split.
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_val: usize,
    pub metrics: Vec<MetricReport>,
}

pub(crate) fn init_predictor<R: Rng>(
    rng: &mut R,
    input_dim: usize,
    metric_names: &[String],
    hidden: usize,
    head_hidden: usize,
    activation: Activation,
    dropout: f64,
) -> Predictor {
    let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
    };
    let w1 = uniform(input_dim, hidden, input_dim);
    let b1 = uniform(1, hidden, input_dim).row(0).to_owned();
    let heads = metric_names
        .iter()
        .map(|_| {
            let w2 = uniform(hidden, head_hidden, hidden);
            let b2 = uniform(1, head_hidden, hidden).row(0).to_owned();
            let w3 = uniform(1, head_hidden, head_hidden).row(0).to_owned();
            let b3 = uniform(1, 1, head_hidden)[[0, 0]];
            MetricHead {
                w2,
                b2,
                w3,
                b3,
                out_shift: 0.0,
                out_scale: 1.0,
            }
        })
        .collect();
    Predictor {
        metric_names: metric_names.to_vec(),
        activation,
        dropout,
        input_shift: Array1::zeros(input_dim),
        input_scale: Array1::ones(input_dim),
        w1,
        b1,
        heads,
    }
}

/// First and second moments for one parameter tensor.
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

struct AdamW {
    lr: f64,
    weight_decay: f64,
    step: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn update(&self, param: &mut [f64], grad: &[f64], mom: &mut Moments) {
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut mom.m).zip(&mut mom.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * (m_hat / (v_hat.sqrt() + Self::EPS) + self.weight_decay * *p);
        }
    }
}

struct HeadGrads {
    w2: Array2<f64>,
    b2: Array1<f64>,
    w3: Array1<f64>,
    b3: f64,
}

fn dropout_mask<R: Rng>(rng: &mut R, shape: (usize, usize), rate: f64) -> Array2<f64> {
    if rate <= 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 - rate;
    Array2::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

fn std_of(values: ArrayView1<f64>) -> f64 {
    let n = values.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = values.sum() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn validate_records(inputs: &[Vec<f64>], targets: &[MetricSet], names: &[String]) -> Result<usize> {
    if inputs.len() != targets.len() {
        return Err(Error::Validation(format!(
            "{} codes but {} metric sets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.len() < 2 {
        return Err(Error::Validation(
            "training needs at least 2 records".into(),
        ));
    }
    if names.is_empty() {
        return Err(Error::Validation("no metrics to train on".into()));
    }
    let dim = inputs[0].len();
    for (i, (x, t)) in inputs.iter().zip(targets).enumerate() {
        if x.len() != dim || dim == 0 {
            return Err(Error::Validation(format!(
                "record {i}: code length {} != {dim}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "record {i}: non-finite code entry"
            )));
        }
        for name in names {
            match t.get(name) {
                None => {
                    return Err(Error::Validation(format!(
                        "record {i}: metric {name:?} missing"
                    )))
                }
                Some(v) if !v.is_finite() => {
                    return Err(Error::Validation(format!(
                        "record {i}: metric {name:?} is not finite"
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(dim)
}

/// Trains a predictor on `(code, metrics)` pairs.
///
/// Records are split in order with [`split_point`]; the first part trains,
/// the rest is reported on. `metric_names` defaults to the metrics of the
/// first record, in order. Deterministic for a given `cfg.seed`.
pub fn train(
    inputs: &[Vec<f64>],
    targets: &[MetricSet],
    metric_names: Option<&[String]>,
    cfg: &TrainConfig,
) -> Result<(Predictor, TrainReport)> {
    let names: Vec<String> = match metric_names {
        Some(n) => n.to_vec(),
        None => targets
            .first()
            .map(|t| t.names().map(str::to_owned).collect())
            .unwrap_or_default(),
    };
    let dim = validate_records(inputs, targets, &names)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.lr <= 0.0 || !(0.0..1.0).contains(&cfg.dropout)
    {
        return Err(Error::Config(
            "epochs, batch size and lr must be positive; dropout in [0, 1)".into(),
        ));
    }
    let n = inputs.len();
    let split = split_point(n);
    let m = names.len();

    let x_all = Array2::from_shape_fn((n, dim), |(i, j)| inputs[i][j]);
    let y_all = Array2::from_shape_fn((n, m), |(i, k)| {
        targets[i].get(&names[k]).expect("validated")
    });
    let x_train = x_all.slice(s![..split, ..]);
    let y_train = y_all.slice(s![..split, ..]);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = init_predictor(
        &mut rng,
        dim,
        &names,
        cfg.hidden,
        cfg.head_hidden,
        Activation::Relu,
        cfg.dropout,
    );

    // Standardization constants from the training split.
    let in_mean = x_train.mean_axis(Axis(0)).expect("non-empty");
    let in_std = x_train
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });
    p.input_shift = in_mean;
    p.input_scale = in_std;
    for (k, h) in p.heads.iter_mut().enumerate() {
        let col = y_train.column(k);
        h.out_shift = col.mean().expect("non-empty");
        let sd = col.std(0.0);
        h.out_scale = if sd > 1e-12 { sd } else { 1.0 };
    }
    let x_train = (&x_train - &p.input_shift) / &p.input_scale;

    let batches_per_epoch = split.div_ceil(cfg.batch_size);
    let schedule = OneCycle {
        max_lr: cfg.lr,
        total_steps: cfg.epochs * batches_per_epoch,
    };
    let mut opt = AdamW {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        step: 0,
    };
    let mut mom_w1 = Moments::new(p.w1.len());
    let mut mom_b1 = Moments::new(p.b1.len());
    let mut mom_heads: Vec<[Moments; 4]> = p
        .heads
        .iter()
        .map(|h| {
            [
                Moments::new(h.w2.len()),
                Moments::new(h.b2.len()),
                Moments::new(h.w3.len()),
                Moments::new(1),
            ]
        })
        .collect();

    let act = p.activation;
    let mut order: Vec<usize> = (0..split).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bsz = batch.len();
            let xb = x_train.select(Axis(0), batch);
            let yb = y_train.select(Axis(0), batch);

            // Forward.
            let z1 = xb.dot(&p.w1) + &p.b1;
            let mask1 = dropout_mask(&mut rng, z1.dim(), cfg.dropout);
            let d1 = z1.mapv(|z| act.apply(z)) * &mask1;
            let mut d_d1 = Array2::<f64>::zeros(d1.dim());
            let mut head_grads = Vec::with_capacity(m);
            for (k, h) in p.heads.iter().enumerate() {
                let z2 = d1.dot(&h.w2) + &h.b2;
                let mask2 = dropout_mask(&mut rng, z2.dim(), cfg.dropout);
                let d2 = z2.mapv(|z| act.apply(z)) * &mask2;
                let out = d2.dot(&h.w3) * h.out_scale + (h.b3 * h.out_scale + h.out_shift);
                // Backward: mean over the batch of the summed smooth L1, measured in
                // standardized target units so metrics of any scale weigh alike.
                let dy = Zip::from(&out)
                    .and(yb.column(k))
                    .map_collect(|&o, &t| smooth_l1_grad((o - t) / h.out_scale) / bsz as f64);
                let g_w3 = d2.t().dot(&dy);
                let g_b3 = dy.sum();
                let mut d_z2 = dy
                    .insert_axis(Axis(1))
                    .dot(&h.w3.view().insert_axis(Axis(0)));
                Zip::from(&mut d_z2)
                    .and(&mask2)
                    .and(&z2)
                    .for_each(|g, &mk, &z| *g *= mk * act.grad(z));
                // Products of transposed views can come back column-major.
                let g_w2 = d1.t().dot(&d_z2).as_standard_layout().into_owned();
                let g_b2 = d_z2.sum_axis(Axis(0));
                d_d1 += &d_z2.dot(&h.w2.t());
                head_grads.push(HeadGrads {
                    w2: g_w2,
                    b2: g_b2,
                    w3: g_w3,
                    b3: g_b3,
                });
            }
            Zip::from(&mut d_d1)
                .and(&mask1)
                .and(&z1)
                .for_each(|g, &mk, &z| *g *= mk * act.grad(z));
            let g_w1 = xb.t().dot(&d_d1).as_standard_layout().into_owned();
            let g_b1 = d_d1.sum_axis(Axis(0));

            opt.lr = schedule.lr(opt.step as usize);
            opt.step += 1;
            opt.update(
                p.w1.as_slice_mut().expect("standard layout"),
                g_w1.as_slice().expect("standard layout"),
                &mut mom_w1,
            );
            opt.update(
                p.b1.as_slice_mut().expect("standard layout"),
                g_b1.as_slice().expect("standard layout"),
                &mut mom_b1,
            );
            for ((h, g), mom) in p.heads.iter_mut().zip(&head_grads).zip(&mut mom_heads) {
                let [mw2, mb2, mw3, mb3] = mom;
                opt.update(
                    h.w2.as_slice_mut().expect("standard layout"),
                    g.w2.as_slice().expect("standard layout"),
                    mw2,
                );
                opt.update(
                    h.b2.as_slice_mut().expect("standard layout"),
                    g.b2.as_slice().expect("standard layout"),
                    mb2,
                );
                opt.update(
                    h.w3.as_slice_mut().expect("standard layout"),
                    g.w3.as_slice().expect("standard layout"),
                    mw3,
                );
                opt.update(std::slice::from_mut(&mut h.b3), &[g.b3], mb3);
            }
        }
    }

    let report = evaluate(
        &p,
        &x_all.slice(s![split.., ..]).to_owned(),
        &y_all.slice(s![split.., ..]).to_owned(),
        split,
    );
    Ok((p, report))
}

fn evaluate(
    p: &Predictor,
    x_val: &Array2<f64>,
    y_val: &Array2<f64>,
    n_train: usize,
) -> TrainReport {
    let pred = p.predict_batch(x_val);
    let metrics = p
        .metric_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let truth = y_val.column(k);
            let guess = pred.column(k);
            let mae = Zip::from(&truth)
                .and(&guess)
                .fold(0.0, |acc, t, g| acc + (t - g).abs())
                / truth.len() as f64;
            let spearman = crate::benchio::spearman(&guess.to_vec(), &truth.to_vec()).ok();
            MetricReport {
                name: name.clone(),
                mae,
                std: std_of(truth),
                spearman,
            }
        })
        .collect();
    TrainReport {
        n_train,
        n_val: x_val.nrows(),
        metrics,
    }
}

/// Mean training loss over a dataset: smooth L1 in standardized target
/// units, summed over metrics.
pub fn dataset_loss(p: &Predictor, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let pred = p.predict_batch(x);
    let scales: Vec<f64> = p.heads.iter().map(|h| h.out_scale).collect();
    let mut total = 0.0;
    for (row_p, row_y) in pred.rows().into_iter().zip(y.rows()) {
        for ((a, b), s) in row_p.iter().zip(row_y.iter()).zip(&scales) {
            total += smooth_l1((a - b) / s);
        }
    }
    total / x.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cycle_shape() {
        let s = OneCycle {
            max_lr: 0.01,
            total_steps: 1000,
        };
        assert_eq!(s.warmup_steps(), 300);
        assert!((s.lr(0) - 0.01 / 25.0).abs() < 1e-15);
        assert!((s.lr(300) - 0.01).abs() < 1e-12);
        assert!((s.lr(999) - 0.01 / 1e4).abs() < 1e-12);
        assert!(s.lr(150) < s.lr(299));
        assert!(s.lr(600) > s.lr(900));
    }

    #[test]
    fn split_rule() {
        assert_eq!(split_point(2500), 2000);
        assert_eq!(split_point(1000), 800);
        assert_eq!(split_point(2), 1);
        assert_eq!(split_point(3), 2);
    }

    fn tiny_dataset(n: usize) -> (Vec<Vec<f64>>, Vec<MetricSet>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let ys = xs
            .iter()
            .map(|x| {
                MetricSet::new()
                    .with("acc", 70.0 + 5.0 * x[0] - 3.0 * (x[1] - 0.5).powi(2))
                    .with("flops", 1.0 + 2.0 * x[2] * x[3])
            })
            .collect();
        (xs, ys)
    }

    #[test]
    fn rejects_bad_records() {
        let (xs, mut ys) = tiny_dataset(10);
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(train(&xs[..1], &ys[..1], None, &cfg).is_err());
        let names = vec!["acc".to_string(), "miou".to_string()];
        assert!(matches!(
            train(&xs, &ys, Some(&names), &cfg),
            Err(Error::Validation(_))
        ));
        ys[3].insert("flops", f64::NAN);
        assert!(matches!(
            train(&xs, &ys, None, &cfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let (xs, ys) = tiny_dataset(200);
        let cfg = TrainConfig {
            epochs: 5,
            hidden: 32,
            head_hidden: 16,
            seed: 3,
            ..Default::default()
        };
        let (a, ra) = train(&xs, &ys, None, &cfg).unwrap();
        let (b, rb) = train(&xs, &ys, None, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let (c, _) = train(&xs, &ys, None, &TrainConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn memorizes_identical_pair() {
        let x = vec![vec![0.3, 0.6, 0.1]; 2];
        let y = vec![MetricSet::new().with("acc", 75.0).with("flops", 2.0); 2];
        let cfg = TrainConfig {
            epochs: 300,
            hidden: 16,
            head_hidden: 8,
            dropout: 0.0,
            ..Default::default()
        };
        let (_, report) = train(&x, &y, None, &cfg).unwrap();
        assert_eq!(report.n_train, 1);
        for m in &report.metrics {
            assert!(m.mae < 1e-3, "{}: {}", m.name, m.mae);
        }
    }

    #[test]
    fn fits_smooth_function() {
        let (xs, ys) = tiny_dataset(1000);
        let cfg = TrainConfig {
            epochs: 60,
            hidden: 64,
            head_hidden: 32,
            dropout: 0.0,
            ..Default::default()
        };
        let (p, report) = train(&xs, &ys, None, &cfg).unwrap();
        for m in &report.metrics {
            assert!(
                m.mae < 0.2 * m.std,
                "{}: mae {} std {}",
                m.name,
                m.mae,
                m.std
            );
        }
        let x = Array2::from_shape_fn((1000, 5), |(i, j)| xs[i][j]);
        let y = Array2::from_shape_fn((1000, 2), |(i, k)| {
            ys[i].get(if k == 0 { "acc" } else { "flops" }).unwrap()
        });
        assert!(dataset_loss(&p, &x, &y) < 0.1);
    }
}
