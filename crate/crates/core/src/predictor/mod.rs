//! Multi-head MLP regressor from architecture codes to metrics.
//!
//! Shape: one shared affine layer (`input -> 256`) followed, for every
//! metric, by its own `256 -> 128 -> 1` branch. Hidden layers use ReLU.
//! Inputs are standardized and outputs de-standardized with constants fixed
//! at training time, so predictions and gradients are in metric units with
//! respect to the caller's code coordinates.
//!
//! A trained predictor is immutable; [`Predictor::predict`] and
//! [`Predictor::input_gradient`] take `&self` and may run concurrently.

mod io;
mod train;

use indexmap::IndexMap;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{smooth_l1, smooth_l1_grad};

pub use io::{FORMAT_NAME, FORMAT_VERSION};
pub use train::{
    dataset_loss, split_point, train, MetricReport, OneCycle, TrainConfig, TrainReport,
};

/// Named scalar metrics, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricSet(IndexMap<String, f64>);

impl MetricSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.0.insert(name.into(), value);
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.insert(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, f64)> for MetricSet {
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        MetricSet(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One metric branch: `hidden -> head_hidden -> 1`, then de-standardization.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MetricHead {
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array1<f64>,
    pub b3: f64,
    pub out_shift: f64,
    pub out_scale: f64,
}

/// Frozen-weight predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub(crate) metric_names: Vec<String>,
    pub(crate) activation: Activation,
    pub(crate) dropout: f64,
    pub(crate) input_shift: Array1<f64>,
    pub(crate) input_scale: Array1<f64>,
    pub(crate) w1: Array2<f64>,
    pub(crate) b1: Array1<f64>,
    pub(crate) heads: Vec<MetricHead>,
}

/// A per-metric term of a propagation loss: `weight * smoothL1(p - target)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerm {
    pub metric: usize,
    pub target: f64,
    pub weight: f64,
}

/// Single-code forward pass with the intermediates needed for backprop.
struct Forward {
    z1: Array1<f64>,
    z2: Vec<Array1<f64>>,
    out: Vec<f64>,
}

impl Predictor {
    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metric_names.iter().position(|m| m == name)
    }

    /// Like [`metric_index`](Self::metric_index) but reports a configuration error.
    pub fn require_metric(&self, name: &str) -> Result<usize> {
        self.metric_index(name).ok_or_else(|| {
            Error::Config(format!(
                "predictor has no {name:?} head (heads: {})",
                self.metric_names.join(", ")
            ))
        })
    }

    fn check_input(&self, code: &[f64]) {
        assert_eq!(
            code.len(),
            self.input_dim(),
            "code length does not match predictor input"
        );
    }

    fn forward(&self, code: &[f64]) -> Forward {
        self.check_input(code);
        let x = (&ArrayView1::from(code) - &self.input_shift) / &self.input_scale;
        let z1 = x.dot(&self.w1) + &self.b1;
        let a1 = z1.mapv(|z| self.activation.apply(z));
        let mut z2 = Vec::with_capacity(self.heads.len());
        let mut out = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let z = a1.dot(&h.w2) + &h.b2;
            let a = z.mapv(|v| self.activation.apply(v));
            out.push((a.dot(&h.w3) + h.b3) * h.out_scale + h.out_shift);
            z2.push(z);
        }
        Forward { z1, z2, out }
    }

    /// Predictions in metric order.
    pub fn predict_values(&self, code: &[f64]) -> Vec<f64> {
        self.forward(code).out
    }

    pub fn predict(&self, code: &[f64]) -> MetricSet {
        self.metric_names
            .iter()
            .cloned()
            .zip(self.predict_values(code))
            .collect()
    }

    /// Batched inference; rows of `codes` are inputs, columns of the result are metrics.
    pub fn predict_batch(&self, codes: &Array2<f64>) -> Array2<f64> {
        assert_eq!(codes.ncols(), self.input_dim());
        let x = (codes - &self.input_shift) / &self.input_scale;
        let a1 = (x.dot(&self.w1) + &self.b1).mapv(|z| self.activation.apply(z));
        let mut out = Array2::zeros((codes.nrows(), self.heads.len()));
        for (m, h) in self.heads.iter().enumerate() {
            let a2 = (a1.dot(&h.w2) + &h.b2).mapv(|z| self.activation.apply(z));
            let y = a2.dot(&h.w3) * h.out_scale + (h.b3 * h.out_scale + h.out_shift);
            out.column_mut(m).assign(&y);
        }
        out
    }

    /// Value of `sum_k weight_k * smoothL1(p_k - target_k)` at `code`.
    pub fn loss(&self, code: &[f64], terms: &[LossTerm]) -> f64 {
        let out = self.predict_values(code);
        terms
            .iter()
            .map(|t| t.weight * smooth_l1(out[t.metric] - t.target))
            .sum()
    }

    /// Loss and its gradient with respect to `code`, by backpropagation
    /// through the frozen weights (no dropout).
    pub fn input_gradient(&self, code: &[f64], terms: &[LossTerm]) -> (f64, Vec<f64>) {
        let fw = self.forward(code);
        let mut loss = 0.0;
        let mut d_out = vec![0.0; self.heads.len()];
        for t in terms {
            let d = fw.out[t.metric] - t.target;
            loss += t.weight * smooth_l1(d);
            d_out[t.metric] += t.weight * smooth_l1_grad(d);
        }
        let mut d_a1 = Array1::<f64>::zeros(self.hidden_dim());
        for (m, h) in self.heads.iter().enumerate() {
            if d_out[m] == 0.0 {
                continue;
            }
            let dy = d_out[m] * h.out_scale;
            let d_z2 = ndarray::Zip::from(&h.w3)
                .and(&fw.z2[m])
                .map_collect(|&w, &z| dy * w * self.activation.grad(z));
            d_a1 += &h.w2.dot(&d_z2);
        }
        let d_z1 = ndarray::Zip::from(&d_a1)
            .and(&fw.z1)
            .map_collect(|&g, &z| g * self.activation.grad(z));
        let d_x = self.w1.dot(&d_z1) / &self.input_scale;
        (loss, d_x.to_vec())
    }

    /// Signs of every hidden pre-activation at `code` (shared layer first,
    /// then each head). Two codes with equal patterns lie on the same linear
    /// piece of a ReLU predictor.
    pub fn activation_pattern(&self, code: &[f64]) -> Vec<bool> {
        let fw = self.forward(code);
        fw.z1
            .iter()
            .chain(fw.z2.iter().flat_map(|z| z.iter()))
            .map(|&z| z > 0.0)
            .collect()
    }

    /// Randomly initialized predictor (uniform fan-in scaling) with identity
    /// input/output scaling.
    pub fn random(
        input_dim: usize,
        metric_names: &[String],
        hidden: usize,
        head_hidden: usize,
        seed: u64,
    ) -> Self {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        train::init_predictor(
            &mut rng,
            input_dim,
            metric_names,
            hidden,
            head_hidden,
            Activation::Relu,
            0.5,
        )
    }

    /// A predictor computing `p_m = w_m . code + bias_m` exactly: identity
    /// activations, an identity shared layer and one-unit heads.
    pub fn linear(metric_names: &[String], weights: &[Vec<f64>], biases: &[f64]) -> Result<Self> {
        if weights.is_empty()
            || weights.len() != metric_names.len()
            || biases.len() != metric_names.len()
        {
            return Err(Error::Validation(
                "need one weight vector and bias per metric".into(),
            ));
        }
        let dim = weights[0].len();
        if weights.iter().any(|w| w.len() != dim) || dim == 0 {
            return Err(Error::Validation(
                "weight vectors must share a positive length".into(),
            ));
        }
        let heads = weights
            .iter()
            .zip(biases)
            .map(|(w, &b)| MetricHead {
                w2: Array2::from_shape_vec((dim, 1), w.clone()).expect("shape"),
                b2: Array1::zeros(1),
                w3: Array1::ones(1),
                b3: b,
                out_shift: 0.0,
                out_scale: 1.0,
            })
            .collect();
        Ok(Predictor {
            metric_names: metric_names.to_vec(),
            activation: Activation::Identity,
            dropout: 0.0,
            input_shift: Array1::zeros(dim),
            input_scale: Array1::ones(dim),
            w1: Array2::eye(dim),
            b1: Array1::zeros(dim),
            heads,
        })
    }

    /// Applies `f` to every weight matrix and bias (not the scaling constants).
    pub fn map_parameters(&mut self, mut f: impl FnMut(f64) -> f64) {
        self.w1.mapv_inplace(&mut f);
        self.b1.mapv_inplace(&mut f);
        for h in &mut self.heads {
            h.w2.mapv_inplace(&mut f);
            h.b2.mapv_inplace(&mut f);
            h.w3.mapv_inplace(&mut f);
            h.b3 = f(h.b3);
        }
    }

    /// Sets the biases of every layer; `b3` is per metric.
    pub fn set_biases(&mut self, b1: f64, b2: f64, b3: &[f64]) {
        self.b1.fill(b1);
        for (h, &b) in self.heads.iter_mut().zip(b3) {
            h.b2.fill(b2);
            h.b3 = b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let mut p = Predictor::random(27, &names(&["acc", "flops"]), 256, 128, 1);
        p.map_parameters(|_| 0.0);
        p.set_biases(0.7, -0.2, &[3.5, -1.25]);
        for seed in 0..5 {
            let code = crate::coding::sample(seed);
            assert_eq!(p.predict_values(code.as_slice()), vec![3.5, -1.25]);
        }
    }

    #[test]
    fn predict_is_deterministic() {
        let p = Predictor::random(27, &names(&["acc"]), 64, 32, 9);
        let code = crate::coding::sample(3);
        assert_eq!(p.predict(code.as_slice()), p.predict(code.as_slice()));
    }

    #[test]
    fn batch_matches_single() {
        let p = Predictor::random(27, &names(&["acc", "flops"]), 64, 32, 4);
        let codes: Vec<_> = (0..8).map(crate::coding::sample).collect();
        let mut batch = Array2::zeros((8, 27));
        for (i, c) in codes.iter().enumerate() {
            batch.row_mut(i).assign(&ArrayView1::from(c.as_slice()));
        }
        let out = p.predict_batch(&batch);
        for (i, c) in codes.iter().enumerate() {
            let single = p.predict_values(c.as_slice());
            for m in 0..2 {
                assert_abs_diff_eq!(out[[i, m]], single[m], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn linear_predictor_gradient_is_scaled_weights() {
        let w: Vec<f64> = (0..27).map(|i| (i as f64 - 13.0) / 10.0).collect();
        let p = Predictor::linear(&names(&["acc"]), std::slice::from_ref(&w), &[50.0]).unwrap();
        let code = crate::coding::sample(8);
        let pred = p.predict_values(code.as_slice())[0];
        for target in [pred + 1.0, pred - 0.4, pred + 3.0] {
            let (_, g) = p.input_gradient(
                code.as_slice(),
                &[LossTerm {
                    metric: 0,
                    target,
                    weight: 1.0,
                }],
            );
            let fprime = smooth_l1_grad(pred - target);
            for i in 0..27 {
                assert_abs_diff_eq!(g[i], fprime * w[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradient_zero_at_target() {
        let p = Predictor::random(27, &names(&["acc", "flops"]), 64, 32, 2);
        let code = crate::coding::sample(1);
        let out = p.predict_values(code.as_slice());
        let terms = [
            LossTerm {
                metric: 0,
                target: out[0],
                weight: 1.0,
            },
            LossTerm {
                metric: 1,
                target: out[1],
                weight: 0.5,
            },
        ];
        let (loss, g) = p.input_gradient(code.as_slice(), &terms);
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flops_weight_scales_its_contribution() {
        let p = Predictor::random(27, &names(&["acc", "flops"]), 64, 32, 5);
        let code = crate::coding::sample(2);
        let out = p.predict_values(code.as_slice());
        let term = |w| {
            [LossTerm {
                metric: 1,
                target: out[1] - 1.0,
                weight: w,
            }]
        };
        let (_, g1) = p.input_gradient(code.as_slice(), &term(1.0));
        let (_, g_half) = p.input_gradient(code.as_slice(), &term(0.5));
        let (_, g_s) = p.input_gradient(code.as_slice(), &term(0.7));
        for i in 0..27 {
            assert_eq!(g_half[i], 0.5 * g1[i]);
            assert_abs_diff_eq!(g_s[i], 0.7 * g1[i], epsilon = 1e-12 * g1[i].abs().max(1.0));
        }
        let (_, g0) = p.input_gradient(code.as_slice(), &term(0.0));
        assert!(g0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let p = Predictor::random(27, &names(&["acc", "flops"]), 256, 128, 13);
        let mut checked = 0;
        while checked < 10 {
            let code: Vec<f64> = (0..27).map(|_| rng.gen::<f64>()).collect();
            let out = p.predict_values(&code);
            let terms = [
                LossTerm {
                    metric: 0,
                    target: out[0] + rng.gen_range(-2.0..2.0),
                    weight: 1.0,
                },
                LossTerm {
                    metric: 1,
                    target: out[1] + rng.gen_range(-2.0..2.0),
                    weight: 0.5,
                },
            ];
            let h = 1e-5;
            let pattern = p.activation_pattern(&code);
            let mut fd = vec![0.0; 27];
            let mut kink = false;
            for i in 0..27 {
                let mut plus = code.clone();
                let mut minus = code.clone();
                plus[i] += h;
                minus[i] -= h;
                kink |= p.activation_pattern(&plus) != pattern
                    || p.activation_pattern(&minus) != pattern;
                fd[i] = (p.loss(&plus, &terms) - p.loss(&minus, &terms)) / (2.0 * h);
            }
            if kink {
                continue;
            }
            let (_, g) = p.input_gradient(&code, &terms);
            let scale = fd
                .iter()
                .chain(g.iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..27 {
                assert!(
                    (g[i] - fd[i]).abs() <= 1e-6 * scale.max(1e-12),
                    "dim {i}: {} vs {}",
                    g[i],
                    fd[i]
                );
            }
            checked += 1;
        }
    }
}
