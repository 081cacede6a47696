//! Analytic stand-in for trained-benchmark accuracy.
//!
//! `score(x) = base - sum_i w_i d_i^2 + sum_(i,j) v_ij d_i d_j + sigma * z(code)`
//! with `d = x - mu` in normalized coordinates and `z` a standard normal
//! draw seeded by the task seed and the raw code. The interaction
//! coefficients are scaled so the quadratic part stays negative
//! semidefinite, which keeps `mu` the noise-free global maximum.
//!
//! By default `mu` sits near the top of every range, so accuracy grows
//! with model size and the FLOPs term decides where to stop, as on real
//! benchmarks. A handful of dominant dimensions carry most of the
//! curvature.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::BenchRecord;
use crate::coding::{sample_raw, DimKind, RawCode, CODE_DIM, DIM_KINDS};
use crate::netmodel::FlopsTable;
use crate::predictor::MetricSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub base: f64,
    /// Range of the optimum in normalized coordinates; each dimension's
    /// optimum is drawn uniformly from the grid levels inside it.
    pub optimum_range: (f64, f64),
    /// Range for the redrawn optimum dimensions of a [`SyntheticTask::sharing`] partner.
    pub partner_range: (f64, f64),
    /// Curvature range for channel dimensions.
    pub channel_curvature: (f64, f64),
    /// Curvature range for count dimensions.
    pub count_curvature: (f64, f64),
    /// Number of dimensions whose curvature is multiplied by `dominant_scale`;
    /// the others get `minor_scale`. A few dominant dimensions mimic real
    /// search spaces, where most of the variance comes from a handful of
    /// choices.
    pub dominant: usize,
    pub dominant_scale: f64,
    pub minor_scale: f64,
    pub interactions: usize,
    /// Fraction of each diagonal weight the interactions may consume, in `[0, 1]`.
    pub interaction_strength: f64,
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            base: 75.0,
            optimum_range: (0.9, 1.0),
            partner_range: (0.0, 1.0),
            channel_curvature: (2.5, 6.0),
            count_curvature: (0.3, 1.5),
            dominant: 6,
            dominant_scale: 4.0,
            minor_scale: 0.25,
            interactions: 20,
            interaction_strength: 0.5,
            noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub name: String,
    pub optimum: RawCode,
    pub curvature: Vec<f64>,
    pub interactions: Vec<(usize, usize, f64)>,
    pub base: f64,
    pub noise: f64,
    pub seed: u64,
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// SplitMix64 finalizer, used to derive per-code noise seeds.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl SyntheticTask {
    pub fn random(name: impl Into<String>, params: &SynthParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let optimum = sample_optimum(&mut rng, params.optimum_range);
        let mut curvature: Vec<f64> = DIM_KINDS
            .iter()
            .map(|k| match k {
                DimKind::Channel => uniform(&mut rng, params.channel_curvature),
                DimKind::Count => uniform(&mut rng, params.count_curvature),
            })
            .collect();
        let mut dims: Vec<usize> = (0..CODE_DIM).collect();
        dims.shuffle(&mut rng);
        let dominant = params.dominant.min(CODE_DIM);
        for (rank, &d) in dims.iter().enumerate() {
            curvature[d] *= if rank < dominant {
                params.dominant_scale
            } else {
                params.minor_scale
            };
        }
        let interactions = random_interactions(&mut rng, &curvature, params);
        SyntheticTask {
            name: name.into(),
            optimum,
            curvature,
            interactions,
            base: params.base,
            noise: params.noise,
            seed,
        }
    }

    /// A task with the same curvature and interactions that keeps `self`'s
    /// optimum on `shared` randomly chosen dimensions and redraws the rest
    /// from `params.partner_range`.
    pub fn sharing(
        &self,
        name: impl Into<String>,
        shared: usize,
        params: &SynthParams,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fresh = sample_optimum(&mut rng, params.partner_range);
        let mut dims: Vec<usize> = (0..CODE_DIM).collect();
        dims.shuffle(&mut rng);
        let mut mu = *self.optimum.values();
        for &d in &dims[shared.min(CODE_DIM)..] {
            mu[d] = fresh.get(d);
        }
        SyntheticTask {
            name: name.into(),
            optimum: RawCode::new(mu).expect("grid values"),
            seed: mix(seed ^ self.seed.rotate_left(17)),
            ..self.clone()
        }
    }

    /// Noise-free score.
    pub fn mean_score(&self, code: &RawCode) -> f64 {
        let x = code.normalize();
        let mu = self.optimum.normalize();
        let d: Vec<f64> = x
            .values()
            .iter()
            .zip(mu.values())
            .map(|(a, b)| a - b)
            .collect();
        let mut s = self.base;
        for (w, di) in self.curvature.iter().zip(&d) {
            s -= w * di * di;
        }
        for &(i, j, v) in &self.interactions {
            s += v * d[i] * d[j];
        }
        s
    }

    fn noise_draw(&self, code: &RawCode) -> f64 {
        let mut h = mix(self.seed ^ 0x6e63_705f_7379_6e74);
        for &v in code.values() {
            h = mix(h ^ v as u64);
        }
        ChaCha8Rng::seed_from_u64(h).sample(StandardNormal)
    }

    /// Deterministic score of a code, clamped to `[0, 100]`.
    pub fn oracle(&self, code: &RawCode) -> f64 {
        let noise = if self.noise > 0.0 {
            self.noise * self.noise_draw(code)
        } else {
            0.0
        };
        (self.mean_score(code) + noise).clamp(0.0, 100.0)
    }
}

fn sample_optimum<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> RawCode {
    let mut out = [0u32; CODE_DIM];
    for (i, k) in DIM_KINDS.iter().enumerate() {
        let b = k.bounds();
        let top = f64::from(b.levels() - 1);
        let first = (lo.clamp(0.0, 1.0) * top).ceil() as u32;
        let last = ((hi.clamp(0.0, 1.0) * top).floor() as u32).max(first);
        out[i] = (b.min + b.unit * f64::from(rng.gen_range(first..=last))) as u32;
    }
    RawCode::new(out).expect("grid values")
}

fn random_interactions<R: Rng>(
    rng: &mut R,
    w: &[f64],
    params: &SynthParams,
) -> Vec<(usize, usize, f64)> {
    let n = w.len();
    let mut pairs = Vec::with_capacity(params.interactions);
    let mut degree = vec![0usize; n];
    while pairs.len() < params.interactions.min(n * (n - 1) / 2) {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let (i, j) = (i.min(j), i.max(j));
        if i == j || pairs.contains(&(i, j)) {
            continue;
        }
        degree[i] += 1;
        degree[j] += 1;
        pairs.push((i, j));
    }
    // Gershgorin: row i of the quadratic form has off-diagonal mass
    // sum_j |v_ij| / 2 <= strength * w_i, so it stays positive semidefinite.
    pairs
        .into_iter()
        .map(|(i, j)| {
            let cap = 2.0
                * params.interaction_strength
                * (w[i] / degree[i] as f64).min(w[j] / degree[j] as f64);
            (i, j, rng.gen_range(-1.0..=1.0) * cap)
        })
        .collect()
}

/// `n` uniformly sampled codes scored for accuracy (`acc`) by the oracle and
/// for FLOPs (`flops`, GFLOPs) by the lookup table.
pub fn gen_benchmark(
    task: &SyntheticTask,
    n: usize,
    seed: u64,
    table: &FlopsTable,
) -> Vec<BenchRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let code = sample_raw(&mut rng);
            let metrics = MetricSet::new()
                .with("acc", task.oracle(&code))
                .with("flops", table.lookup_raw(&code));
            BenchRecord::new(&code, task.name.clone(), metrics)
        })
        .collect()
}
