//! Reference search strategies scored by the same predictor and objective
//! as propagation: random search, predictor top-k and greedy single-edit
//! adaptation.

use std::io::Write;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coding::{round_code, sample_raw, ArchCode, RawCode, CODE_DIM};
use crate::eval::{Evaluator, Objective};
use crate::netmodel::FlopsTable;
use crate::predictor::MetricSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub code: RawCode,
    pub metrics: MetricSet,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Best first.
    pub candidates: Vec<Candidate>,
    pub evaluations_used: usize,
    pub wall_time: f64,
    /// Rounds applied (greedy search only).
    pub rounds: usize,
}

impl SearchResult {
    pub fn best(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    /// CSV with columns `rank, code, score, <metrics>..`; the code is the
    /// canonical comma-separated form, quoted.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let names: Vec<&str> = self
            .candidates
            .first()
            .map_or(Vec::new(), |c| c.metrics.names().collect());
        let mut header = vec!["rank", "code", "score"];
        header.extend(&names);
        writeln!(w, "{}", header.join(","))?;
        for (i, c) in self.candidates.iter().enumerate() {
            let mut cells = vec![
                (i + 1).to_string(),
                format!("\"{}\"", c.code),
                c.score.to_string(),
            ];
            cells.extend(
                names
                    .iter()
                    .map(|n| c.metrics.get(n).map_or(String::new(), |v| v.to_string())),
            );
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Stable descending sort; equal scores keep their sampling order.
fn rank(mut cands: Vec<Candidate>) -> Vec<Candidate> {
    cands.sort_by(|a, b| b.score.total_cmp(&a.score));
    cands
}

fn score_samples(
    budget: usize,
    eval: &dyn Evaluator,
    objective: &Objective,
    seed: u64,
) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..budget)
        .map(|_| {
            let code = sample_raw(&mut rng);
            let metrics = eval.evaluate(&code.normalize());
            Candidate {
                code,
                score: objective.score(&metrics),
                metrics,
            }
        })
        .collect()
}

/// Scores `budget` uniform samples and keeps the best `keep`.
pub fn random_search(
    budget: usize,
    keep: usize,
    eval: &dyn Evaluator,
    objective: &Objective,
    seed: u64,
) -> SearchResult {
    let start = Instant::now();
    let mut candidates = rank(score_samples(budget, eval, objective, seed));
    candidates.truncate(keep);
    SearchResult {
        candidates,
        evaluations_used: budget,
        wall_time: start.elapsed().as_secs_f64(),
        rounds: 0,
    }
}

/// Ranks `budget` uniform samples by predicted objective and returns the top `k`.
pub fn predictor_topk(
    budget: usize,
    k: usize,
    predictor: &dyn Evaluator,
    objective: &Objective,
    seed: u64,
) -> SearchResult {
    random_search(budget, k.min(budget), predictor, objective, seed)
}

/// Greedy single-edit adaptation. Each round scores every one-step edit
/// (up and down in every dimension) and applies the one with the largest
/// objective gain per GFLOP of change; stops when no edit improves the
/// objective or after `max_rounds`. Ties go to the lower dimension, then to
/// the decrease.
pub fn netadapt_greedy(
    init: &ArchCode,
    predictor: &dyn Evaluator,
    table: &FlopsTable,
    objective: &Objective,
    max_rounds: usize,
) -> SearchResult {
    let start = Instant::now();
    let mut code = round_code(init);
    let mut metrics = predictor.evaluate(&code.normalize());
    let mut score = objective.score(&metrics);
    let mut evaluations = 1;
    let mut visited = vec![Candidate {
        code,
        metrics: metrics.clone(),
        score,
    }];
    let mut rounds = 0;
    while rounds < max_rounds {
        let here = table.lookup_raw(&code);
        let mut best: Option<(f64, RawCode, MetricSet, f64)> = None;
        for dim in 0..CODE_DIM {
            for dir in [-1, 1] {
                let Some(next) = code.stepped(dim, dir) else {
                    continue;
                };
                let m = predictor.evaluate(&next.normalize());
                evaluations += 1;
                let s = objective.score(&m);
                let gain = s - score;
                let dr = (table.lookup_raw(&next) - here).abs();
                if gain <= 0.0 || dr <= 0.0 {
                    continue;
                }
                let ratio = gain / dr;
                if best.as_ref().is_none_or(|b| ratio > b.0) {
                    best = Some((ratio, next, m, s));
                }
            }
        }
        let Some((_, next, m, s)) = best else {
            break;
        };
        code = next;
        metrics = m;
        score = s;
        rounds += 1;
        visited.push(Candidate {
            code,
            metrics: metrics.clone(),
            score,
        });
    }
    SearchResult {
        candidates: rank(visited),
        evaluations_used: evaluations,
        wall_time: start.elapsed().as_secs_f64(),
        rounds,
    }
}
