use std::collections::HashMap;
use std::io::Write;

use indexmap::IndexMap;

use super::BenchRecord;
use crate::error::{Error, Result};

/// Average ranks (1-based); tied values share the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties (Pearson
/// correlation of the rank vectors).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Validation("need at least 2 observations".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite observation".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Validation(
            "constant input has no rank correlation".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    pub tasks: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.tasks.iter().position(|t| t == a)?;
        let j = self.tasks.iter().position(|t| t == b)?;
        Some(self.values[i][j])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "task,{}", self.tasks.join(","))?;
        for (t, row) in self.tasks.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{t},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Pairwise Spearman correlation of `metric` across benchmarks that cover
/// the same set of codes.
pub fn cross_task_matrix(
    benchmarks: &IndexMap<String, Vec<BenchRecord>>,
    metric: &str,
) -> Result<CorrMatrix> {
    let mut tables: Vec<HashMap<&[i64], f64>> = Vec::with_capacity(benchmarks.len());
    for (task, recs) in benchmarks {
        let mut t = HashMap::with_capacity(recs.len());
        for r in recs {
            let v = r.metrics.get(metric).ok_or_else(|| {
                Error::Validation(format!("task {task}: a record lacks metric {metric:?}"))
            })?;
            t.insert(r.code.as_slice(), v);
        }
        tables.push(t);
    }
    let Some(first) = tables.first() else {
        return Err(Error::Validation("no benchmarks given".into()));
    };
    let mut codes: Vec<&[i64]> = first.keys().copied().collect();
    codes.sort();
    let names: Vec<&String> = benchmarks.keys().collect();
    for (k, t) in tables.iter().enumerate().skip(1) {
        let missing: Vec<String> = codes
            .iter()
            .filter(|c| !t.contains_key(*c))
            .chain(t.keys().filter(|c| !first.contains_key(*c)))
            .map(|c| format!("{c:?}"))
            .collect();
        if !missing.is_empty() {
            let shown = missing
                .iter()
                .take(5)
                .cloned()
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Validation(format!(
                "tasks {} and {} cover different codes ({} mismatched, e.g. {shown})",
                names[0],
                names[k],
                missing.len()
            )));
        }
    }
    let columns: Vec<Vec<f64>> = tables
        .iter()
        .map(|t| codes.iter().map(|c| t[c]).collect())
        .collect();
    let n = columns.len();
    let mut values = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let rho = spearman(&columns[i], &columns[j])?;
            values[i][j] = rho;
            values[j][i] = rho;
        }
    }
    Ok(CorrMatrix {
        tasks: benchmarks.keys().cloned().collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, sample standard deviation and range of every metric.
pub fn metric_summary(records: &[BenchRecord]) -> Vec<MetricSummary> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    first
        .metrics
        .names()
        .map(|name| {
            let vals: Vec<f64> = records.iter().filter_map(|r| r.metrics.get(name)).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = if n > 1.0 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            MetricSummary {
                name: name.to_owned(),
                mean,
                std: var.sqrt(),
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::MetricSet;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        // ranks x: 1 2 3 4, y: 2 1 4 3 -> sum d^2 = 4 -> 1 - 24/60 = 0.6
        assert_eq!(
            spearman(&[10.0, 20.0, 30.0, 40.0], &[15.0, 10.0, 40.0, 30.0]).unwrap(),
            0.6
        );
    }

    #[test]
    fn self_and_reverse() {
        let x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(spearman(&x, &x).unwrap(), 1.0);
        assert_eq!(spearman(&x, &rev).unwrap(), -1.0);
        let y: Vec<f64> = x.iter().rev().copied().collect();
        let xs: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let ys: Vec<f64> = xs.iter().rev().copied().collect();
        assert_eq!(spearman(&xs, &ys).unwrap(), -1.0);
        let _ = y;
    }

    #[test]
    fn ties_use_average_ranks() {
        assert_eq!(
            average_ranks(&[5.0, 1.0, 5.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 0.9486832980505138).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    fn bench(task: &str, codes: &[[i64; 2]], vals: &[f64]) -> Vec<BenchRecord> {
        codes
            .iter()
            .zip(vals)
            .map(|(c, &v)| BenchRecord {
                code: c.to_vec(),
                task: task.into(),
                metrics: MetricSet::new().with("acc", v),
            })
            .collect()
    }

    #[test]
    fn matrix_properties() {
        let codes = [[1, 1], [1, 2], [2, 1], [2, 2], [3, 1]];
        let a = [70.0, 72.0, 71.0, 75.0, 69.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let mut m = IndexMap::new();
        m.insert("a".to_string(), bench("a", &codes, &a));
        m.insert("a2".to_string(), bench("a2", &codes, &a));
        m.insert("neg".to_string(), bench("neg", &codes, &neg));
        m.insert(
            "other".to_string(),
            bench("other", &codes, &[1.0, 5.0, 2.0, 3.0, 4.0]),
        );
        let cm = cross_task_matrix(&m, "acc").unwrap();
        assert_eq!(cm.get("a", "a2"), Some(1.0));
        assert_eq!(cm.get("a", "neg"), Some(-1.0));
        for i in 0..4 {
            assert_eq!(cm.values[i][i], 1.0);
            for j in 0..4 {
                assert_eq!(cm.values[i][j], cm.values[j][i]);
            }
        }
    }

    #[test]
    fn matrix_rejects_code_mismatch() {
        let mut m = IndexMap::new();
        m.insert(
            "a".to_string(),
            bench("a", &[[1, 1], [1, 2], [2, 2]], &[1.0, 2.0, 3.0]),
        );
        m.insert(
            "b".to_string(),
            bench("b", &[[1, 1], [1, 2], [3, 3]], &[1.0, 2.0, 3.0]),
        );
        let err = cross_task_matrix(&m, "acc").unwrap_err().to_string();
        assert!(err.contains("[2, 2]") && err.contains("[3, 3]"), "{err}");
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(xs in proptest::collection::vec(-100.0f64..100.0, 3..40), seed in 0u64..1000) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v.sin() + ((i as u64 * 31 + seed) % 17) as f64).collect();
            prop_assume!(spearman(&xs, &ys).is_ok());
            let base = spearman(&xs, &ys).unwrap();
            let tx: Vec<f64> = xs.iter().map(|v| (v / 50.0).exp() * 3.0 - 1.0).collect();
            let ty: Vec<f64> = ys.iter().map(|v| v * v * v + 2.0).collect();
            prop_assert!((spearman(&tx, &ty).unwrap() - base).abs() < 1e-12);
        }
    }
}
