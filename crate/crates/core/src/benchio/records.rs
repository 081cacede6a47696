//! JSON-lines benchmark files.
//!
//! One record per line, UTF-8, LF line endings:
//!
//! ```text
//! {"code":[64,64,2,2,64,...],"task":"seg","metrics":{"acc":72.5,"flops":2.35}}
//! ```
//!
//! `code` holds raw integers: the 27 grid values of a multi-resolution code,
//! or one option index per group for categorical spaces. Metric names are
//! free-form but must be the same, in the same order, on every line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coding::RawCode;
use crate::error::{Error, Result};
use crate::predictor::{split_point, MetricSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub code: Vec<i64>,
    pub task: String,
    pub metrics: MetricSet,
}

impl BenchRecord {
    pub fn new(code: &RawCode, task: impl Into<String>, metrics: MetricSet) -> Self {
        BenchRecord {
            code: code.values().iter().map(|&v| v as i64).collect(),
            task: task.into(),
            metrics,
        }
    }

    pub fn raw_code(&self) -> Result<RawCode> {
        RawCode::from_slice(&self.code)
    }
}

/// Which coding space the `code` arrays of a file belong to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeSpace {
    MultiResolution,
    /// One option index per group, `0 <= index < options[g]`.
    Categorical {
        options: Vec<usize>,
    },
}

impl CodeSpace {
    fn check(&self, code: &[i64]) -> Result<()> {
        match self {
            CodeSpace::MultiResolution => RawCode::from_slice(code).map(|_| ()),
            CodeSpace::Categorical { options } => {
                if code.len() != options.len() {
                    return Err(Error::Validation(format!(
                        "code has {} entries, expected {}",
                        code.len(),
                        options.len()
                    )));
                }
                for (g, (&v, &n)) in code.iter().zip(options).enumerate() {
                    if v < 0 || v as usize >= n {
                        return Err(Error::Validation(format!(
                            "group {g} option {v} not in 0..{n}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Reads a multi-resolution benchmark file.
pub fn load(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>> {
    load_with(path, &CodeSpace::MultiResolution)
}

pub fn load_with(path: impl AsRef<Path>, space: &CodeSpace) -> Result<Vec<BenchRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut out = Vec::new();
    let mut names: Option<Vec<String>> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BenchRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        space
            .check(&rec.code)
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        if let Some((name, _)) = rec.metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(parse_err(lineno, format!("metric {name:?} is not finite")));
        }
        let these: Vec<String> = rec.metrics.names().map(str::to_owned).collect();
        match &names {
            None => names = Some(these),
            Some(first) if *first != these => {
                return Err(parse_err(
                    lineno,
                    format!("metric names {these:?} differ from the first record's {first:?}"),
                ))
            }
            _ => {}
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records<W: Write>(records: &[BenchRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(records, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Training and validation halves, in file order.
pub fn split_records(records: &[BenchRecord]) -> (&[BenchRecord], &[BenchRecord]) {
    records.split_at(split_point(records.len()).min(records.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(code: &RawCode, acc: f64) -> BenchRecord {
        BenchRecord::new(
            code,
            "seg",
            MetricSet::new().with("acc", acc).with("flops", 1.5),
        )
    }

    #[test]
    fn roundtrip_preserves_order_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let records: Vec<_> = (0..20)
            .map(|i| {
                rec(
                    &crate::coding::round_code(&crate::coding::sample(i)),
                    70.0 + i as f64 / 7.0,
                )
            })
            .collect();
        save(&records, &a).unwrap();
        let loaded = load(&a).unwrap();
        assert_eq!(loaded, records);
        save(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn short_code_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&rec(&RawCode::default_init(), 71.0)).unwrap();
        let bad = good.replacen("[64,", "[", 1);
        std::fs::write(&path, format!("{good}\n{good}\n{bad}\n")).unwrap();
        match load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn off_grid_value_names_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let line = serde_json::to_string(&rec(&RawCode::default_init(), 71.0))
            .unwrap()
            .replacen("[64,64,2", "[64,64,7", 1);
        std::fs::write(&path, line).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("b1"), "{err}");
    }

    #[test]
    fn unknown_metrics_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let r = BenchRecord::new(
            &RawCode::default_init(),
            "det",
            MetricSet::new()
                .with("car_3d_ap", 76.4)
                .with("flops", 3.0)
                .with("latency_ms", 12.0),
        );
        save(std::slice::from_ref(&r), &path).unwrap();
        assert_eq!(load(&path).unwrap(), vec![r]);
    }

    #[test]
    fn inconsistent_metric_names_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let a = rec(&RawCode::default_init(), 70.0);
        let mut b = a.clone();
        b.metrics = MetricSet::new().with("flops", 1.5).with("acc", 70.0);
        save(&[a, b], &path).unwrap();
        assert!(matches!(load(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn categorical_space() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let space = CodeSpace::Categorical {
            options: vec![5; 6],
        };
        let r = BenchRecord {
            code: vec![0, 4, 2, 3, 1, 1],
            task: "nb201".into(),
            metrics: MetricSet::new().with("acc", 40.0).with("flops", 90.0),
        };
        save(std::slice::from_ref(&r), &path).unwrap();
        assert_eq!(load_with(&path, &space).unwrap(), vec![r.clone()]);
        let mut bad = r;
        bad.code[2] = 5;
        save(&[bad], &path).unwrap();
        assert!(load_with(&path, &space).is_err());
    }

    #[test]
    fn split_follows_file_order() {
        let records: Vec<_> = (0..2500)
            .map(|i| rec(&RawCode::default_init(), i as f64 / 100.0))
            .collect();
        let (train, val) = split_records(&records);
        assert_eq!((train.len(), val.len()), (2000, 500));
        assert_eq!(val[0].metrics.get("acc"), Some(20.0));
    }
}
