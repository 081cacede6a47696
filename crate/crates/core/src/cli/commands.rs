use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use indexmap::IndexMap;
use serde_json::json;

use super::args::*;
use super::manifest::{default_path, RunManifest};
use crate::baselines::{netadapt_greedy, predictor_topk, random_search, SearchResult};
use crate::benchio::{self, gen_benchmark, CodeSpace, SynthParams, SyntheticTask};
use crate::coding::{self, round_code, ArchCode, Head, InputGeometry, RawCode};
use crate::error::{Error, Result};
use crate::eval::{Evaluator, Objective, OracleEvaluator};
use crate::netmodel::{self, FlopsTable};
use crate::predictor::{self, Predictor, TrainConfig};
use crate::propagation::{self, PropagationConfig, PropagationTrace, StepSpace, Strategy};

/// Collects what a run read and wrote for its manifest.
struct Run {
    command: &'static str,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Run {
            command,
            config: serde_json::Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }
}

pub(super) fn dispatch(cli: &Cli, argv: &[OsString]) -> Result<()> {
    let start = Instant::now();
    let run = match &cli.command {
        Command::Bench(BenchCmd::Gen(a)) => bench_gen(a)?,
        Command::Bench(BenchCmd::Stats(a)) => bench_stats(a)?,
        Command::Predictor(PredictorCmd::Train(a)) => predictor_train(a)?,
        Command::Search(SearchCmd::Continuous(a)) => search_single(a, Strategy::Continuous)?,
        Command::Search(SearchCmd::Wta(a)) => search_single(a, Strategy::WinnerTakesAll)?,
        Command::Search(SearchCmd::Multi(a)) => search_multi(a)?,
        Command::Search(SearchCmd::Onehot(a)) => search_onehot(a)?,
        Command::Transfer(a) => transfer(a)?,
        Command::Baseline(BaselineCmd::Random(a)) => baseline_random(a)?,
        Command::Baseline(BaselineCmd::Topk(a)) => baseline_topk(a)?,
        Command::Baseline(BaselineCmd::Netadapt(a)) => baseline_netadapt(a)?,
        Command::Flops(a) => flops(a)?,
        Command::Corr(a) => corr(a)?,
    };
    let path = match (&cli.manifest, run.outputs.first()) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => default_path(out),
        // Nothing written and no manifest requested.
        (None, None) => return Ok(()),
    };
    let manifest = RunManifest {
        tool: "ncp".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: run.command.into(),
        argv: argv
            .iter()
            .map(|a| a.to_string_lossy().into_owned())
            .collect(),
        config: run.config,
        seeds: run.seeds,
        inputs: run.inputs,
        outputs: run.outputs,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    manifest.save(path)
}

fn geometry(g: &GeometryArgs) -> Result<(Head, InputGeometry)> {
    let (h, w) = InputGeometry::parse_size(&g.input)?;
    let mut input = InputGeometry::new(h, w);
    input.num_classes = g.classes;
    Ok((g.head, input))
}

fn table(g: &GeometryArgs) -> Result<FlopsTable> {
    let (head, input) = geometry(g)?;
    FlopsTable::new(head, input)
}

fn parse_raw(s: &str) -> Result<RawCode> {
    if s.trim() == "default" {
        Ok(RawCode::default_init())
    } else {
        s.parse()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn prop_config(a: &PropArgs, strategy: Strategy) -> Result<PropagationConfig> {
    let lambda = match (a.lambda, a.profile) {
        (Some(l), _) => l,
        (None, Some(p)) => p.lambda(),
        (None, None) => PropagationConfig::default().lambda,
    };
    let cfg = PropagationConfig {
        strategy,
        lambda,
        eta: a.eta,
        max_iters: a.iters,
        retarget: !a.fixed_targets,
        step_space: match a.step_space {
            StepSpaceArg::Grid => StepSpace::Grid,
            StepSpaceArg::Normalized => StepSpace::Normalized,
        },
        acc_metric: a.acc_metric.clone(),
        flops_metric: a.flops_metric.clone(),
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_predictor(run: &mut Run, path: &Path) -> Result<Predictor> {
    run.input(path);
    Predictor::load(path)
}

/// Writes the trace and result files of a propagation run and prints a summary.
fn finish_search(
    run: &mut Run,
    a: &PropArgs,
    code: &ArchCode,
    trace: &PropagationTrace,
    predictors: &[&Predictor],
    table: Option<&FlopsTable>,
) -> Result<()> {
    let raw = round_code(code);
    let predictions: Vec<_> = predictors
        .iter()
        .map(|p| p.predict(code.as_slice()))
        .collect();
    let flops = table.map(|t| t.lookup_raw(&raw));
    println!("code: {raw}");
    for (k, m) in predictions.iter().enumerate() {
        let cells: Vec<String> = m.iter().map(|(n, v)| format!("{n}={v:.4}")).collect();
        println!("task {k}: {}", cells.join(" "));
    }
    if let Some(f) = flops {
        println!("flops: {f:.6} GFLOPs");
    }
    println!("iterations: {} ({})", trace.iterations(), trace.stop);
    if let Some(path) = &a.trace {
        trace
            .write_csv(create(path)?)
            .map_err(|e| Error::io(path, e))?;
        run.output(path);
    }
    if let Some(path) = &a.out {
        write_json(
            path,
            &json!({
                "code": raw.to_string(),
                "predictions": predictions,
                "flops": flops,
                "iterations": trace.iterations(),
                "evaluations": trace.evaluations,
                "stop_reason": trace.stop,
            }),
        )?;
        run.output(path);
    }
    Ok(())
}

fn bench_gen(a: &BenchGenArgs) -> Result<Run> {
    let mut run = Run::new("bench gen");
    let table = table(&a.geometry)?;
    let task_seed = a.task_seed.unwrap_or(a.seed);
    let params = SynthParams {
        noise: a.noise,
        ..Default::default()
    };
    let task = match &a.share_with {
        Some(path) => {
            run.input(path);
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let base: SyntheticTask = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            let mut t = base.sharing(a.name.clone(), a.shared, &params, task_seed);
            t.noise = a.noise;
            t
        }
        None => SyntheticTask::random(a.name.clone(), &params, task_seed),
    };
    if a.n == 0 {
        return Err(Error::Validation("--n must be at least 1".into()));
    }
    let records = gen_benchmark(&task, a.n, a.seed, &table);
    benchio::save(&records, &a.out)?;
    run.output(&a.out);
    if let Some(path) = &a.task_out {
        write_json(path, &serde_json::to_value(&task).expect("task serializes"))?;
        run.output(path);
    }
    println!("wrote {} records to {}", records.len(), a.out.display());
    run.seeds = vec![a.seed, task_seed];
    run.config =
        json!({"task": task, "n": a.n, "input": a.geometry.input, "head": a.geometry.head});
    Ok(run)
}

fn bench_stats(a: &BenchStatsArgs) -> Result<Run> {
    let mut run = Run::new("bench stats");
    run.input(&a.data);
    let records = benchio::load(&a.data)?;
    println!("records: {}", records.len());
    for s in benchio::metric_summary(&records) {
        println!(
            "{}: mean {:.4} std {:.4} min {:.4} max {:.4}",
            s.name, s.mean, s.std, s.min, s.max
        );
    }
    Ok(run)
}

fn onehot(indices: &[i64], groups: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; groups.iter().sum()];
    let mut start = 0;
    for (&i, &g) in indices.iter().zip(groups) {
        out[start + i as usize] = 1.0;
        start += g;
    }
    out
}

fn predictor_train(a: &TrainArgs) -> Result<Run> {
    let mut run = Run::new("predictor train");
    run.input(&a.data);
    let (records, inputs): (_, Vec<Vec<f64>>) = match &a.groups {
        Some(groups) => {
            let records = benchio::load_with(
                &a.data,
                &CodeSpace::Categorical {
                    options: groups.clone(),
                },
            )?;
            let inputs = records.iter().map(|r| onehot(&r.code, groups)).collect();
            (records, inputs)
        }
        None => {
            let records = benchio::load(&a.data)?;
            let inputs = records
                .iter()
                .map(|r| r.raw_code().map(|c| c.normalize().as_slice().to_vec()))
                .collect::<Result<_>>()?;
            (records, inputs)
        }
    };
    let targets: Vec<_> = records.iter().map(|r| r.metrics.clone()).collect();
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        ..Default::default()
    };
    let (p, report) = predictor::train(&inputs, &targets, a.metrics.as_deref(), &cfg)?;
    p.save(&a.out)?;
    run.output(&a.out);
    println!("train {} / val {}", report.n_train, report.n_val);
    for m in &report.metrics {
        let rho = m.spearman.map_or("n/a".to_string(), |r| format!("{r:.4}"));
        println!(
            "{}: val MAE {:.4} (std {:.4}), spearman {rho}",
            m.name, m.mae, m.std
        );
    }
    if let Some(path) = &a.report {
        write_json(
            path,
            &serde_json::to_value(&report).expect("report serializes"),
        )?;
        run.output(path);
    }
    run.seeds = vec![a.seed];
    run.config = json!({"train": cfg, "groups": a.groups});
    Ok(run)
}

fn search_single(a: &SingleSearchArgs, strategy: Strategy) -> Result<Run> {
    let mut run = Run::new(match strategy {
        Strategy::WinnerTakesAll => "search wta",
        _ => "search continuous",
    });
    let p = load_predictor(&mut run, &a.predictor)?;
    let cfg = prop_config(&a.prop, strategy)?;
    let table = table(&a.geometry)?;
    let init = parse_raw(&a.init)?.normalize();
    let (code, trace) = match strategy {
        Strategy::WinnerTakesAll => propagation::propagate_wta(&p, &init, &cfg, &table)?,
        _ => propagation::propagate_continuous(&p, &init, &cfg)?,
    };
    finish_search(&mut run, &a.prop, &code, &trace, &[&p], Some(&table))?;
    run.config = json!({"propagation": cfg, "init": round_code(&init).to_string(), "input": a.geometry.input, "head": a.geometry.head});
    Ok(run)
}

fn search_multi(a: &MultiSearchArgs) -> Result<Run> {
    let mut run = Run::new("search multi");
    let predictors = a
        .predictors
        .iter()
        .map(|p| load_predictor(&mut run, p))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Predictor> = predictors.iter().collect();
    let strategy = match a.strategy {
        StrategyArg::Continuous => Strategy::Continuous,
        StrategyArg::Wta => Strategy::WinnerTakesAll,
    };
    let cfg = prop_config(&a.prop, strategy)?;
    let table = table(&a.geometry)?;
    let init = parse_raw(&a.init)?.normalize();
    let (code, trace) =
        propagation::propagate_multitask(&refs, a.weights.as_deref(), &init, &cfg, Some(&table))?;
    finish_search(&mut run, &a.prop, &code, &trace, &refs, Some(&table))?;
    run.config =
        json!({"propagation": cfg, "weights": a.weights, "init": round_code(&init).to_string()});
    Ok(run)
}

fn search_onehot(a: &OnehotArgs) -> Result<Run> {
    let mut run = Run::new("search onehot");
    let p = load_predictor(&mut run, &a.predictor)?;
    let mut cfg = prop_config(&a.prop, Strategy::OneHot)?;
    cfg.onehot_project_every = a.project_every;
    cfg.validate()?;
    let indices: Vec<i64> = match &a.init {
        Some(v) => v.iter().map(|&i| i as i64).collect(),
        None => vec![0; a.groups.len()],
    };
    if indices.len() != a.groups.len()
        || indices
            .iter()
            .zip(&a.groups)
            .any(|(&i, &g)| i as usize >= g)
    {
        return Err(Error::Validation(
            "--init needs one valid option index per group".into(),
        ));
    }
    let init = onehot(&indices, &a.groups);
    let (code, trace) = propagation::propagate_onehot(&p, &init, &a.groups, &cfg)?;
    let mut choice = Vec::new();
    let mut start = 0;
    for &g in &a.groups {
        choice.push(
            code[start..start + g]
                .iter()
                .position(|&v| v == 1.0)
                .unwrap_or(0),
        );
        start += g;
    }
    let pred = p.predict(&code);
    println!("options: {choice:?}");
    let cells: Vec<String> = pred.iter().map(|(n, v)| format!("{n}={v:.4}")).collect();
    println!("predicted: {}", cells.join(" "));
    println!(
        "iterations: {} ({}), steps: {}",
        trace.iterations(),
        trace.stop,
        propagation::projection_steps(&trace, &cfg)
    );
    if let Some(path) = &a.prop.trace {
        trace
            .write_csv(create(path)?)
            .map_err(|e| Error::io(path, e))?;
        run.output(path);
    }
    if let Some(path) = &a.prop.out {
        write_json(
            path,
            &json!({"options": choice, "predictions": pred, "iterations": trace.iterations(), "stop_reason": trace.stop}),
        )?;
        run.output(path);
    }
    run.config = json!({"propagation": cfg, "groups": a.groups, "init": indices});
    Ok(run)
}

fn transfer(a: &TransferArgs) -> Result<Run> {
    let mut run = Run::new("transfer");
    let p = load_predictor(&mut run, &a.predictor)?;
    let cfg = prop_config(&a.prop, Strategy::Continuous)?;
    let source = parse_raw(&a.source)?.normalize();
    let (code, trace) = propagation::transfer(&source, &p, &cfg)?;
    finish_search(&mut run, &a.prop, &code, &trace, &[&p], None)?;
    run.config = json!({"propagation": cfg, "source": round_code(&source).to_string()});
    Ok(run)
}

/// Loaded scorer for the baseline commands.
enum Scorer {
    Predictor(Predictor),
    Oracle(SyntheticTask, FlopsTable),
}

impl Scorer {
    fn load(run: &mut Run, a: &ScoreArgs) -> Result<Self> {
        match (&a.predictor, &a.task) {
            (Some(p), _) => Ok(Scorer::Predictor(load_predictor(run, p)?)),
            (None, Some(path)) => {
                run.input(path);
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let task = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
                    path: path.clone(),
                    detail: e.to_string(),
                })?;
                Ok(Scorer::Oracle(task, table(&a.geometry)?))
            }
            (None, None) => Err(Error::Usage("give --predictor or --task".into())),
        }
    }

    fn with<R>(&self, f: impl FnOnce(&dyn Evaluator) -> R) -> R {
        match self {
            Scorer::Predictor(p) => f(p),
            Scorer::Oracle(task, table) => f(&OracleEvaluator { task, table }),
        }
    }
}

fn finish_baseline(run: &mut Run, a: &ScoreArgs, result: &SearchResult) -> Result<()> {
    if let Some(best) = result.best() {
        println!("best: {} score {:.4}", best.code, best.score);
    }
    println!("evaluations: {}", result.evaluations_used);
    if let Some(path) = &a.out {
        result
            .write_csv(create(path)?)
            .map_err(|e| Error::io(path, e))?;
        run.output(path);
    }
    Ok(())
}

fn baseline_random(a: &RandomArgs) -> Result<Run> {
    let mut run = Run::new("baseline random");
    let scorer = Scorer::load(&mut run, &a.score)?;
    if a.budget == 0 {
        return Err(Error::Validation("--budget must be at least 1".into()));
    }
    let objective = Objective::new(a.score.lambda);
    let result = scorer.with(|e| random_search(a.budget, a.keep, e, &objective, a.seed));
    finish_baseline(&mut run, &a.score, &result)?;
    run.seeds = vec![a.seed];
    run.config = json!({"budget": a.budget, "keep": a.keep, "objective": objective});
    Ok(run)
}

fn baseline_topk(a: &TopkArgs) -> Result<Run> {
    let mut run = Run::new("baseline topk");
    let scorer = Scorer::load(&mut run, &a.score)?;
    if a.k == 0 || a.k > a.budget {
        return Err(Error::Validation("need 1 <= --k <= --budget".into()));
    }
    let objective = Objective::new(a.score.lambda);
    let result = scorer.with(|e| predictor_topk(a.budget, a.k, e, &objective, a.seed));
    finish_baseline(&mut run, &a.score, &result)?;
    run.seeds = vec![a.seed];
    run.config = json!({"budget": a.budget, "k": a.k, "objective": objective});
    Ok(run)
}

fn baseline_netadapt(a: &NetadaptArgs) -> Result<Run> {
    let mut run = Run::new("baseline netadapt");
    let scorer = Scorer::load(&mut run, &a.score)?;
    let table = table(&a.score.geometry)?;
    let objective = Objective::new(a.score.lambda);
    let init = parse_raw(&a.init)?.normalize();
    let result = scorer.with(|e| netadapt_greedy(&init, e, &table, &objective, a.rounds));
    println!("rounds: {}", result.rounds);
    finish_baseline(&mut run, &a.score, &result)?;
    run.config =
        json!({"rounds": a.rounds, "init": round_code(&init).to_string(), "objective": objective});
    Ok(run)
}

fn flops(a: &FlopsArgs) -> Result<Run> {
    let mut run = Run::new("flops");
    let (head, input) = geometry(&a.geometry)?;
    let raw = parse_raw(&a.code)?;
    let report = netmodel::cost(&coding::decode_raw(&raw, head, input))?;
    println!("flops: {:.6} GFLOPs", report.flops);
    println!("params: {:.6} M", report.params);
    if let Some(path) = &a.layers {
        report
            .write_csv(create(path)?)
            .map_err(|e| Error::io(path, e))?;
        run.output(path);
    }
    run.config = json!({"code": raw.to_string(), "input": a.geometry.input, "head": head});
    Ok(run)
}

fn corr(a: &CorrArgs) -> Result<Run> {
    let mut run = Run::new("corr");
    let mut benchmarks = IndexMap::new();
    for path in &a.data {
        run.input(path);
        let records = benchio::load(path)?;
        let name = records
            .first()
            .map(|r| r.task.clone())
            .unwrap_or_else(|| path.display().to_string());
        if benchmarks.insert(name.clone(), records).is_some() {
            return Err(Error::Validation(format!("task {name:?} appears twice")));
        }
    }
    let m = benchio::cross_task_matrix(&benchmarks, &a.metric)?;
    let mut out = Vec::new();
    m.write_csv(&mut out).expect("in-memory write");
    print!("{}", String::from_utf8_lossy(&out));
    if let Some(path) = &a.out {
        std::fs::write(path, &out).map_err(|e| Error::io(path, e))?;
        run.output(path);
    }
    run.config = json!({"metric": a.metric});
    Ok(run)
}
