use std::path::{Path, PathBuf};

use ewca_core::eval::{
    best_candidate, default_epsilon_grid, epsilon_scores, split_error, stratified_splits, Embedding, EvalReport, LabeledDataset,
    Method, Split, SplitSpec,
};
use ewca_core::solver::fit_with_init;
use ewca_core::{make_synthetic_clusters, pca, Algorithm, DataMatrix, FitResult, SolverConfig, StiefelBasis};

use crate::args::{resolve_seed, BenchmarkArgs, EvaluateArgs, FitArgs, PcaArgs, SyntheticArgs, TransformArgs};
use crate::bench::{timing_sweep, EpsilonSpec};
use crate::error::{config_err, CliError, Result};
use crate::manifest::{Command, ConfigRecord, InputRecord, RunManifest};
use crate::parallel::map_ordered;
use crate::table::{read_matrix, read_table, write_matrix, LabelColumn, ReadOptions, Table, TableWriter};

pub const BASIS_FILE: &str = "basis.csv";
pub const PLAN_FILE: &str = "plan.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const PROJECTED_FILE: &str = "projected.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const BENCHMARK_RUNS_FILE: &str = "benchmark_runs.csv";
pub const DATA_FILE: &str = "data.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn input_record(path: &Path, options: &ReadOptions) -> InputRecord {
    InputRecord {
        path: path.to_path_buf(),
        has_header: options.has_header,
        label_column: options.label_column.as_ref().map(ToString::to_string),
    }
}

fn record_options(input: &InputRecord) -> ReadOptions {
    ReadOptions { has_header: input.has_header, label_column: input.label_column.as_ref().map(|c| LabelColumn::from(c.as_str())) }
}

pub fn fit(args: &FitArgs) -> Result<FitResult> {
    let (input, config, algorithm, out) = match &args.manifest {
        Some(path) => {
            let m = RunManifest::read(path)?;
            if m.command != Command::Fit {
                return Err(config_err!("{} records a `{}` run, not `fit`", path.display(), m.command.name()));
            }
            let record = m.config.ok_or_else(|| config_err!("{} has no solver config", path.display()))?;
            let (config, algorithm) = record.to_config(m.seed)?;
            (m.input, config, algorithm, args.out.clone().unwrap_or(m.output_dir))
        }
        None => {
            let path = args.input.path()?;
            let k = args.k.ok_or_else(|| config_err!("--k is required"))?;
            let epsilon = args.epsilon.ok_or_else(|| config_err!("--epsilon is required"))?;
            let config = args.solver.config(k, epsilon)?;
            let out = args.out.clone().ok_or_else(|| config_err!("--out is required"))?;
            (input_record(path, &args.input.read_options()), config, args.solver.algo.into(), out)
        }
    };
    run_fit(&input, &config, algorithm, &out)
}

fn run_fit(input: &InputRecord, config: &SolverConfig, algorithm: Algorithm, out: &Path) -> Result<FitResult> {
    let table = read_table(&input.path, &record_options(input))?;
    let mut manifest = RunManifest::new(Command::Fit, input.clone(), out, config.seed);
    manifest.config = Some(ConfigRecord::new(config, algorithm));
    let result = fit_with_init(&table.data, config, algorithm, None)?;

    create_dir(out)?;
    write_matrix(&out.join(BASIS_FILE), "fit", "u", result.basis.as_mat())?;
    write_matrix(&out.join(PLAN_FILE), "fit", "s", result.plan.values())?;
    let mut trace = TableWriter::create(&out.join(TRACE_FILE), "fit", &["iteration".into(), "objective".into()])?;
    for (t, v) in result.objective_trace.iter().enumerate() {
        trace.write_fields([t.to_string(), v.to_string()])?;
    }
    trace.finish()?;
    manifest.extra.insert("iterations".into(), (result.iterations as i64).into());
    manifest.extra.insert("converged".into(), result.converged.into());
    manifest.extra.insert("wall_time_s".into(), result.wall_time.into());
    manifest.finish()?;
    Ok(result)
}

pub fn pca_command(args: &PcaArgs) -> Result<StiefelBasis> {
    let path = args.input.path()?;
    let options = args.input.read_options();
    let table = read_table(path, &options)?;
    let mut manifest = RunManifest::new(Command::Pca, input_record(path, &options), &args.out, 0);
    manifest.extra.insert("k".into(), (args.k as i64).into());
    manifest.extra.insert("center".into(), (!args.no_center).into());
    let (basis, _) = pca(&table.data, args.k, !args.no_center)?;
    create_dir(&args.out)?;
    write_matrix(&args.out.join(BASIS_FILE), "pca", "u", basis.as_mat())?;
    manifest.finish()?;
    Ok(basis)
}

pub fn transform(args: &TransformArgs) -> Result<ewca_core::Mat<f64>> {
    let basis = StiefelBasis::new(read_matrix(&args.basis)?)?;
    let path = args.input.path()?;
    let options = args.input.read_options();
    let table = read_table(path, &options)?;
    let coords = basis.coordinates(&table.data)?;
    let mut manifest = RunManifest::new(Command::Transform, input_record(path, &options), &args.out, 0);
    manifest.extra.insert("basis".into(), args.basis.display().to_string().into());
    create_dir(&args.out)?;
    let projected = coords.transpose().to_owned();
    write_matrix(&args.out.join(PROJECTED_FILE), "transform", "z", projected.as_ref())?;
    manifest.finish()?;
    Ok(projected)
}

fn labeled(table: Table, path: &Path) -> Result<LabeledDataset> {
    let labels = table.labels.ok_or_else(|| config_err!("{}: --label-col is required", path.display()))?;
    Ok(LabeledDataset::new(table.data, labels)?)
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub k: usize,
    pub epsilon: Option<f64>,
    pub method: &'static str,
    pub report: EvalReport,
}

fn split_errors(
    dataset: &LabeledDataset,
    embedding: &Embedding,
    splits: &[Split],
    jobs: usize,
) -> Result<EvalReport> {
    let embedding = ewca_core::eval::resolve_embedding(dataset, embedding)?;
    let errors = map_ordered(splits, jobs, |_, split| split_error(dataset, &embedding, split));
    EvalReport::from_errors(errors.into_iter().collect::<Result<Vec<_>, _>>()?).map_err(Into::into)
}

/// Per split: choose `ε` on inner splits of the training half, refit on the
/// whole training half and score the test half. Returns the report and the
/// selected values.
fn selected_epsilon_errors(
    dataset: &LabeledDataset,
    candidates: &[f64],
    k: usize,
    base: &SolverConfig,
    algorithm: Algorithm,
    splits: &[Split],
    inner: &SplitSpec,
    jobs: usize,
) -> Result<(EvalReport, Vec<f64>)> {
    let per_split = map_ordered(splits, jobs, |i, split| -> Result<(f64, f64)> {
        let train = dataset.subset(&split.train)?;
        let inner_spec = SplitSpec { seed: inner.seed.wrapping_add(i as u64 + 1), ..*inner };
        let scores = epsilon_scores(&train, candidates, k, &inner_spec, base, algorithm)?;
        let epsilon = best_candidate(candidates, &scores);
        let config = SolverConfig { epsilon, k, ..base.clone() };
        let embedding = Embedding::refit(Method::Ewca { config, algorithm });
        Ok((split_error(dataset, &embedding, split)?, epsilon))
    });
    let (errors, chosen): (Vec<f64>, Vec<f64>) = per_split.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok((EvalReport::from_errors(errors)?, chosen))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<Vec<EvalRow>> {
    let path = args.input.path()?;
    let options = args.input.read_options();
    if options.label_column.is_none() {
        return Err(config_err!("--label-col is required for evaluate"));
    }
    let dataset = labeled(read_table(path, &options)?, path)?;
    let seed = args.solver.seed()?;
    let spec = SplitSpec::new(args.train_frac, args.splits, seed);
    let splits = stratified_splits(&dataset.labels, &spec)?;
    let inner = SplitSpec::new(args.train_frac, args.inner_splits, seed);
    let algorithm: Algorithm = args.solver.algo.into();
    let candidates = match &args.eps_grid {
        Some(grid) => grid.clone(),
        None => default_epsilon_grid(&dataset.data, args.eps_count),
    };
    if let Some(&k) = args.ks.iter().find(|&&k| k == 0 || k >= dataset.data.dim()) {
        return Err(config_err!("k = {k} must be in [1, {})", dataset.data.dim()));
    }

    let mut manifest = RunManifest::new(Command::Evaluate, input_record(path, &options), &args.out, seed);
    manifest.config = Some(ConfigRecord::new(&args.solver.config(args.ks[0], args.epsilon.unwrap_or(0.0))?, algorithm));
    manifest.extra.insert("ks".into(), args.ks.iter().map(|&k| k as i64).collect::<Vec<_>>().into());
    manifest.extra.insert("splits".into(), (args.splits as i64).into());
    manifest.extra.insert("train_frac".into(), args.train_frac.into());
    manifest.extra.insert("inner_splits".into(), (args.inner_splits as i64).into());
    manifest.extra.insert("refit_per_split".into(), (!args.fit_once).into());
    let mode = if args.epsilon.is_some() { "fixed" } else if args.grid { "grid" } else { "select" };
    manifest.extra.insert("epsilon_mode".into(), mode.into());
    manifest.extra.insert("epsilon_candidates".into(), candidates.clone().into());

    create_dir(&args.out)?;
    let header: Vec<String> = ["k", "epsilon", "mean", "q1", "q3", "method"].map(String::from).to_vec();
    let mut writer = TableWriter::create(&args.out.join(RESULTS_FILE), "evaluate", &header)?;
    let mut rows = Vec::new();
    let mut emit = |row: EvalRow, writer: &mut TableWriter| -> Result<()> {
        let eps = row.epsilon.map(|e| e.to_string()).unwrap_or_default();
        writer.write_fields([
            row.k.to_string(),
            eps,
            row.report.mean.to_string(),
            row.report.q1.to_string(),
            row.report.q3.to_string(),
            row.method.to_string(),
        ])?;
        writer.flush()?;
        rows.push(row);
        Ok(())
    };
    let fitted = |method: Method| Embedding::Fitted { method, refit_per_split: !args.fit_once };

    let raw = split_errors(&dataset, &Embedding::Raw, &splits, args.jobs)?;
    for &k in &args.ks {
        emit(EvalRow { k, epsilon: None, method: "raw", report: raw.clone() }, &mut writer)?;
        let pca_method = Method::Pca { k, center: !args.solver.no_center };
        let report = split_errors(&dataset, &fitted(pca_method), &splits, args.jobs)?;
        emit(EvalRow { k, epsilon: None, method: "pca", report }, &mut writer)?;

        let fixed: Vec<f64> = match (args.epsilon, args.grid) {
            (Some(e), _) => vec![e],
            (None, true) => candidates.clone(),
            (None, false) => Vec::new(),
        };
        for epsilon in fixed {
            let method = Method::Ewca { config: args.solver.config(k, epsilon)?, algorithm };
            let report = split_errors(&dataset, &fitted(method), &splits, args.jobs)?;
            emit(EvalRow { k, epsilon: Some(epsilon), method: "ewca", report }, &mut writer)?;
        }
        if args.epsilon.is_none() && !args.grid {
            let base = args.solver.config(k, candidates[0])?;
            let (report, chosen) =
                selected_epsilon_errors(&dataset, &candidates, k, &base, algorithm, &splits, &inner, args.jobs)?;
            let mut sorted = chosen;
            sorted.sort_unstable_by(f64::total_cmp);
            let median = ewca_core::eval::quantile(&sorted, 0.5);
            emit(EvalRow { k, epsilon: Some(median), method: "ewca-selected", report }, &mut writer)?;
        }
    }
    writer.finish()?;
    manifest.finish()?;
    Ok(rows)
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<Vec<crate::bench::TimingRow>> {
    let path = args.input.path()?;
    let options = args.input.read_options();
    let table = read_table(path, &options)?;
    let epsilon = match (args.epsilon, args.relative_epsilon) {
        (Some(e), None) => EpsilonSpec::Absolute(e),
        (None, Some(f)) => EpsilonSpec::Relative(f),
        _ => return Err(config_err!("give exactly one of --epsilon and --relative-epsilon")),
    };
    let config = args.solver.config(args.k, 1.0)?;
    let algorithms: Vec<Algorithm> = args.algos.iter().map(|&a| a.into()).collect();
    let mut manifest = RunManifest::new(Command::Benchmark, input_record(path, &options), &args.out, config.seed);
    manifest.config = Some(ConfigRecord::new(&config, algorithms[0]));
    manifest.extra.insert("dims".into(), args.dims.iter().map(|&d| d as i64).collect::<Vec<_>>().into());
    manifest.extra.insert("repeats".into(), (args.repeats as i64).into());
    let eps_note = match epsilon {
        EpsilonSpec::Absolute(e) => format!("absolute {e}"),
        EpsilonSpec::Relative(f) => format!("relative {f}"),
    };
    manifest.extra.insert("epsilon".into(), eps_note.into());

    let rows = timing_sweep(&table.data, &args.dims, epsilon, &config, &algorithms, args.repeats, config.seed)?;
    create_dir(&args.out)?;
    let header: Vec<String> =
        ["algo", "d", "repeats", "mean_s", "q1_s", "q3_s", "objective"].map(String::from).to_vec();
    let mut summary = TableWriter::create(&args.out.join(BENCHMARK_FILE), "benchmark", &header)?;
    let header: Vec<String> = ["algo", "d", "repeat", "seconds", "objective", "iterations"].map(String::from).to_vec();
    let mut runs = TableWriter::create(&args.out.join(BENCHMARK_RUNS_FILE), "benchmark", &header)?;
    for row in &rows {
        let mean_objective = row.objectives.iter().sum::<f64>() / row.objectives.len() as f64;
        summary.write_fields([
            row.algorithm.name().to_string(),
            row.dim.to_string(),
            row.times.len().to_string(),
            row.mean.to_string(),
            row.q1.to_string(),
            row.q3.to_string(),
            mean_objective.to_string(),
        ])?;
        for (r, ((t, o), it)) in row.times.iter().zip(&row.objectives).zip(&row.iterations).enumerate() {
            runs.write_fields([
                row.algorithm.name().to_string(),
                row.dim.to_string(),
                r.to_string(),
                t.to_string(),
                o.to_string(),
                it.to_string(),
            ])?;
        }
    }
    summary.finish()?;
    runs.finish()?;
    manifest.finish()?;
    Ok(rows)
}

pub fn synthetic(args: &SyntheticArgs) -> Result<PathBuf> {
    let seed = resolve_seed(args.seed)?;
    let set = make_synthetic_clusters(args.n_per_class, args.d, args.classes, args.separation, seed)?;
    create_dir(&args.out)?;
    let path = args.out.join(DATA_FILE);
    write_labeled(&path, "synthetic", &set.data, &set.labels)?;
    let input = InputRecord { path: path.clone(), has_header: true, label_column: Some("label".into()) };
    let mut manifest = RunManifest::new(Command::Synthetic, input, &args.out, seed);
    manifest.extra.insert("n_per_class".into(), (args.n_per_class as i64).into());
    manifest.extra.insert("d".into(), (args.d as i64).into());
    manifest.extra.insert("classes".into(), (args.classes as i64).into());
    manifest.extra.insert("separation".into(), args.separation.into());
    manifest.finish()?;
    Ok(path)
}

/// Row-per-sample CSV with columns `x1..xd,label`.
pub fn write_labeled(path: &Path, command: &str, data: &DataMatrix, labels: &[usize]) -> Result<()> {
    let mut header: Vec<String> = (1..=data.dim()).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    let mut w = TableWriter::create(path, command, &header)?;
    for (j, label) in labels.iter().enumerate() {
        let mut fields: Vec<String> = data.sample(j).iter().map(|v| v.to_string()).collect();
        fields.push(label.to_string());
        w.write_fields(&fields)?;
    }
    w.finish()
}
