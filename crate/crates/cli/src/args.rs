use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ewca_core::{Algorithm, LambdaMinStrategy, SolverConfig};

use crate::error::{config_err, Result};
use crate::table::{LabelColumn, ReadOptions};

pub const SEED_ENV: &str = "EWCA_SEED";

#[derive(Debug, Parser)]
#[command(name = "ewca", version, about = "Entropic Wasserstein component analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Fit an EWCA basis; writes basis.csv, plan.csv, trace.csv and manifest.toml.
    Fit(FitArgs),
    /// Fit a PCA basis; writes basis.csv and manifest.toml.
    Pca(PcaArgs),
    /// Project samples onto a basis; writes projected.csv.
    Transform(TransformArgs),
    /// 1-NN error of raw data, PCA and EWCA over repeated stratified splits.
    Evaluate(EvaluateArgs),
    /// Wall time of both solvers over subsampled feature dimensions.
    Benchmark(BenchmarkArgs),
    /// Write labeled Gaussian clusters to data.csv.
    Synthetic(SyntheticArgs),
}

#[derive(Clone, Debug, Args)]
pub struct InputArgs {
    /// Row-per-sample CSV file.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// The first row holds data, not column names.
    #[arg(long)]
    pub no_header: bool,
    /// Label column, by header name or zero-based index; it is excluded from the features.
    #[arg(long, value_parser = |s: &str| Ok::<_, std::convert::Infallible>(LabelColumn::from(s)))]
    pub label_col: Option<LabelColumn>,
}

impl InputArgs {
    pub fn read_options(&self) -> ReadOptions {
        ReadOptions { has_header: !self.no_header, label_column: self.label_col.clone() }
    }

    pub fn path(&self) -> Result<&PathBuf> {
        self.input.as_ref().ok_or_else(|| config_err!("--input is required"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Bcd,
    Mm,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Bcd => Algorithm::Bcd,
            AlgoArg::Mm => Algorithm::Mm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LambdaMinArg {
    /// Exact for n <= 2000, the -1/n bound above.
    Auto,
    Exact,
    Bound,
}

#[derive(Clone, Debug, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "bcd")]
    pub algo: AlgoArg,
    /// Center the data before fitting (default).
    #[arg(long, overrides_with = "no_center")]
    pub center: bool,
    #[arg(long)]
    pub no_center: bool,
    #[arg(long, value_enum, default_value = "auto")]
    pub lambda_min: LambdaMinArg,
    /// Falls back to $EWCA_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e-7)]
    pub outer_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub outer_max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub sinkhorn_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub sinkhorn_max_iter: usize,
    /// Inner iterations per outer step of the MM solver.
    #[arg(long, default_value_t = 20)]
    pub mm_inner: usize,
    /// Run Sinkhorn in the log domain throughout.
    #[arg(long)]
    pub log_domain: bool,
}

impl SolverArgs {
    pub fn seed(&self) -> Result<u64> {
        resolve_seed(self.seed)
    }

    pub fn config(&self, k: usize, epsilon: f64) -> Result<SolverConfig> {
        Ok(SolverConfig {
            epsilon,
            k,
            sinkhorn_tol: self.sinkhorn_tol,
            sinkhorn_max_iter: self.sinkhorn_max_iter,
            outer_tol: self.outer_tol,
            outer_max_iter: self.outer_max_iter,
            mm_inner_iter: self.mm_inner,
            center_data: !self.no_center,
            lambda_min_strategy: match self.lambda_min {
                LambdaMinArg::Auto => None,
                LambdaMinArg::Exact => Some(LambdaMinStrategy::Exact),
                LambdaMinArg::Bound => Some(LambdaMinStrategy::GershgorinBound),
            },
            log_domain: self.log_domain,
            seed: self.seed()?,
        })
    }
}

pub fn resolve_seed(explicit: Option<u64>) -> Result<u64> {
    if let Some(s) = explicit {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| config_err!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub k: Option<usize>,
    /// Entropic regularization; 0 returns the PCA basis.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Repeat the run recorded in this manifest.
    #[arg(long, conflicts_with_all = ["input", "k", "epsilon"])]
    pub manifest: Option<PathBuf>,
    /// Output directory; defaults to the manifest's when re-running.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub no_center: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// basis.csv as written by `fit` or `pca`.
    #[arg(long)]
    pub basis: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Subspace dimensions to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ks: Vec<usize>,
    /// Fixed EWCA regularization; otherwise it is selected per split.
    #[arg(long, conflicts_with = "grid")]
    pub epsilon: Option<f64>,
    /// Candidate values; default is log-spaced over [1e-3, 1e2] x the mean pairwise cost.
    #[arg(long, value_delimiter = ',')]
    pub eps_grid: Option<Vec<f64>>,
    /// Size of the default candidate grid.
    #[arg(long, default_value_t = 8)]
    pub eps_count: usize,
    /// Report every (k, epsilon) pair instead of selecting epsilon.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = 100)]
    pub splits: usize,
    #[arg(long, default_value_t = 0.5)]
    pub train_frac: f64,
    /// Inner splits of each training set used to select epsilon.
    #[arg(long, default_value_t = 20)]
    pub inner_splits: usize,
    /// Fit PCA and EWCA once on all samples instead of on every training set.
    #[arg(long)]
    pub fit_once: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Feature dimensions to subsample.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Absolute regularization.
    #[arg(long, conflicts_with = "relative_epsilon")]
    pub epsilon: Option<f64>,
    /// Regularization as a multiple of each subsample's mean pairwise cost.
    #[arg(long)]
    pub relative_epsilon: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "bcd,mm")]
    pub algos: Vec<AlgoArg>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long, default_value_t = 20)]
    pub n_per_class: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Distance between class centers.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}
