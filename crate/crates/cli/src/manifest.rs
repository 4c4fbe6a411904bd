//! Run manifests: everything needed to repeat a command, written next to
//! its outputs as TOML.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ewca_core::{Algorithm, LambdaMinStrategy, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Fit,
    Pca,
    Transform,
    Evaluate,
    Benchmark,
    Synthetic,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Pca => "pca",
            Command::Transform => "transform",
            Command::Evaluate => "evaluate",
            Command::Benchmark => "benchmark",
            Command::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMin {
    Auto,
    Exact,
    Bound,
}

impl From<Option<LambdaMinStrategy>> for LambdaMin {
    fn from(s: Option<LambdaMinStrategy>) -> Self {
        match s {
            None => LambdaMin::Auto,
            Some(LambdaMinStrategy::Exact) => LambdaMin::Exact,
            Some(LambdaMinStrategy::GershgorinBound) => LambdaMin::Bound,
        }
    }
}

impl From<LambdaMin> for Option<LambdaMinStrategy> {
    fn from(s: LambdaMin) -> Self {
        match s {
            LambdaMin::Auto => None,
            LambdaMin::Exact => Some(LambdaMinStrategy::Exact),
            LambdaMin::Bound => Some(LambdaMinStrategy::GershgorinBound),
        }
    }
}

/// [`SolverConfig`] in serializable form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub algorithm: String,
    pub epsilon: f64,
    pub k: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    pub mm_inner_iter: usize,
    pub center: bool,
    pub lambda_min: LambdaMin,
    pub log_domain: bool,
}

impl ConfigRecord {
    pub fn new(config: &SolverConfig, algorithm: Algorithm) -> Self {
        Self {
            algorithm: algorithm.name().to_owned(),
            epsilon: config.epsilon,
            k: config.k,
            sinkhorn_tol: config.sinkhorn_tol,
            sinkhorn_max_iter: config.sinkhorn_max_iter,
            outer_tol: config.outer_tol,
            outer_max_iter: config.outer_max_iter,
            mm_inner_iter: config.mm_inner_iter,
            center: config.center_data,
            lambda_min: config.lambda_min_strategy.into(),
            log_domain: config.log_domain,
        }
    }

    pub fn to_config(&self, seed: u64) -> Result<(SolverConfig, Algorithm)> {
        let algorithm = self.algorithm.parse()?;
        let config = SolverConfig {
            epsilon: self.epsilon,
            k: self.k,
            sinkhorn_tol: self.sinkhorn_tol,
            sinkhorn_max_iter: self.sinkhorn_max_iter,
            outer_tol: self.outer_tol,
            outer_max_iter: self.outer_max_iter,
            mm_inner_iter: self.mm_inner_iter,
            center_data: self.center,
            lambda_min_strategy: self.lambda_min.into(),
            log_domain: self.log_domain,
            seed,
        };
        Ok((config, algorithm))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub has_header: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub version: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub input: InputRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigRecord>,
    /// Command-specific settings that are not part of the solver config.
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub extra: toml::Table,
}

impl RunManifest {
    pub fn new(command: Command, input: InputRecord, output_dir: &Path, seed: u64) -> Self {
        Self {
            command,
            version: crate::VERSION.to_owned(),
            seed,
            output_dir: output_dir.to_path_buf(),
            started_unix: unix_now(),
            finished_unix: 0.0,
            input,
            config: None,
            extra: toml::Table::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Manifest { path: path.into(), message: e.to_string() })
    }

    /// Stamps the finish time and writes `manifest.toml` into the output directory.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        let path = self.output_dir.join(MANIFEST_FILE);
        let text = toml::to_string_pretty(&self)
            .map_err(|e| CliError::Manifest { path: path.clone(), message: e.to_string() })?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}
