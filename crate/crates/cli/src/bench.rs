//! Wall-time sweeps of both solvers over subsampled feature dimensions.

use std::time::Instant;

use ewca_core::eval::{mean_pairwise_cost, quantile};
use ewca_core::rng::{self, Purpose};
use ewca_core::{fit, Algorithm, DataMatrix, SolverConfig};
use rand::seq::index;

use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub algorithm: Algorithm,
    pub dim: usize,
    /// Seconds, one per repeat.
    pub times: Vec<f64>,
    /// Final objective, one per repeat.
    pub objectives: Vec<f64>,
    pub iterations: Vec<usize>,
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsilonSpec {
    Absolute(f64),
    /// Multiple of the mean pairwise squared distance of each subsample.
    Relative(f64),
}

impl EpsilonSpec {
    pub fn resolve(self, data: &DataMatrix) -> f64 {
        match self {
            EpsilonSpec::Absolute(e) => e,
            EpsilonSpec::Relative(f) => f * mean_pairwise_cost(data),
        }
    }
}

/// Feature rows kept for repeat `repeat` at dimension `dim`: all of them when
/// `dim` is the full dimension, otherwise a uniform sample without
/// replacement, sorted.
pub fn subsample_features(total: usize, dim: usize, seed: u64, repeat: usize) -> Vec<usize> {
    if dim >= total {
        return (0..total).collect();
    }
    let mut r = rng::stream(seed, Purpose::Subsample, ((repeat as u64) << 32) | dim as u64);
    let mut rows = index::sample(&mut r, total, dim).into_vec();
    rows.sort_unstable();
    rows
}

/// Times every algorithm on the same subsample for each `(dim, repeat)`.
/// `config.epsilon` is replaced by `epsilon` resolved on each subsample.
/// Rows come grouped by algorithm, in the order given, with `dims` ascending.
pub fn timing_sweep(
    data: &DataMatrix,
    dims: &[usize],
    epsilon: EpsilonSpec,
    config: &SolverConfig,
    algorithms: &[Algorithm],
    repeats: usize,
    seed: u64,
) -> Result<Vec<TimingRow>> {
    if repeats == 0 || dims.is_empty() || algorithms.is_empty() {
        return Err(config_err!("need at least one repeat, dimension and algorithm"));
    }
    if let Some(&d) = dims.iter().find(|&&d| d > data.dim() || d <= config.k) {
        return Err(config_err!("dimension {d} is outside ({}, {}]", config.k, data.dim()));
    }
    let mut sorted = dims.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut rows: Vec<TimingRow> = algorithms
        .iter()
        .flat_map(|&algorithm| {
            sorted.iter().map(move |&dim| TimingRow {
                algorithm,
                dim,
                times: Vec::new(),
                objectives: Vec::new(),
                iterations: Vec::new(),
                mean: 0.0,
                q1: 0.0,
                q3: 0.0,
            })
        })
        .collect();

    for (di, &dim) in sorted.iter().enumerate() {
        for repeat in 0..repeats {
            let sub = data.select_features(&subsample_features(data.dim(), dim, seed, repeat))?;
            let config = SolverConfig { epsilon: epsilon.resolve(&sub), ..config.clone() };
            for (ai, &algorithm) in algorithms.iter().enumerate() {
                let started = Instant::now();
                let result = fit(&sub, &config, algorithm)?;
                let row = &mut rows[ai * sorted.len() + di];
                row.times.push(started.elapsed().as_secs_f64());
                row.objectives.push(result.final_objective());
                row.iterations.push(result.iterations);
            }
        }
    }
    for row in &mut rows {
        let mut sorted_times = row.times.clone();
        sorted_times.sort_unstable_by(f64::total_cmp);
        row.mean = sorted_times.iter().sum::<f64>() / sorted_times.len() as f64;
        row.q1 = quantile(&sorted_times, 0.25);
        row.q3 = quantile(&sorted_times, 0.75);
    }
    Ok(rows)
}
