//! Shared data model: samples, orthonormal bases, histograms, couplings and
//! solver configuration.

use alloc::vec::Vec;

use faer::{Mat, MatRef};

use crate::error::{config_err, dim_err, Error, Result};

/// Default tolerance on `‖UᵀU − I‖_F` for a [`StiefelBasis`].
pub const TOL_ORTH: f64 = 1e-10;

/// Default tolerance on the max absolute marginal violation of a [`TransportPlan`].
pub const TOL_MARGINAL: f64 = 1e-9;

/// Tolerance on the total mass of a [`Histogram`].
pub const TOL_HISTOGRAM_MASS: f64 = 1e-12;

/// Samples stored column-wise: `d` features by `n` samples.
#[derive(Clone, Debug)]
pub struct DataMatrix {
    values: Mat<f64>,
}

impl DataMatrix {
    pub fn new(values: Mat<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(dim_err!(
                "data matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            ));
        }
        for j in 0..values.ncols() {
            for (i, v) in values.col_as_slice(j).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self { values })
    }

    pub fn from_fn(d: usize, n: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(Mat::from_fn(d, n, f))
    }

    /// Builds the matrix from one slice per sample (row-per-sample layout).
    pub fn from_samples<S: AsRef<[f64]>>(samples: &[S]) -> Result<Self> {
        let n = samples.len();
        let d = samples.first().map_or(0, |s| s.as_ref().len());
        if let Some((j, _)) = samples.iter().enumerate().find(|(_, s)| s.as_ref().len() != d) {
            return Err(dim_err!("sample {j} has a different number of features than sample 0"));
        }
        Self::from_fn(d, n, |i, j| samples[j].as_ref()[i])
    }

    /// Number of features.
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Number of samples.
    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn into_inner(self) -> Mat<f64> {
        self.values
    }

    pub fn sample(&self, j: usize) -> &[f64] {
        self.values.col_as_slice(j)
    }

    pub fn select_samples(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.n_samples()) {
            return Err(dim_err!("sample index {bad} out of range for n = {}", self.n_samples()));
        }
        Self::from_fn(self.dim(), indices.len(), |i, j| self.values[(i, indices[j])])
    }

    pub fn select_features(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.dim()) {
            return Err(dim_err!("feature index {bad} out of range for d = {}", self.dim()));
        }
        Self::from_fn(indices.len(), self.n_samples(), |i, j| self.values[(indices[i], j)])
    }

    /// Per-feature mean over samples.
    pub fn row_means(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        let mut means = alloc::vec![0.0; self.dim()];
        for j in 0..self.n_samples() {
            for (m, v) in means.iter_mut().zip(self.sample(j)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn is_centered(&self, tol: f64) -> bool {
        self.row_means().iter().all(|m| m.abs() <= tol)
    }
}

/// Subtracts the per-feature mean so that `X 1 = 0`.
pub fn center(data: &DataMatrix) -> DataMatrix {
    let means = data.row_means();
    let values = Mat::from_fn(data.dim(), data.n_samples(), |i, j| data.values[(i, j)] - means[i]);
    DataMatrix { values }
}

/// A `d x k` matrix with orthonormal columns.
#[derive(Clone, Debug)]
pub struct StiefelBasis {
    values: Mat<f64>,
}

impl StiefelBasis {
    pub fn new(values: Mat<f64>) -> Result<Self> {
        Self::with_tolerance(values, TOL_ORTH)
    }

    pub fn with_tolerance(values: Mat<f64>, tol: f64) -> Result<Self> {
        if values.ncols() == 0 || values.ncols() > values.nrows() {
            return Err(dim_err!(
                "a basis needs 1 <= k <= d, got d = {}, k = {}",
                values.nrows(),
                values.ncols()
            ));
        }
        let err = orthonormality_error(values.as_ref());
        if !(err <= tol) {
            return Err(Error::Linalg(alloc::format!(
                "columns are not orthonormal: ‖UᵀU − I‖_F = {err:e}"
            )));
        }
        Ok(Self { values })
    }

    pub(crate) fn new_unchecked(values: Mat<f64>) -> Self {
        debug_assert!(orthonormality_error(values.as_ref()) <= 1e-8);
        Self { values }
    }

    /// First `k` canonical axes of `R^d`.
    pub fn canonical(d: usize, k: usize) -> Result<Self> {
        Self::new(Mat::from_fn(d, k, |i, j| if i == j { 1.0 } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn into_inner(self) -> Mat<f64> {
        self.values
    }

    /// Dense `UUᵀ`. Only meant for small `d`.
    pub fn projector(&self) -> Mat<f64> {
        &self.values * self.values.transpose()
    }

    /// `UᵀX`, a `k x n` matrix of coordinates.
    pub fn coordinates(&self, data: &DataMatrix) -> Result<Mat<f64>> {
        if data.dim() != self.dim() {
            return Err(dim_err!("basis has d = {}, data has d = {}", self.dim(), data.dim()));
        }
        Ok(self.values.transpose() * data.as_mat())
    }

    /// Orthonormality defect `‖UᵀU − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(self.values.as_ref())
    }
}

pub(crate) fn orthonormality_error(u: MatRef<'_, f64>) -> f64 {
    let gram = u.transpose() * u;
    let k = gram.nrows();
    let mut acc = 0.0;
    for j in 0..k {
        for i in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            let e = gram[(i, j)] - target;
            acc += e * e;
        }
    }
    libm::sqrt(acc)
}

/// Nonnegative weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    weights: Vec<f64>,
}

impl Histogram {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptySet("histogram has no bins".into()));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(config_err!("histogram weight {i} is negative or non-finite"));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > TOL_HISTOGRAM_MASS {
            return Err(config_err!("histogram mass is {mass}, expected 1"));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform histogram needs at least one bin");
        Self { weights: alloc::vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|x| (x - w).abs() <= TOL_HISTOGRAM_MASS)
    }
}

/// A coupling between two histograms.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    values: Mat<f64>,
    row_marginal: Histogram,
    col_marginal: Histogram,
}

impl TransportPlan {
    /// Assembles a plan, checking shapes only. Use [`TransportPlan::validate`]
    /// to check the marginal constraints.
    pub fn from_parts(values: Mat<f64>, row_marginal: Histogram, col_marginal: Histogram) -> Result<Self> {
        if values.nrows() != row_marginal.len() || values.ncols() != col_marginal.len() {
            return Err(dim_err!(
                "plan is {}x{} but marginals have lengths {} and {}",
                values.nrows(),
                values.ncols(),
                row_marginal.len(),
                col_marginal.len()
            ));
        }
        Ok(Self { values, row_marginal, col_marginal })
    }

    /// Plan with uniform `1/n` marginals.
    pub fn uniform_marginals(values: Mat<f64>) -> Result<Self> {
        let (n, m) = (values.nrows(), values.ncols());
        if n == 0 || m == 0 {
            return Err(Error::EmptySet("empty transport plan".into()));
        }
        Self::from_parts(values, Histogram::uniform(n), Histogram::uniform(m))
    }

    /// The independent coupling `a bᵀ`.
    pub fn product(a: &Histogram, b: &Histogram) -> Self {
        let values = Mat::from_fn(a.len(), b.len(), |i, j| a.as_slice()[i] * b.as_slice()[j]);
        Self { values, row_marginal: a.clone(), col_marginal: b.clone() }
    }

    /// The diagonal coupling `(1/n) I`.
    pub fn diagonal(n: usize) -> Self {
        let w = 1.0 / n as f64;
        let values = Mat::from_fn(n, n, |i, j| if i == j { w } else { 0.0 });
        Self { values, row_marginal: Histogram::uniform(n), col_marginal: Histogram::uniform(n) }
    }

    pub fn values(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn into_values(self) -> Mat<f64> {
        self.values
    }

    pub fn row_marginal(&self) -> &Histogram {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &Histogram {
        &self.col_marginal
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Maximum absolute deviation of the row and column sums from the marginals.
    pub fn max_marginal_violation(&self) -> f64 {
        let (n, m) = (self.nrows(), self.ncols());
        let mut rows = alloc::vec![0.0; n];
        let mut worst: f64 = 0.0;
        for j in 0..m {
            let col = self.values.col_as_slice(j);
            let mut s = 0.0;
            for (r, v) in rows.iter_mut().zip(col) {
                *r += v;
                s += v;
            }
            worst = worst.max((s - self.col_marginal.as_slice()[j]).abs());
        }
        for (r, a) in rows.iter().zip(self.row_marginal.as_slice()) {
            worst = worst.max((r - a).abs());
        }
        worst
    }

    /// Checks nonnegativity and both marginal constraints at tolerance `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for j in 0..self.ncols() {
            for (i, v) in self.values.col_as_slice(j).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if *v < 0.0 {
                    return Err(Error::InvalidPlan(alloc::format!("negative entry {v:e} at ({i}, {j})")));
                }
            }
        }
        let violation = self.max_marginal_violation();
        if violation > tol {
            return Err(Error::InvalidPlan(alloc::format!(
                "marginal violation {violation:e} exceeds {tol:e}"
            )));
        }
        Ok(())
    }

    /// `(Π + Πᵀ) / 2`, square plans only.
    pub fn symmetrized(&self) -> Mat<f64> {
        let p = &self.values;
        Mat::from_fn(p.nrows(), p.ncols(), |i, j| 0.5 * (p[(i, j)] + p[(j, i)]))
    }
}

/// How the smallest eigenvalue of `sym(Π)` enters the majorizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaMinStrategy {
    /// Smallest eigenvalue computed from an `n x n` eigensolve.
    Exact,
    /// The bound `-1/n`, valid for any coupling with uniform marginals.
    GershgorinBound,
}

/// Above this many samples the automatic strategy switches to the bound.
pub const EXACT_LAMBDA_MIN_MAX_N: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Entropic regularization. Zero means plain PCA.
    pub epsilon: f64,
    /// Target dimension.
    pub k: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// Relative change of the objective below which the outer loop stops.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    /// Majorization steps per outer iteration (block-MM only).
    pub mm_inner_iter: usize,
    pub center_data: bool,
    /// `None` picks `Exact` up to [`EXACT_LAMBDA_MIN_MAX_N`] samples.
    pub lambda_min_strategy: Option<LambdaMinStrategy>,
    /// Force log-domain Sinkhorn. When false the domain is still switched to
    /// log automatically for small `epsilon` or on underflow.
    pub log_domain: bool,
    /// Seeds the perturbation used to recover from rank-deficient updates.
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(k: usize, epsilon: f64) -> Self {
        Self {
            epsilon,
            k,
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iter: 10_000,
            outer_tol: 1e-7,
            outer_max_iter: 100,
            mm_inner_iter: 20,
            center_data: true,
            lambda_min_strategy: None,
            log_domain: false,
            seed: 0,
        }
    }

    pub fn lambda_min_strategy_for(&self, n: usize) -> LambdaMinStrategy {
        self.lambda_min_strategy.unwrap_or(if n <= EXACT_LAMBDA_MIN_MAX_N {
            LambdaMinStrategy::Exact
        } else {
            LambdaMinStrategy::GershgorinBound
        })
    }
}

/// Non-fatal events recorded during a fit.
#[derive(Clone, Debug, PartialEq)]
pub enum Warning {
    SinkhornNotConverged { outer_iteration: usize, marginal_error: f64 },
    /// Standard-domain Sinkhorn underflowed and was rerun in log domain.
    LogDomainFallback { outer_iteration: usize },
    /// Eigengap at position `k` fell below `1e-10`.
    DegenerateEigengap { outer_iteration: usize, gap: f64 },
    /// A rank-deficient `PU` was re-orthonormalized after a tiny perturbation.
    RankDeficientPerturbed { outer_iteration: usize, inner_iteration: usize },
    OuterMaxIterReached,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub basis: StiefelBasis,
    pub plan: TransportPlan,
    /// Objective after each outer iteration; entry 0 is at the initial basis.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// Seconds; zero when built without `std`.
    pub wall_time: f64,
    pub converged: bool,
    pub warnings: Vec<Warning>,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Checks that `data` and `config` describe a solvable problem.
pub fn validate(data: &DataMatrix, config: &SolverConfig) -> Result<()> {
    let d = data.dim();
    if config.k == 0 || config.k >= d {
        return Err(dim_err!("need 1 <= k < d, got k = {}, d = {d}", config.k));
    }
    if data.n_samples() < 2 {
        return Err(dim_err!("need at least 2 samples, got {}", data.n_samples()));
    }
    if !config.epsilon.is_finite() || config.epsilon < 0.0 {
        return Err(config_err!("epsilon must be finite and >= 0, got {}", config.epsilon));
    }
    for (name, value) in [("sinkhorn_tol", config.sinkhorn_tol), ("outer_tol", config.outer_tol)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(config_err!("{name} must be positive, got {value}"));
        }
    }
    for (name, value) in [
        ("sinkhorn_max_iter", config.sinkhorn_max_iter),
        ("outer_max_iter", config.outer_max_iter),
        ("mm_inner_iter", config.mm_inner_iter),
    ] {
        if value == 0 {
            return Err(config_err!("{name} must be positive"));
        }
    }
    Ok(())
}
