//! Entropic optimal transport between point clouds with the Sinkhorn-Knopp
//! scaling algorithm.
//!
//! Two numerical domains are available. The standard domain iterates the
//! scalings `u ← a ⊘ Kv`, `v ← b ⊘ Kᵀu` on the Gibbs kernel `K = exp(−C/ε)`;
//! the log domain iterates the dual potentials `f = ε log u`, `g = ε log v`
//! with log-sum-exp reductions and never underflows. Both report the same
//! state, expressed as dual potentials, so one can warm-start the other.

use alloc::vec;
use alloc::vec::Vec;

use faer::{Mat, MatRef};

use crate::error::{config_err, dim_err, Error, Result};
use crate::types::{DataMatrix, Histogram, StiefelBasis, TransportPlan};

/// `ε` below this fraction of the median cost selects the log domain.
pub const LOG_DOMAIN_THRESHOLD: f64 = 1e-3;

/// A nonnegative, finite cost matrix (`n` sources by `m` targets).
#[derive(Clone, Debug)]
pub struct CostMatrix {
    values: Mat<f64>,
}

impl CostMatrix {
    pub fn new(values: Mat<f64>) -> Result<Self> {
        for j in 0..values.ncols() {
            for (i, v) in values.col_as_slice(j).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if *v < 0.0 {
                    return Err(config_err!("negative cost {v} at ({i}, {j})"));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn from_fn(n: usize, m: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(Mat::from_fn(n, m, f))
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn max(&self) -> f64 {
        self.entries().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.entries().sum::<f64>() / (self.nrows() * self.ncols()) as f64
    }

    pub fn median(&self) -> f64 {
        let mut all: Vec<f64> = self.entries().collect();
        all.sort_unstable_by(f64::total_cmp);
        let mid = all.len() / 2;
        if all.len() % 2 == 0 {
            0.5 * (all[mid - 1] + all[mid])
        } else {
            all[mid]
        }
    }

    fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.ncols()).flat_map(move |j| self.values.col_as_slice(j).iter().copied())
    }
}

/// `C_ij = ‖x_i − y_j‖²`, clamped at zero.
pub fn squared_l2_cost(x_set: &DataMatrix, y_set: &DataMatrix) -> Result<CostMatrix> {
    if x_set.dim() != y_set.dim() {
        return Err(dim_err!("x has d = {}, y has d = {}", x_set.dim(), y_set.dim()));
    }
    let values = Mat::from_fn(x_set.n_samples(), y_set.n_samples(), |i, j| {
        squared_distance(x_set.sample(i), y_set.sample(j))
    });
    Ok(CostMatrix { values })
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `C_ij = ‖x_i − UUᵀx_j‖²` without forming `UUᵀ`.
///
/// The residual `x_i − UUᵀx_i` is orthogonal to `span(U)`, so
/// `C_ij = ‖x_i − UUᵀx_i‖² + ‖Uᵀx_i − Uᵀx_j‖²`. Only `UᵀX` (`k x n`) and the
/// residual norms are needed, and the diagonal carries no cancellation error.
pub fn projection_cost(data: &DataMatrix, basis: &StiefelBasis) -> Result<CostMatrix> {
    let coords = basis.coordinates(data)?;
    let reconstructed = basis.as_mat() * &coords;
    let n = data.n_samples();
    let residual: Vec<f64> = (0..n)
        .map(|j| squared_distance(data.sample(j), reconstructed.col_as_slice(j)))
        .collect();
    let values = Mat::from_fn(n, n, |i, j| {
        residual[i] + squared_distance(coords.col_as_slice(i), coords.col_as_slice(j))
    });
    Ok(CostMatrix { values })
}

/// Numerical domain of the scaling iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Domain {
    /// Log domain when `ε < 1e-3 · median(C)`, otherwise standard with a log
    /// domain retry on underflow.
    #[default]
    Auto,
    Standard,
    Log,
}

#[derive(Clone, Debug)]
pub struct SinkhornOptions<'a> {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub domain: Domain,
    /// Potentials from a previous solve on a similar cost matrix.
    pub warm_start: Option<&'a SinkhornState>,
}

impl SinkhornOptions<'_> {
    pub fn new(epsilon: f64, tol: f64, max_iter: usize) -> Self {
        Self { epsilon, tol, max_iter, domain: Domain::Auto, warm_start: None }
    }
}

/// Final scaling state, stored as dual potentials `f = ε log u`, `g = ε log v`
/// so that `π_ij = exp((f_i + g_j − C_ij) / ε)`.
#[derive(Clone, Debug)]
pub struct SinkhornState {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    /// Max absolute marginal violation of the returned plan.
    pub marginal_error: f64,
    pub converged: bool,
    pub log_domain: bool,
    /// Standard domain underflowed and the solve was redone in log domain.
    pub fell_back: bool,
    /// Marginal error observed at every iteration.
    pub error_trace: Vec<f64>,
}

impl SinkhornState {
    /// Left scaling `u = exp(f/ε)`; may overflow for tiny `ε`.
    pub fn u(&self) -> Vec<f64> {
        self.f.iter().map(|f| libm::exp(f / self.epsilon)).collect()
    }

    /// Right scaling `v = exp(g/ε)`.
    pub fn v(&self) -> Vec<f64> {
        self.g.iter().map(|g| libm::exp(g / self.epsilon)).collect()
    }

    /// Dual objective `Σ a_i f̃_i + Σ b_j g̃_j` with potentials shifted by
    /// `ε log a`, `ε log b` so that entropy is measured against `abᵀ`.
    /// Equals the primal value at convergence.
    pub fn dual_value(&self, a: &Histogram, b: &Histogram) -> f64 {
        let eps = self.epsilon;
        let left: f64 = a.as_slice().iter().zip(&self.f).map(|(a, f)| a * (f - eps * libm::log(*a))).sum();
        let right: f64 = b.as_slice().iter().zip(&self.g).map(|(b, g)| b * (g - eps * libm::log(*b))).sum();
        left + right
    }

    /// Turns a non-converged state into [`Error::NonConvergence`].
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NonConvergence { iterations: self.iterations, marginal_error: self.marginal_error })
        }
    }
}

/// Solves `min ⟨C, Π⟩ − ε H(Π)` over couplings of `a` and `b`.
///
/// Convergence is declared when the max absolute marginal violation is at
/// most `tol`. Hitting `max_iter` is not an error: the last iterate is
/// returned with `converged == false`.
pub fn sinkhorn_knopp(
    cost: &CostMatrix,
    a: &Histogram,
    b: &Histogram,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(TransportPlan, SinkhornState)> {
    solve(cost, a, b, &SinkhornOptions::new(epsilon, tol, max_iter))
}

pub fn solve(
    cost: &CostMatrix,
    a: &Histogram,
    b: &Histogram,
    opts: &SinkhornOptions<'_>,
) -> Result<(TransportPlan, SinkhornState)> {
    let (n, m) = (cost.nrows(), cost.ncols());
    if a.len() != n || b.len() != m {
        return Err(dim_err!("cost is {n}x{m}, marginals have lengths {} and {}", a.len(), b.len()));
    }
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(config_err!("sinkhorn needs a finite epsilon > 0, got {}", opts.epsilon));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(config_err!("sinkhorn needs tol > 0 and max_iter > 0"));
    }
    if a.as_slice().iter().chain(b.as_slice()).any(|w| *w <= 0.0) {
        return Err(config_err!("histograms with zero-weight bins are not supported"));
    }
    if let Some(w) = opts.warm_start {
        if w.f.len() != n || w.g.len() != m {
            return Err(dim_err!("warm start has {}x{} potentials, cost is {n}x{m}", w.f.len(), w.g.len()));
        }
    }

    let problem = Problem::new(cost, a, b, opts.epsilon);
    match opts.domain {
        Domain::Log => Ok(problem.run_log(opts)),
        Domain::Standard => problem.run_standard(opts),
        Domain::Auto => {
            if opts.epsilon < LOG_DOMAIN_THRESHOLD * cost.median() {
                return Ok(problem.run_log(opts));
            }
            match problem.run_standard(opts) {
                Err(Error::NumericalUnderflow { .. }) => {
                    let (plan, mut state) = problem.run_log(opts);
                    state.fell_back = true;
                    Ok((plan, state))
                }
                other => other,
            }
        }
    }
}

struct Problem<'a> {
    cost: &'a Mat<f64>,
    // Transposed copy so that both row and column reductions read contiguous memory.
    cost_t: Mat<f64>,
    a: &'a Histogram,
    b: &'a Histogram,
    epsilon: f64,
}

impl<'a> Problem<'a> {
    fn new(cost: &'a CostMatrix, a: &'a Histogram, b: &'a Histogram, epsilon: f64) -> Self {
        let cost = &cost.values;
        Self { cost, cost_t: cost.transpose().to_owned(), a, b, epsilon }
    }

    fn initial_potentials(&self, opts: &SinkhornOptions<'_>) -> (Vec<f64>, Vec<f64>) {
        match opts.warm_start {
            Some(w) if w.f.iter().chain(&w.g).all(|x| x.is_finite()) => (w.f.clone(), w.g.clone()),
            _ => (vec![0.0; self.cost.nrows()], vec![0.0; self.cost.ncols()]),
        }
    }

    /// `ε log a_i − ε LSE_j((g_j − C_ij)/ε)` for every row.
    fn f_update(&self, g: &[f64], out: &mut [f64]) {
        let eps = self.epsilon;
        for (i, (fi, ai)) in out.iter_mut().zip(self.a.as_slice()).enumerate() {
            *fi = eps * libm::log(*ai) - eps * log_sum_exp(self.cost_t.col_as_slice(i), g, eps);
        }
    }

    fn g_update(&self, f: &[f64], out: &mut [f64]) {
        let eps = self.epsilon;
        for (j, (gj, bj)) in out.iter_mut().zip(self.b.as_slice()).enumerate() {
            *gj = eps * libm::log(*bj) - eps * log_sum_exp(self.cost.col_as_slice(j), f, eps);
        }
    }

    fn run_log(&self, opts: &SinkhornOptions<'_>) -> (TransportPlan, SinkhornState) {
        let eps = self.epsilon;
        let (mut f, mut g) = self.initial_potentials(opts);
        let mut f_next = vec![0.0; f.len()];
        if opts.warm_start.is_none() {
            self.f_update(&g, &mut f);
        }
        self.g_update(&f, &mut g);

        let mut trace = Vec::new();
        let mut iterations = 1;
        let mut converged = false;
        let mut marginal_error;
        loop {
            // Columns are exact after the g-update; the row sums are
            // a_i exp((f_i − f_next_i)/ε), read off the next f-update.
            self.f_update(&g, &mut f_next);
            marginal_error = self
                .a
                .as_slice()
                .iter()
                .zip(f.iter().zip(&f_next))
                .map(|(a, (f, fn_))| (a * libm::expm1((f - fn_) / eps)).abs())
                .fold(0.0, f64::max);
            trace.push(marginal_error);
            if marginal_error <= opts.tol {
                converged = true;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            core::mem::swap(&mut f, &mut f_next);
            self.g_update(&f, &mut g);
            iterations += 1;
        }

        let plan = Mat::from_fn(f.len(), g.len(), |i, j| libm::exp((f[i] + g[j] - self.cost[(i, j)]) / eps));
        let state = SinkhornState {
            f,
            g,
            epsilon: eps,
            iterations,
            marginal_error,
            converged,
            log_domain: true,
            fell_back: false,
            error_trace: trace,
        };
        (self.plan(plan), state)
    }

    fn run_standard(&self, opts: &SinkhornOptions<'_>) -> Result<(TransportPlan, SinkhornState)> {
        let eps = self.epsilon;
        let (n, m) = (self.cost.nrows(), self.cost.ncols());
        let underflow = Error::NumericalUnderflow { epsilon: eps };

        // Row-shifted kernel: K_ij = exp(−(C_ij − r_i)/ε) with r_i = min_j C_ij.
        // The shift is absorbed by the left scaling.
        let shift: Vec<f64> =
            (0..n).map(|i| self.cost_t.col_as_slice(i).iter().copied().fold(f64::INFINITY, f64::min)).collect();
        let kernel = Mat::from_fn(n, m, |i, j| libm::exp(-(self.cost[(i, j)] - shift[i]) / eps));
        let kernel_t = kernel.transpose().to_owned();

        let (f0, g0) = self.initial_potentials(opts);
        let mut u: Vec<f64> = f0.iter().zip(&shift).map(|(f, r)| libm::exp((f - r) / eps)).collect();
        let mut v: Vec<f64> = g0.iter().map(|g| libm::exp(g / eps)).collect();
        if u.iter().chain(&v).any(|x| !(x.is_finite() && *x > 0.0)) {
            u.fill(1.0);
            v.fill(1.0);
        }

        let mut kv = vec![0.0; n];
        let mut ktu = vec![0.0; m];
        let fresh = opts.warm_start.is_none();
        if fresh {
            mat_vec(&kernel_t, &v, &mut kv);
            scale_into(self.a.as_slice(), &kv, &mut u).ok_or(underflow.clone())?;
        }
        mat_vec(&kernel, &u, &mut ktu);
        scale_into(self.b.as_slice(), &ktu, &mut v).ok_or(underflow.clone())?;

        let mut trace = Vec::new();
        let mut iterations = 1;
        let mut converged = false;
        let mut marginal_error;
        loop {
            mat_vec(&kernel_t, &v, &mut kv);
            marginal_error = self
                .a
                .as_slice()
                .iter()
                .zip(u.iter().zip(&kv))
                .map(|(a, (u, kv))| (u * kv - a).abs())
                .fold(0.0, f64::max);
            trace.push(marginal_error);
            if !marginal_error.is_finite() {
                return Err(underflow);
            }
            if marginal_error <= opts.tol {
                converged = true;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            scale_into(self.a.as_slice(), &kv, &mut u).ok_or(underflow.clone())?;
            mat_vec(&kernel, &u, &mut ktu);
            scale_into(self.b.as_slice(), &ktu, &mut v).ok_or(underflow.clone())?;
            iterations += 1;
        }

        let plan = Mat::from_fn(n, m, |i, j| u[i] * kernel[(i, j)] * v[j]);
        let f = u.iter().zip(&shift).map(|(u, r)| eps * libm::log(*u) + r).collect();
        let g = v.iter().map(|v| eps * libm::log(*v)).collect();
        let state = SinkhornState {
            f,
            g,
            epsilon: eps,
            iterations,
            marginal_error,
            converged,
            log_domain: false,
            fell_back: false,
            error_trace: trace,
        };
        Ok((self.plan(plan), state))
    }

    fn plan(&self, values: Mat<f64>) -> TransportPlan {
        TransportPlan::from_parts(values, self.a.clone(), self.b.clone()).expect("shapes checked on entry")
    }
}

/// `LSE_i((p_i − c_i)/ε)`.
fn log_sum_exp(cost: &[f64], potential: &[f64], eps: f64) -> f64 {
    let max = cost.iter().zip(potential).map(|(c, p)| (p - c) / eps).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = cost.iter().zip(potential).map(|(c, p)| libm::exp((p - c) / eps - max)).sum();
    max + libm::log(sum)
}

/// `out_i = ⟨column i of mat_t, x⟩`, i.e. `out = matᵀ x` read by columns.
fn mat_vec(mat_t: &Mat<f64>, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = mat_t.col_as_slice(i).iter().zip(x).map(|(k, x)| k * x).sum();
    }
}

/// `out = w ⊘ denom`; `None` if any denominator vanished or the result is not finite.
fn scale_into(w: &[f64], denom: &[f64], out: &mut [f64]) -> Option<()> {
    for ((o, w), d) in out.iter_mut().zip(w).zip(denom) {
        if !(*d > 0.0) {
            return None;
        }
        *o = w / d;
        if !o.is_finite() {
            return None;
        }
    }
    Some(())
}

/// `⟨C, Π⟩ − ε H(Π)` with `H(Π) = −Σ π_ij log(π_ij / (a_i b_j))` and `0 log 0 = 0`.
pub fn entropic_ot_value(plan: &TransportPlan, cost: &CostMatrix, a: &Histogram, b: &Histogram, epsilon: f64) -> Result<f64> {
    let (n, m) = (plan.nrows(), plan.ncols());
    if cost.nrows() != n || cost.ncols() != m || a.len() != n || b.len() != m {
        return Err(dim_err!("plan is {n}x{m}, cost is {}x{}", cost.nrows(), cost.ncols()));
    }
    let p = plan.values();
    let c = cost.as_mat();
    let mut transport = 0.0;
    let mut neg_entropy = 0.0;
    for j in 0..m {
        for i in 0..n {
            let pij = p[(i, j)];
            transport += c[(i, j)] * pij;
            if pij > 0.0 {
                neg_entropy += pij * libm::log(pij / (a.as_slice()[i] * b.as_slice()[j]));
            }
        }
    }
    Ok(transport + epsilon * neg_entropy)
}

/// Entropy `H(Π)` relative to the product of the plan's marginals.
pub fn relative_entropy(plan: &TransportPlan) -> f64 {
    let p = plan.values();
    let (a, b) = (plan.row_marginal().as_slice(), plan.col_marginal().as_slice());
    let mut h = 0.0;
    for j in 0..plan.ncols() {
        for i in 0..plan.nrows() {
            let pij = p[(i, j)];
            if pij > 0.0 {
                h -= pij * libm::log(pij / (a[i] * b[j]));
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TOL_MARGINAL;
    use alloc::vec;
    use proptest::prelude::*;

    fn points(rows: &[&[f64]]) -> DataMatrix {
        DataMatrix::from_samples(rows).unwrap()
    }

    fn cost(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]).unwrap()
    }

    fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
            }
        }
        worst
    }

    #[test]
    fn squared_l2_examples() {
        let c = squared_l2_cost(&points(&[&[1.0, 2.0]]), &points(&[&[1.0, 2.0]])).unwrap();
        assert_eq!(c.as_mat()[(0, 0)], 0.0);
        let c = squared_l2_cost(&points(&[&[0.0, 0.0]]), &points(&[&[3.0, 4.0]])).unwrap();
        assert_eq!(c.as_mat()[(0, 0)], 25.0);
        let e = points(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = squared_l2_cost(&e, &e).unwrap();
        assert_eq!([c.as_mat()[(0, 0)], c.as_mat()[(0, 1)], c.as_mat()[(1, 0)], c.as_mat()[(1, 1)]], [0.0, 2.0, 2.0, 0.0]);
        assert!(matches!(squared_l2_cost(&e, &points(&[&[1.0]])), Err(Error::Dimension(_))));
    }

    #[test]
    fn projection_cost_examples() {
        let u = StiefelBasis::canonical(2, 1).unwrap();
        let x = points(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let c = projection_cost(&x, &u).unwrap();
        // ‖x_2 − UUᵀx_1‖² = ‖(0,0) − (1,0)‖² = 1.
        assert_eq!([c.as_mat()[(0, 0)], c.as_mat()[(0, 1)], c.as_mat()[(1, 0)], c.as_mat()[(1, 1)]], [0.0, 1.0, 1.0, 0.0]);

        let zero = DataMatrix::from_fn(3, 4, |_, _| 0.0).unwrap();
        let c = projection_cost(&zero, &StiefelBasis::canonical(3, 2).unwrap()).unwrap();
        assert_eq!(c.max(), 0.0);

        // Samples already in span(U): the projection is the identity.
        let x = DataMatrix::from_fn(3, 4, |i, j| if i < 2 { (i * 3 + j) as f64 - 2.5 } else { 0.0 }).unwrap();
        let c = projection_cost(&x, &StiefelBasis::canonical(3, 2).unwrap()).unwrap();
        let direct = squared_l2_cost(&x, &x).unwrap();
        assert!(max_abs_diff(c.as_mat(), direct.as_mat()) < 1e-12);
    }

    #[test]
    fn projection_cost_matches_dense_projector() {
        let x = DataMatrix::from_fn(4, 5, |i, j| libm::cos((3 * i + 7 * j) as f64)).unwrap();
        let raw = Mat::from_fn(4, 2, |i, j| libm::sin((i + 2 * j + 1) as f64));
        let u = crate::subspace::qf(raw.as_ref()).unwrap();
        let projected = DataMatrix::new(u.projector() * x.as_mat()).unwrap();
        let dense = squared_l2_cost(&x, &projected).unwrap();
        let fast = projection_cost(&x, &u).unwrap();
        assert!(max_abs_diff(dense.as_mat(), fast.as_mat()) < 1e-12);
    }

    #[test]
    fn constant_cost_gives_product_plan() {
        let u = Histogram::uniform(2);
        let (plan, state) = sinkhorn_knopp(&cost(&[&[3.0, 3.0], &[3.0, 3.0]]), &u, &u, 0.5, 1e-12, 100).unwrap();
        assert!(state.converged);
        for j in 0..2 {
            for i in 0..2 {
                assert!((plan.values()[(i, j)] - 0.25).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_point_plan() {
        let u = Histogram::uniform(1);
        let c = cost(&[&[5.0]]);
        let (plan, _) = sinkhorn_knopp(&c, &u, &u, 0.3, 1e-12, 10).unwrap();
        assert!((plan.values()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((entropic_ot_value(&plan, &c, &u, &u, 0.3).unwrap() - 5.0).abs() < 1e-14);
    }

    /// Closed form for C = [[0,1],[1,0]] with uniform marginals:
    /// q = 1/(2(1+κ)), r = κ/(2(1+κ)), κ = exp(−1/ε).
    fn two_by_two_oracle(eps: f64) -> (f64, f64, f64) {
        let kappa = libm::exp(-1.0 / eps);
        let q = 0.5 / (1.0 + kappa);
        let r = 0.5 * kappa / (1.0 + kappa);
        // ⟨C,Π⟩ = 2r and −εH = ε Σ π log(4π).
        let value = 2.0 * r + eps * (2.0 * q * libm::log(4.0 * q) + 2.0 * r * libm::log(4.0 * r));
        (q, r, value)
    }

    #[test]
    fn two_by_two_closed_form() {
        let eps = 0.1;
        let (q, r, value) = two_by_two_oracle(eps);
        let c = cost(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let u = Histogram::uniform(2);
        for domain in [Domain::Standard, Domain::Log] {
            let opts = SinkhornOptions { domain, ..SinkhornOptions::new(eps, 1e-14, 1000) };
            let (plan, state) = solve(&c, &u, &u, &opts).unwrap();
            let p = plan.values();
            assert!((p[(0, 0)] - q).abs() <= 1e-12 && (p[(1, 1)] - q).abs() <= 1e-12);
            assert!((p[(0, 1)] - r).abs() <= 1e-12 && (p[(1, 0)] - r).abs() <= 1e-12);
            let primal = entropic_ot_value(&plan, &c, &u, &u, eps).unwrap();
            assert!((primal - value).abs() <= 1e-12, "{primal} vs {value}");
            assert!((state.dual_value(&u, &u) - value).abs() <= 1e-12);
        }
    }

    #[test]
    fn product_plan_has_zero_entropy() {
        let a = Histogram::new(vec![0.2, 0.8]).unwrap();
        let b = Histogram::new(vec![0.5, 0.3, 0.2]).unwrap();
        let c = CostMatrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64).unwrap();
        let plan = TransportPlan::product(&a, &b);
        let transport: f64 = (0..2).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| c.as_mat()[(i, j)] * plan.values()[(i, j)]).sum();
        assert!((entropic_ot_value(&plan, &c, &a, &b, 7.0).unwrap() - transport).abs() < 1e-14);
        assert!(relative_entropy(&plan).abs() < 1e-15);
    }

    #[test]
    fn huge_epsilon_tends_to_product() {
        let x = DataMatrix::from_fn(2, 6, |i, j| libm::sin((i * 6 + j) as f64)).unwrap();
        let c = squared_l2_cost(&x, &x).unwrap();
        let u = Histogram::uniform(6);
        let (plan, _) = sinkhorn_knopp(&c, &u, &u, 1e6 * c.max(), 1e-12, 100).unwrap();
        let product = TransportPlan::product(&u, &u);
        assert!(max_abs_diff(plan.values(), product.values()) <= 1e-6);
    }

    #[test]
    fn underflow_is_reported_in_standard_domain_only() {
        let u = Histogram::uniform(2);
        let std_opts = SinkhornOptions { domain: Domain::Standard, ..SinkhornOptions::new(1.0, 1e-9, 100) };
        // Column 1 has no entry near its minimum after the row shift, so it underflows.
        let c3 = cost(&[&[0.0, 2e3], &[0.0, 2e3]]);
        assert!(matches!(solve(&c3, &u, &u, &std_opts), Err(Error::NumericalUnderflow { .. })));
        let auto = SinkhornOptions::new(1.0, 1e-9, 100);
        let (plan, state) = solve(&c3, &u, &u, &auto).unwrap();
        assert!(state.fell_back && state.log_domain);
        plan.validate(TOL_MARGINAL).unwrap();
    }

    #[test]
    fn small_epsilon_auto_selects_log_domain() {
        let c = cost(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let u = Histogram::uniform(2);
        let (_, state) = sinkhorn_knopp(&c, &u, &u, 1e-4, 1e-9, 100).unwrap();
        assert!(state.log_domain && !state.fell_back);
    }

    #[test]
    fn hitting_max_iter_returns_last_iterate() {
        let x = DataMatrix::from_fn(2, 8, |i, j| libm::cos((5 * i + j) as f64) * 3.0).unwrap();
        let c = squared_l2_cost(&x, &x).unwrap();
        let u = Histogram::uniform(8);
        let (_, state) = sinkhorn_knopp(&c, &u, &u, c.median(), 1e-15, 2).unwrap();
        assert!(!state.converged);
        assert_eq!(state.iterations, 2);
        assert!(matches!(state.ensure_converged(), Err(Error::NonConvergence { iterations: 2, .. })));
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = cost(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let u = Histogram::uniform(2);
        assert!(matches!(sinkhorn_knopp(&c, &u, &u, 0.0, 1e-9, 10), Err(Error::Config(_))));
        assert!(matches!(sinkhorn_knopp(&c, &Histogram::uniform(3), &u, 1.0, 1e-9, 10), Err(Error::Dimension(_))));
        let zero = Histogram::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(sinkhorn_knopp(&c, &zero, &u, 1.0, 1e-9, 10), Err(Error::Config(_))));
        assert!(CostMatrix::from_fn(1, 1, |_, _| -1.0).is_err());
    }

    fn cloud(seed: u64, n: usize) -> DataMatrix {
        let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Synthetic, 9);
        DataMatrix::from_fn(3, n, |_, _| crate::rng::standard_normal(&mut rng)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn converged_plans_are_valid_symmetric_and_domain_independent(seed in 0u64..10_000, n in 2usize..12, rel_eps in 0.2f64..2.0) {
            let x = cloud(seed, n);
            let c = squared_l2_cost(&x, &x).unwrap();
            let u = Histogram::uniform(n);
            let eps = rel_eps * c.max().max(1e-3);
            let tol = 1e-11;
            let std_opts = SinkhornOptions { domain: Domain::Standard, ..SinkhornOptions::new(eps, tol, 100_000) };
            let log_opts = SinkhornOptions { domain: Domain::Log, ..std_opts.clone() };
            let (p_std, s_std) = solve(&c, &u, &u, &std_opts).unwrap();
            let (p_log, s_log) = solve(&c, &u, &u, &log_opts).unwrap();
            prop_assert!(s_std.converged && s_log.converged);
            p_std.validate(tol).unwrap();
            p_log.validate(tol).unwrap();
            prop_assert!(max_abs_diff(p_std.values(), p_log.values()) <= 1e-8);
            prop_assert!(max_abs_diff(p_std.values(), p_std.values().transpose()) <= 10.0 * tol);
            // Marginal error never increases along the iterations.
            for w in s_log.error_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-16, "{:?}", w);
            }
            for w in s_std.error_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-16, "{:?}", w);
            }
        }

        #[test]
        fn warm_start_reaches_the_same_plan(seed in 0u64..10_000, n in 2usize..10) {
            let x = cloud(seed, n);
            let c = squared_l2_cost(&x, &x).unwrap();
            let u = Histogram::uniform(n);
            let eps = 0.5 * c.mean().max(1e-3);
            let (p0, s0) = sinkhorn_knopp(&c, &u, &u, eps, 1e-12, 100_000).unwrap();
            let c2 = CostMatrix::from_fn(n, n, |i, j| c.as_mat()[(i, j)] * 1.01).unwrap();
            let cold = sinkhorn_knopp(&c2, &u, &u, eps, 1e-12, 100_000).unwrap();
            let opts = SinkhornOptions { warm_start: Some(&s0), ..SinkhornOptions::new(eps, 1e-12, 100_000) };
            let warm = solve(&c2, &u, &u, &opts).unwrap();
            prop_assert!(max_abs_diff(cold.0.values(), warm.0.values()) <= 1e-9);
            let _ = p0;
        }
    }
}
