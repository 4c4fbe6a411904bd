//! EWCA fitting: block coordinate descent and block majorization-minimization.
//!
//! Both solvers alternate a Sinkhorn solve for the coupling with an update of
//! the basis, starting from PCA. BCD solves the basis subproblem exactly as
//! the top-`k` eigenvectors of `M = X (2 sym(Π) − I/n) Xᵀ`, which costs a
//! `d x d` eigendecomposition. Block-MM replaces it by `mm_inner_iter` steps
//! `U ← qf(−PU)` (see [`majorize`]).

pub mod majorize;

use alloc::vec::Vec;

use faer::{Mat, MatRef};

use crate::error::{config_err, dim_err, Error, Result};
use crate::rng::{self, Purpose};
use crate::sinkhorn::{self, entropic_ot_value, projection_cost, CostMatrix, Domain, SinkhornOptions, SinkhornState};
use crate::subspace::{self, normalize_signs, qf, DEGENERATE_GAP};
use crate::types::{center, validate, DataMatrix, FitResult, Histogram, SolverConfig, StiefelBasis, TransportPlan, Warning};

pub use majorize::{apply_p, majorizer_value, surrogate_value, MmContext};

/// Magnitude, relative to `‖−PU‖_F`, of the perturbation applied when the
/// majorization step is rank deficient.
pub const RANK_PERTURBATION: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    /// Block coordinate descent with an exact eigen-solve for `U`.
    Bcd,
    /// Block majorization-minimization with QR steps for `U`.
    Mm,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bcd => "bcd",
            Algorithm::Mm => "mm",
        }
    }
}

impl core::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bcd" => Ok(Algorithm::Bcd),
            "mm" => Ok(Algorithm::Mm),
            other => Err(config_err!("unknown algorithm {other:?}, expected bcd or mm")),
        }
    }
}

fn check_uniform_plan(data: &DataMatrix, plan: &TransportPlan) -> Result<()> {
    let n = data.n_samples();
    if plan.nrows() != n || plan.ncols() != n {
        return Err(dim_err!("plan is {}x{}, data has n = {n}", plan.nrows(), plan.ncols()));
    }
    if !plan.row_marginal().is_uniform() || !plan.col_marginal().is_uniform() {
        return Err(config_err!("EWCA couplings must have uniform 1/n marginals"));
    }
    Ok(())
}

/// `M = X (2 sym(Π) − I/n) Xᵀ`, symmetrized.
pub fn build_m(data: &DataMatrix, plan: &TransportPlan) -> Result<Mat<f64>> {
    check_uniform_plan(data, plan)?;
    let n = data.n_samples();
    let sym = plan.symmetrized();
    let inv_n = 1.0 / n as f64;
    let weights = Mat::from_fn(n, n, |i, j| 2.0 * sym[(i, j)] - if i == j { inv_n } else { 0.0 });
    let x = data.as_mat();
    let xw = x * &weights;
    let m = &xw * x.transpose();
    let d = data.dim();
    Ok(Mat::from_fn(d, d, |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
}

/// `Σ_ij ‖x_i − UUᵀx_j‖² π_ij − ε H(Π)`.
pub fn ewca_objective(data: &DataMatrix, basis: &StiefelBasis, plan: &TransportPlan, epsilon: f64) -> Result<f64> {
    let cost = projection_cost(data, basis)?;
    entropic_ot_value(plan, &cost, plan.row_marginal(), plan.col_marginal(), epsilon)
}

pub fn fit_bcd(data: &DataMatrix, config: &SolverConfig) -> Result<FitResult> {
    fit(data, config, Algorithm::Bcd)
}

pub fn fit_mm(data: &DataMatrix, config: &SolverConfig) -> Result<FitResult> {
    fit(data, config, Algorithm::Mm)
}

/// Fits from the PCA basis. With `epsilon == 0` the PCA basis is returned
/// together with the diagonal coupling `I/n`.
pub fn fit(data: &DataMatrix, config: &SolverConfig, algorithm: Algorithm) -> Result<FitResult> {
    fit_with_init(data, config, algorithm, None)
}

/// As [`fit`], optionally starting from `init` instead of the PCA basis.
pub fn fit_with_init(
    data: &DataMatrix,
    config: &SolverConfig,
    algorithm: Algorithm,
    init: Option<&StiefelBasis>,
) -> Result<FitResult> {
    #[cfg(feature = "std")]
    let started = std::time::Instant::now();

    validate(data, config)?;
    if let Some(u) = init {
        if u.dim() != data.dim() || u.k() != config.k {
            return Err(dim_err!("initial basis is {}x{}, expected {}x{}", u.dim(), u.k(), data.dim(), config.k));
        }
    }
    let x = if config.center_data { center(data) } else { data.clone() };
    let (pca_basis, lambda_max_sigma) = subspace::pca(&x, config.k, false)?;
    let basis = init.cloned().unwrap_or(pca_basis);

    #[allow(unused_mut)]
    let mut result = if config.epsilon == 0.0 {
        pca_limit(&x, basis)?
    } else {
        Fitter { x: &x, config, algorithm, lambda_max_sigma }.run(basis)?
    };

    #[cfg(feature = "std")]
    {
        result.wall_time = started.elapsed().as_secs_f64();
    }
    Ok(result)
}

fn pca_limit(x: &DataMatrix, basis: StiefelBasis) -> Result<FitResult> {
    let plan = TransportPlan::diagonal(x.n_samples());
    let objective = ewca_objective(x, &basis, &plan, 0.0)?;
    Ok(FitResult {
        basis,
        plan,
        objective_trace: alloc::vec![objective],
        iterations: 0,
        wall_time: 0.0,
        converged: true,
        warnings: Vec::new(),
    })
}

struct Fitter<'a> {
    x: &'a DataMatrix,
    config: &'a SolverConfig,
    algorithm: Algorithm,
    lambda_max_sigma: f64,
}

struct Coupling {
    cost: CostMatrix,
    plan: TransportPlan,
    state: SinkhornState,
    objective: f64,
}

impl Fitter<'_> {
    fn run(&self, mut basis: StiefelBasis) -> Result<FitResult> {
        let mut warnings = Vec::new();
        let mut current = self.couple(&basis, None, 0, &mut warnings)?;
        let mut trace = alloc::vec![current.objective];
        let mut converged = false;
        let mut iterations = 0;

        for t in 1..=self.config.outer_max_iter {
            basis = match self.algorithm {
                Algorithm::Bcd => self.eigen_step(&basis, &current.plan, t, &mut warnings)?,
                Algorithm::Mm => self.mm_steps(basis, &current.plan, t, &mut warnings)?,
            };
            let next = self.couple(&basis, Some(&current.state), t, &mut warnings)?;
            let previous = current.objective;
            current = next;
            trace.push(current.objective);
            iterations = t;
            let change = (previous - current.objective).abs();
            if change <= self.config.outer_tol * previous.abs() || change == 0.0 {
                converged = true;
                break;
            }
        }
        if !converged {
            warnings.push(Warning::OuterMaxIterReached);
        }
        drop(current.cost);
        Ok(FitResult {
            basis,
            plan: current.plan,
            objective_trace: trace,
            iterations,
            wall_time: 0.0,
            converged,
            warnings,
        })
    }

    fn couple(
        &self,
        basis: &StiefelBasis,
        warm: Option<&SinkhornState>,
        outer_iteration: usize,
        warnings: &mut Vec<Warning>,
    ) -> Result<Coupling> {
        let n = self.x.n_samples();
        let uniform = Histogram::uniform(n);
        let cost = projection_cost(self.x, basis)?;
        let opts = SinkhornOptions {
            epsilon: self.config.epsilon,
            tol: self.config.sinkhorn_tol,
            max_iter: self.config.sinkhorn_max_iter,
            domain: if self.config.log_domain { Domain::Log } else { Domain::Auto },
            warm_start: warm,
        };
        let (plan, state) = sinkhorn::solve(&cost, &uniform, &uniform, &opts)?;
        if state.fell_back {
            warnings.push(Warning::LogDomainFallback { outer_iteration });
        }
        if !state.converged {
            warnings.push(Warning::SinkhornNotConverged { outer_iteration, marginal_error: state.marginal_error });
        }
        let objective = entropic_ot_value(&plan, &cost, &uniform, &uniform, self.config.epsilon)?;
        Ok(Coupling { cost, plan, state, objective })
    }

    /// Exact minimizer over `U`: top-`k` eigenvectors of `M`.
    fn eigen_step(
        &self,
        previous: &StiefelBasis,
        plan: &TransportPlan,
        outer_iteration: usize,
        warnings: &mut Vec<Warning>,
    ) -> Result<StiefelBasis> {
        let m = build_m(self.x, plan)?;
        let k = self.config.k;
        let eig = subspace::symmetric_eigen(m.as_ref())?;
        let values = &eig.eigenvalues;
        let scale = values[0].abs().max(values[values.len() - 1].abs()).max(1.0);
        let tie = DEGENERATE_GAP * scale;
        let gap = values[k - 1] - values[k];
        if gap >= tie {
            return Ok(StiefelBasis::new_unchecked(eig.eigenvectors.subcols(0, k).to_owned()));
        }

        warnings.push(Warning::DegenerateEigengap { outer_iteration, gap });
        // Eigenvalues tied with λ_k form a cluster [lo, hi); keep everything
        // above it and fill the rest with the cluster directions closest to
        // the previous basis.
        let lo = (0..k).find(|&i| values[i] - values[k - 1] < tie).unwrap_or(k - 1);
        let hi = (k..values.len()).find(|&i| values[k - 1] - values[i] >= tie).unwrap_or(values.len());
        let cluster = eig.eigenvectors.subcols(lo, hi - lo);
        let overlap = cluster.transpose() * previous.as_mat();
        let svd = overlap.thin_svd().map_err(|e| Error::Linalg(alloc::format!("svd failed: {e:?}")))?;
        let need = k - lo;
        let chosen = cluster * svd.U().subcols(0, need);
        let mut u = Mat::from_fn(self.x.dim(), k, |i, j| {
            if j < lo {
                eig.eigenvectors[(i, j)]
            } else {
                chosen[(i, j - lo)]
            }
        });
        normalize_signs(&mut u);
        Ok(StiefelBasis::new_unchecked(u))
    }

    fn mm_steps(
        &self,
        mut basis: StiefelBasis,
        plan: &TransportPlan,
        outer_iteration: usize,
        warnings: &mut Vec<Warning>,
    ) -> Result<StiefelBasis> {
        let strategy = self.config.lambda_min_strategy_for(self.x.n_samples());
        let context = MmContext::new(self.x, plan, self.lambda_max_sigma, strategy)?;
        for inner in 0..self.config.mm_inner_iter {
            let pu = apply_p(&context, self.x, plan, basis.as_mat())?;
            let descent = Mat::from_fn(pu.nrows(), pu.ncols(), |i, j| -pu[(i, j)]);
            basis = match qf(descent.as_ref()) {
                Ok(q) => q,
                Err(Error::RankDeficient { .. }) => {
                    warnings.push(Warning::RankDeficientPerturbed { outer_iteration, inner_iteration: inner });
                    qf(self.perturb(descent.as_ref(), outer_iteration, inner).as_ref())?
                }
                Err(e) => return Err(e),
            };
        }
        Ok(basis)
    }

    fn perturb(&self, a: MatRef<'_, f64>, outer: usize, inner: usize) -> Mat<f64> {
        let index = (outer as u64) << 20 | inner as u64;
        let mut rng = rng::stream(self.config.seed, Purpose::Perturbation, index);
        let magnitude = RANK_PERTURBATION * a.norm_l2().max(1e-150);
        Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + magnitude * rng::standard_normal(&mut rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::relative_entropy;
    use crate::types::{Histogram, LambdaMinStrategy};

    fn data(rows: &[&[f64]]) -> DataMatrix {
        DataMatrix::from_samples(rows).unwrap()
    }

    fn plan(rows: &[&[f64]]) -> TransportPlan {
        let n = rows.len();
        TransportPlan::uniform_marginals(Mat::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn build_m_identity_example() {
        let x = data(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let m = build_m(&x, &plan(&[&[0.3, 0.2], &[0.2, 0.3]])).unwrap();
        let expected = [[0.1, 0.4], [0.4, 0.1]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[(i, j)] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn build_m_limits() {
        let x = center(&data(&[&[1.0, 2.0, 0.5], &[-1.0, 0.0, 2.0], &[3.0, 1.0, -1.0], &[0.0, 0.5, 0.5]]));
        let n = 4;
        let xm = x.as_mat();
        let sigma = xm * xm.transpose() * faer::Scale(0.25);
        let diag = build_m(&x, &TransportPlan::diagonal(n)).unwrap();
        assert!((&diag - &sigma).norm_l2() < 1e-14);
        let u = Histogram::uniform(n);
        let product = build_m(&x, &TransportPlan::product(&u, &u)).unwrap();
        assert!((&product + &sigma).norm_l2() < 1e-14);
    }

    #[test]
    fn build_m_rejects_non_uniform_marginals() {
        let x = data(&[&[1.0], &[2.0]]);
        let a = Histogram::new(alloc::vec![0.25, 0.75]).unwrap();
        let p = TransportPlan::product(&a, &a);
        assert!(matches!(build_m(&x, &p), Err(Error::Config(_))));
    }

    #[test]
    fn objective_examples() {
        let eps = 0.7;
        let zero = DataMatrix::from_fn(2, 3, |_, _| 0.0).unwrap();
        let u = StiefelBasis::canonical(2, 1).unwrap();
        let h = Histogram::uniform(3);
        let p = TransportPlan::product(&h, &h);
        let p2 = plan(&[&[0.2, 0.1, 1.0 / 30.0], &[0.1, 0.2, 1.0 / 30.0], &[1.0 / 30.0, 1.0 / 30.0, 4.0 / 15.0]]);
        for p in [&p, &p2] {
            let v = ewca_objective(&zero, &u, p, eps).unwrap();
            assert!((v + eps * relative_entropy(p)).abs() < 1e-14);
        }
        // Data inside span(U) with the identity coupling: zero transport.
        let inside = data(&[&[1.0, 0.0], &[-2.0, 0.0], &[0.5, 0.0]]);
        let diag = TransportPlan::diagonal(3);
        let v = ewca_objective(&inside, &u, &diag, eps).unwrap();
        assert!((v + eps * relative_entropy(&diag)).abs() < 1e-14);
    }

    #[test]
    fn objective_matches_double_loop() {
        let x = data(&[&[0.3, -1.2], &[2.0, 0.4], &[-0.7, 1.1]]);
        let angle: f64 = 0.6;
        let u = StiefelBasis::new(Mat::from_fn(2, 1, |i, _| if i == 0 { angle.cos() } else { angle.sin() })).unwrap();
        let p = plan(&[&[0.2, 0.1, 1.0 / 30.0], &[0.1, 0.2, 1.0 / 30.0], &[1.0 / 30.0, 1.0 / 30.0, 4.0 / 15.0]]);
        let eps = 0.3;
        let mut naive = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let xi = x.sample(i);
                let xj = x.sample(j);
                let t = xj[0] * angle.cos() + xj[1] * angle.sin();
                let proj = [t * angle.cos(), t * angle.sin()];
                let dist = (xi[0] - proj[0]).powi(2) + (xi[1] - proj[1]).powi(2);
                let pij = p.values()[(i, j)];
                naive += dist * pij + eps * pij * (pij * 9.0).ln();
            }
        }
        assert!((ewca_objective(&x, &u, &p, eps).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn zero_epsilon_is_pca() {
        let x = data(&[&[3.0, 0.1, 0.0], &[-3.0, -0.1, 0.2], &[1.0, 0.3, -0.1], &[-1.0, -0.3, -0.1]]);
        let config = SolverConfig::new(1, 0.0);
        let fit = fit_bcd(&x, &config).unwrap();
        let (pca_basis, _) = subspace::pca(&x, 1, true).unwrap();
        assert!(subspace::max_principal_angle(&fit.basis, &pca_basis).unwrap() < 1e-12);
        assert_eq!(fit.plan.values(), TransportPlan::diagonal(4).values());
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::Bcd, Algorithm::Mm] {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("pca".parse::<Algorithm>().is_err());
    }

    #[test]
    fn init_shape_is_checked() {
        let x = data(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 3.0]]);
        let config = SolverConfig::new(1, 0.5);
        let wrong = StiefelBasis::canonical(3, 2).unwrap();
        assert!(matches!(fit_with_init(&x, &config, Algorithm::Mm, Some(&wrong)), Err(Error::Dimension(_))));
    }

    #[test]
    fn degenerate_spectrum_warns_and_stays_orthonormal() {
        // Four points on the unit square: Σ is isotropic in the plane.
        let x = data(&[&[1.0, 1.0, 0.0], &[1.0, -1.0, 0.0], &[-1.0, 1.0, 0.0], &[-1.0, -1.0, 0.0]]);
        let mut config = SolverConfig::new(2, 100.0);
        config.lambda_min_strategy = Some(LambdaMinStrategy::Exact);
        let fit = fit_bcd(&x, &config).unwrap();
        assert!(fit.basis.orthonormality_error() < 1e-12);
        assert!(fit.warnings.iter().any(|w| matches!(w, Warning::DegenerateEigengap { .. })));
    }
}
