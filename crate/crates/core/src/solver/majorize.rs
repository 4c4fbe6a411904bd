//! Block-MM machinery for the `U`-subproblem.
//!
//! For a coupling `Π` with uniform marginals, minimizing the transport cost
//! over `U ∈ St(d, k)` is equivalent to minimizing `tr(UᵀPU)` with
//!
//! ```text
//! P = α (Σ − 1[α > 0] λ_max(Σ) I) − 2 X (sym(Π) − λ_min I) Xᵀ,   α = 1 − 2n λ_min
//! ```
//!
//! where `Σ = XXᵀ/n` and `λ_min` is (a lower bound on) the smallest eigenvalue
//! of `sym(Π)`. `P` is negative semidefinite, so `tr(UᵀPU)` is concave and its
//! tangent plane majorizes it. The majorizer is minimized on the Stiefel
//! manifold by any orthonormal basis of `−PU`.

use faer::{Mat, MatRef};

use crate::error::{dim_err, Result};
use crate::subspace::symmetric_eigenvalues;
use crate::types::{DataMatrix, LambdaMinStrategy, StiefelBasis, TransportPlan};

/// Scalars defining `P` for one coupling. `P` itself is never formed.
#[derive(Clone, Debug, PartialEq)]
pub struct MmContext {
    pub lambda_max_sigma: f64,
    pub lambda_min_sym_plan: f64,
    pub alpha: f64,
    pub strategy: LambdaMinStrategy,
}

impl MmContext {
    pub fn new(
        data: &DataMatrix,
        plan: &TransportPlan,
        lambda_max_sigma: f64,
        strategy: LambdaMinStrategy,
    ) -> Result<Self> {
        let n = data.n_samples();
        check_plan(data, plan)?;
        let lambda_min_sym_plan = match strategy {
            LambdaMinStrategy::GershgorinBound => -1.0 / n as f64,
            LambdaMinStrategy::Exact => {
                let sym = plan.symmetrized();
                *symmetric_eigenvalues(sym.as_ref())?.last().expect("n >= 1")
            }
        };
        let alpha = 1.0 - 2.0 * n as f64 * lambda_min_sym_plan;
        Ok(Self { lambda_max_sigma, lambda_min_sym_plan, alpha, strategy })
    }
}

fn check_plan(data: &DataMatrix, plan: &TransportPlan) -> Result<()> {
    let n = data.n_samples();
    if plan.nrows() != n || plan.ncols() != n {
        return Err(dim_err!("plan is {}x{}, data has n = {n}", plan.nrows(), plan.ncols()));
    }
    Ok(())
}

/// `P U` in `O(ndk)`, no `d x d` matrix formed.
pub fn apply_p(context: &MmContext, data: &DataMatrix, plan: &TransportPlan, u: MatRef<'_, f64>) -> Result<Mat<f64>> {
    check_plan(data, plan)?;
    if u.nrows() != data.dim() {
        return Err(dim_err!("U has {} rows, data has d = {}", u.nrows(), data.dim()));
    }
    let x = data.as_mat();
    let n = data.n_samples() as f64;
    let MmContext { lambda_max_sigma, lambda_min_sym_plan, alpha, .. } = *context;

    let xtu = x.transpose() * u;
    let pi = plan.values();
    let pi_v = pi * &xtu;
    let pit_v = pi.transpose() * &xtu;
    // (sym(Π) − λ_min I) XᵀU
    let inner = Mat::from_fn(xtu.nrows(), xtu.ncols(), |i, j| {
        0.5 * (pi_v[(i, j)] + pit_v[(i, j)]) - lambda_min_sym_plan * xtu[(i, j)]
    });
    let sigma_u = x * &xtu;
    let coupling_term = x * &inner;
    let shift = if alpha > 0.0 { lambda_max_sigma } else { 0.0 };
    Ok(Mat::from_fn(u.nrows(), u.ncols(), |i, j| {
        alpha * (sigma_u[(i, j)] / n - shift * u[(i, j)]) - 2.0 * coupling_term[(i, j)]
    }))
}

/// `tr(UᵀPU)`.
pub fn surrogate_value(context: &MmContext, data: &DataMatrix, plan: &TransportPlan, u: &StiefelBasis) -> Result<f64> {
    let pu = apply_p(context, data, plan, u.as_mat())?;
    Ok(trace_of_product(u.as_mat(), pu.as_ref()))
}

/// The tangent majorizer at `expansion`, evaluated at `u`:
/// `2 tr(UᵀP U_l) − tr(U_lᵀ P U_l)`.
pub fn majorizer_value(
    context: &MmContext,
    data: &DataMatrix,
    plan: &TransportPlan,
    u: MatRef<'_, f64>,
    expansion: &StiefelBasis,
) -> Result<f64> {
    let pul = apply_p(context, data, plan, expansion.as_mat())?;
    Ok(2.0 * trace_of_product(u, pul.as_ref()) - trace_of_product(expansion.as_mat(), pul.as_ref()))
}

/// `tr(AᵀB)`.
pub(crate) fn trace_of_product(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += a[(i, j)] * b[(i, j)];
        }
    }
    acc
}
