//! Dense subspace primitives: symmetric eigendecomposition, orthonormal
//! factors (QR and polar), PCA and principal angles.
//!
//! Bases returned here follow one sign convention: every eigenvector has its
//! largest-magnitude entry positive (first such entry on ties). QR factors
//! instead carry a nonnegative `R` diagonal, which makes `qf` a continuous
//! function of its input.

use alloc::vec::Vec;

use faer::{Mat, MatRef, Side};

use crate::error::{dim_err, Error, Result};
use crate::types::{center, DataMatrix, StiefelBasis};

/// Relative asymmetry accepted by the eigensolvers.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigengap at position `k` below which the selection is flagged as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-10;

/// Relative size of an `R` diagonal entry (or singular value) below which an
/// input to [`qf`] or [`pf`] is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct SymmetricEigenResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat<f64>,
}

/// Leading `k` eigenpairs plus the gap `λ_k − λ_{k+1}` (`None` when `k = d`).
#[derive(Clone, Debug)]
pub struct TopK {
    pub basis: StiefelBasis,
    pub eigenvalues: Vec<f64>,
    pub gap: Option<f64>,
}

impl TopK {
    pub fn is_degenerate(&self) -> bool {
        let scale = self.eigenvalues.first().map_or(1.0, |l| l.abs().max(1.0));
        self.gap.is_some_and(|g| g < DEGENERATE_GAP * scale)
    }
}

fn check_symmetric(sym: MatRef<'_, f64>) -> Result<()> {
    let d = sym.nrows();
    if sym.ncols() != d {
        return Err(dim_err!("expected a square matrix, got {}x{}", d, sym.ncols()));
    }
    let mut scale: f64 = 1.0;
    let mut asymmetry: f64 = 0.0;
    for j in 0..d {
        for i in 0..d {
            let v = sym[(i, j)];
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            scale = scale.max(v.abs());
            if i < j {
                asymmetry = asymmetry.max((v - sym[(j, i)]).abs());
            }
        }
    }
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// Flips the sign of `col` so that its largest-magnitude entry is positive.
pub(crate) fn normalize_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col.get(best).is_some_and(|v| *v < 0.0) {
        col.iter_mut().for_each(|v| *v = -*v);
    }
}

pub(crate) fn normalize_signs(m: &mut Mat<f64>) {
    for j in 0..m.ncols() {
        normalize_sign(m.col_as_slice_mut(j));
    }
}

pub fn symmetric_eigen(sym: MatRef<'_, f64>) -> Result<SymmetricEigenResult> {
    check_symmetric(sym)?;
    let d = sym.nrows();
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(alloc::format!("eigendecomposition failed: {e:?}")))?;
    let values = evd.S().column_vector();
    let vectors = evd.U();
    // faer sorts ascending.
    let eigenvalues = (0..d).rev().map(|i| values[i]).collect();
    let mut eigenvectors = Mat::from_fn(d, d, |i, j| vectors[(i, d - 1 - j)]);
    normalize_signs(&mut eigenvectors);
    Ok(SymmetricEigenResult { eigenvalues, eigenvectors })
}

/// Eigenvalues only, descending.
pub fn symmetric_eigenvalues(sym: MatRef<'_, f64>) -> Result<Vec<f64>> {
    check_symmetric(sym)?;
    let mut values = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(alloc::format!("eigenvalue computation failed: {e:?}")))?;
    values.reverse();
    Ok(values)
}

pub fn top_k_eigen(sym: MatRef<'_, f64>, k: usize) -> Result<TopK> {
    let d = sym.nrows();
    if k == 0 || k > d {
        return Err(dim_err!("need 1 <= k <= d, got k = {k}, d = {d}"));
    }
    let full = symmetric_eigen(sym)?;
    let gap = (k < d).then(|| full.eigenvalues[k - 1] - full.eigenvalues[k]);
    let basis = StiefelBasis::new_unchecked(full.eigenvectors.subcols(0, k).to_owned());
    Ok(TopK { basis, eigenvalues: full.eigenvalues[..k].to_vec(), gap })
}

/// Eigenvectors of the `k` largest eigenvalues of a symmetric matrix.
pub fn top_k_eigvecs(sym: MatRef<'_, f64>, k: usize) -> Result<StiefelBasis> {
    top_k_eigen(sym, k).map(|t| t.basis)
}

fn check_tall(a: MatRef<'_, f64>) -> Result<()> {
    if a.ncols() == 0 || a.ncols() > a.nrows() {
        return Err(dim_err!("need a d x k matrix with 1 <= k <= d, got {}x{}", a.nrows(), a.ncols()));
    }
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn max_column_norm(a: MatRef<'_, f64>) -> f64 {
    (0..a.ncols())
        .map(|j| libm::sqrt((0..a.nrows()).map(|i| a[(i, j)] * a[(i, j)]).sum()))
        .fold(0.0, f64::max)
}

/// Orthonormal factor of the thin QR decomposition, with `diag(R) >= 0`.
pub fn qf(a: MatRef<'_, f64>) -> Result<StiefelBasis> {
    check_tall(a)?;
    let scale = max_column_norm(a);
    let qr = a.qr();
    let r = qr.thin_R();
    let mut q = qr.compute_thin_Q();
    for j in 0..a.ncols() {
        let rjj = r[(j, j)];
        if !(rjj.abs() > RANK_TOL * scale) {
            return Err(Error::RankDeficient { column: j });
        }
        if rjj < 0.0 {
            q.col_as_slice_mut(j).iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(StiefelBasis::new_unchecked(q))
}

/// Orthonormal polar factor `W Zᵀ` of `A = W S Zᵀ`.
pub fn pf(a: MatRef<'_, f64>) -> Result<StiefelBasis> {
    check_tall(a)?;
    let svd = a.thin_svd().map_err(|e| Error::Linalg(alloc::format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let k = a.ncols();
    let top = s[0];
    if let Some(j) = (0..k).find(|&j| !(s[j] > RANK_TOL * top)) {
        return Err(Error::RankDeficient { column: j });
    }
    Ok(StiefelBasis::new_unchecked(svd.U() * svd.V().transpose()))
}

/// Leading principal directions of `Σ = (1/n) X Xᵀ` and its largest eigenvalue.
pub fn pca(data: &DataMatrix, k: usize, centered: bool) -> Result<(StiefelBasis, f64)> {
    let r = pca_spectrum(data, k, centered)?;
    Ok((r.basis, r.eigenvalues[0]))
}

/// As [`pca`] but also returns the leading eigenvalues and gap.
pub fn pca_spectrum(data: &DataMatrix, k: usize, centered: bool) -> Result<TopK> {
    let (d, n) = (data.dim(), data.n_samples());
    if k == 0 || k >= d {
        return Err(dim_err!("need 1 <= k < d, got k = {k}, d = {d}"));
    }
    let centered_data;
    let x = if centered {
        centered_data = center(data);
        centered_data.as_mat()
    } else {
        data.as_mat()
    };
    let inv_n = 1.0 / n as f64;

    if d <= n || k >= n {
        // The covariance is small enough (or its null space is needed).
        let xxt = x * x.transpose();
        let sigma = Mat::from_fn(d, d, |i, j| 0.5 * (xxt[(i, j)] + xxt[(j, i)]) * inv_n);
        return top_k_eigen(sigma.as_ref(), k);
    }

    // d > n: left singular vectors of X, O(d n²).
    let svd = x.thin_svd().map_err(|e| Error::Linalg(alloc::format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let eigenvalues: Vec<f64> = (0..n).map(|i| s[i] * s[i] * inv_n).collect();
    let mut u = svd.U().subcols(0, k).to_owned();
    normalize_signs(&mut u);
    let gap = Some(eigenvalues[k - 1] - eigenvalues[k]);
    Ok(TopK { basis: StiefelBasis::new_unchecked(u), eigenvalues: eigenvalues[..k].to_vec(), gap })
}

/// Principal angles between `span(a)` and `span(b)`, ascending.
///
/// Small angles are read from the sines (singular values of `B − AAᵀB`),
/// large ones from the cosines (singular values of `AᵀB`).
pub fn principal_angles(a: &StiefelBasis, b: &StiefelBasis) -> Result<Vec<f64>> {
    check_same_shape(a, b)?;
    let cross = a.as_mat().transpose() * b.as_mat();
    let residual = b.as_mat() - a.as_mat() * &cross;
    let svd_err = |e| Error::Linalg(alloc::format!("svd failed: {e:?}"));
    let cosines = cross.as_ref().singular_values().map_err(svd_err)?;
    let mut sines = residual.as_ref().singular_values().map_err(svd_err)?;
    sines.truncate(b.k());
    sines.reverse();
    // Cosines come nonincreasing and sines nondecreasing, so the angles come out ascending.
    Ok(cosines
        .iter()
        .zip(&sines)
        .map(|(c, s)| {
            let c = c.clamp(0.0, 1.0);
            if c * c > 0.5 {
                libm::asin(s.clamp(0.0, 1.0))
            } else {
                libm::acos(c)
            }
        })
        .collect())
}

/// Largest principal angle.
pub fn max_principal_angle(a: &StiefelBasis, b: &StiefelBasis) -> Result<f64> {
    Ok(principal_angles(a, b)?.into_iter().fold(0.0, f64::max))
}

/// `‖AAᵀ − BBᵀ‖_F`, computed as `√2 ‖B − AAᵀB‖_F` to avoid cancellation.
pub fn projector_distance(a: &StiefelBasis, b: &StiefelBasis) -> Result<f64> {
    check_same_shape(a, b)?;
    let cross = a.as_mat().transpose() * b.as_mat();
    let residual = b.as_mat() - a.as_mat() * &cross;
    Ok(core::f64::consts::SQRT_2 * residual.norm_l2())
}

fn check_same_shape(a: &StiefelBasis, b: &StiefelBasis) -> Result<()> {
    if a.dim() != b.dim() || a.k() != b.k() {
        return Err(dim_err!("bases are {}x{} and {}x{}", a.dim(), a.k(), b.dim(), b.k()));
    }
    Ok(())
}
