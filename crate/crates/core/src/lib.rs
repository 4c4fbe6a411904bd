//! Entropic Wasserstein component analysis (EWCA).
//!
//! EWCA looks for an orthonormal basis `U ∈ St(d, k)` minimizing the entropic
//! optimal transport cost between the samples `x_i` and their projections
//! `UUᵀx_j`:
//!
//! ```text
//! min_{Π, U}  Σ_ij ‖x_i − UUᵀx_j‖² π_ij − ε H(Π)
//! ```
//!
//! over couplings `Π` with uniform marginals. As `ε → 0` this is PCA; as
//! `ε → ∞` on centered data it selects the lowest-variance directions.
//!
//! Two solvers share the Sinkhorn step for `Π`:
//!
//! * [`fit_bcd`] minimizes exactly over `U` with a `d x d` eigendecomposition.
//! * [`fit_mm`] takes majorization-minimization steps `U ← qf(−PU)` that only
//!   ever touch `d x k` and `n x n` matrices.
//!
//! The crate is `no_std` (with `alloc`). The `std` feature enables timing of
//! fits and the faster matrix kernels of the linear algebra backend.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod error;
pub mod eval;
pub mod rng;
pub mod sinkhorn;
pub mod solver;
pub mod subspace;
pub mod types;

pub use error::{Error, Result};
pub use eval::{
    evaluate_embedding, make_synthetic_clusters, one_nn_error, plan_class_mass, select_epsilon, Embedding,
    EvalReport, LabeledDataset, SplitSpec,
};
pub use sinkhorn::{entropic_ot_value, projection_cost, sinkhorn_knopp, squared_l2_cost, CostMatrix, SinkhornState};
pub use solver::{build_m, ewca_objective, fit, fit_bcd, fit_mm, Algorithm};
pub use subspace::{pca, pf, principal_angles, qf, top_k_eigvecs};
pub use types::{
    center, validate, DataMatrix, FitResult, Histogram, LambdaMinStrategy, SolverConfig, StiefelBasis,
    TransportPlan, Warning,
};

pub use faer::{Mat, MatRef};
