//! Linear solvers for the two system shapes that arise in this crate.
//!
//! Dense saddle-point systems come from constrained least-squares problems on
//! vertex patches: minimize a quadratic with symmetric positive definite mass
//! matrix `M` subject to linear equality constraints `B x = c`.  The solver
//! returns the primal minimizer together with the Lagrange multiplier `y` of
//! the stationarity relation `M x - Bᵀ y = b`.  On interior patches the
//! multiplier space contains a known constant direction (the constraint rows
//! sum to zero against it); such systems carry a weight vector and are solved
//! through a single augmented zero-mean row rather than by deflation, which
//! pins the multiplier to zero weighted mean and restores a unique solution.
//!
//! Sparse symmetric positive definite systems come from global finite element
//! assemblies.  A system that is singular with a known one-dimensional
//! nullspace (a pure Neumann stiffness matrix) carries the nullspace vector
//! and a weight vector; it is solved by grounding one unknown and shifting the
//! result along the nullspace so the weighted mean of the solution vanishes.
//!
//! Every solve runs sequentially and is bitwise deterministic for fixed input
//! bits.  Callers that want parallelism should distribute independent systems
//! (one patch per task) rather than expect threading inside a single solve.

use nalgebra::{DMatrix, DVector};
use std::sync::Once;
use thiserror::Error;

/// Relative tolerance on the post-solve residual checks.
const RESIDUAL_TOL: f64 = 1e-10;

/// Relative tolerance on the symmetry of the mass matrix.
const SYMMETRY_TOL: f64 = 1e-13;

/// Errors reported by the solvers in this module.
#[derive(Debug, Error)]
pub enum LinsolveError {
    /// The mass matrix deviates from its transpose beyond tolerance.
    #[error("mass matrix is asymmetric: relative deviation {deviation:.3e}")]
    AsymmetricMass { deviation: f64 },
    /// A matrix required to be positive definite failed its factorization.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    /// The factorization produced a solution that fails the residual check,
    /// which signals rank deficiency beyond any declared nullspace.
    #[error("system is singular or inconsistent: residual {residual:.3e} exceeds {tolerance:.3e}")]
    Singular { residual: f64, tolerance: f64 },
}

/// A dense equality-constrained quadratic minimization problem.
///
/// The primal unknown `x` minimizes `½ xᵀ M x - bᵀ x` subject to `B x = c`;
/// equivalently the pair `(x, y)` satisfies `M x - Bᵀ y = b` and `B x = c`.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    /// Symmetric positive definite quadratic form, `n × n`.
    pub mass: DMatrix<f64>,
    /// Constraint matrix `B`, `m × n`.
    pub constraint: DMatrix<f64>,
    /// Linear term `b` of the objective, length `n`.
    pub load: DVector<f64>,
    /// Constraint right-hand side `c`, length `m`.
    pub constraint_rhs: DVector<f64>,
    /// Weight vector of the constant direction in the multiplier space, if
    /// the constraint rows are linearly dependent against it.  When present,
    /// the returned multiplier has zero weighted mean.
    pub multiplier_mean: Option<DVector<f64>>,
}

impl SaddleSystem {
    /// Builds a system without a multiplier mean constraint.
    pub fn new(
        mass: DMatrix<f64>,
        constraint: DMatrix<f64>,
        load: DVector<f64>,
        constraint_rhs: DVector<f64>,
    ) -> Self {
        Self { mass, constraint, load, constraint_rhs, multiplier_mean: None }
    }

    /// Attaches the weight vector of the constant multiplier direction.
    pub fn with_multiplier_mean(mut self, weights: DVector<f64>) -> Self {
        self.multiplier_mean = Some(weights);
        self
    }

    /// Number of primal unknowns.
    pub fn primal_dim(&self) -> usize {
        self.mass.nrows()
    }

    /// Number of constraints.
    pub fn constraint_dim(&self) -> usize {
        self.constraint.nrows()
    }
}

/// Pins the backend's internal parallelism to sequential execution so that
/// repeated solves of identical inputs return identical bits.
fn sequential_solves() {
    static INIT: Once = Once::new();
    INIT.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Solves a saddle-point system, returning the primal solution and the
/// multiplier of the stationarity relation `M x - Bᵀ y = b`.
///
/// The system is solved through one symmetric indefinite factorization of the
/// full optimality system; when a multiplier mean weight vector is present the
/// system is augmented by a single row that enforces a zero weighted mean on
/// the multiplier.  The solution is verified against both residuals before it
/// is returned.
pub fn solve_saddle(sys: &SaddleSystem) -> Result<(DVector<f64>, DVector<f64>), LinsolveError> {
    sequential_solves();
    let n = sys.primal_dim();
    let m = sys.constraint_dim();
    assert_eq!(sys.mass.ncols(), n, "mass matrix must be square");
    assert_eq!(sys.constraint.ncols(), n, "constraint matrix must have one column per unknown");
    assert_eq!(sys.load.len(), n, "load length must match the primal dimension");
    assert_eq!(sys.constraint_rhs.len(), m, "constraint right-hand side must have one entry per row");
    if let Some(w) = &sys.multiplier_mean {
        assert_eq!(w.len(), m, "multiplier weights must match the constraint dimension");
    }

    let mut mass_scale: f64 = 1.0;
    let mut deviation: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            mass_scale = mass_scale.max(sys.mass[(i, j)].abs());
            deviation = deviation.max((sys.mass[(i, j)] - sys.mass[(j, i)]).abs());
        }
    }
    if deviation > SYMMETRY_TOL * mass_scale {
        return Err(LinsolveError::AsymmetricMass { deviation: deviation / mass_scale });
    }
    if to_faer(&sys.mass).llt(faer::Side::Lower).is_err() {
        return Err(LinsolveError::NotPositiveDefinite);
    }

    // Assemble the symmetric optimality system for (x, ŷ) with ŷ = -y, plus
    // one zero-mean row on the multiplier block when requested.  The weight
    // vector is normalized so the augmented row is well scaled.
    let mean = sys.multiplier_mean.as_ref().map(|w| w / w.norm());
    let extra = usize::from(mean.is_some());
    let dim = n + m + extra;
    let mut kkt = faer::Mat::<f64>::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = sys.mass[(i, j)];
        }
    }
    for i in 0..m {
        for j in 0..n {
            kkt[(n + i, j)] = sys.constraint[(i, j)];
            kkt[(j, n + i)] = sys.constraint[(i, j)];
        }
    }
    if let Some(w) = &mean {
        for i in 0..m {
            kkt[(n + m, n + i)] = w[i];
            kkt[(n + i, n + m)] = w[i];
        }
    }
    let mut rhs = faer::Col::<f64>::zeros(dim);
    for i in 0..n {
        rhs[i] = sys.load[i];
    }
    for i in 0..m {
        rhs[n + i] = sys.constraint_rhs[i];
    }

    use faer::linalg::solvers::Solve;
    let solution = kkt.lblt(faer::Side::Lower).solve(&rhs);
    let x = DVector::from_fn(n, |i, _| solution[i]);
    let y = DVector::from_fn(m, |i, _| -solution[n + i]);

    let stationarity =
        (&sys.mass * &x - sys.constraint.transpose() * &y - &sys.load).norm();
    let feasibility = (&sys.constraint * &x - &sys.constraint_rhs).norm();
    let mass_norm = sys.mass.norm();
    let constraint_norm = sys.constraint.norm();
    let scale = 1.0
        + sys.load.norm()
        + sys.constraint_rhs.norm()
        + mass_norm * x.norm()
        + constraint_norm * (x.norm() + y.norm());
    let tolerance = RESIDUAL_TOL * scale;
    let residual = stationarity.max(feasibility);
    if !residual.is_finite() || residual > tolerance {
        return Err(LinsolveError::Singular { residual, tolerance });
    }
    Ok((x, y))
}

/// Residual pair `(‖M x - Bᵀ y - b‖, ‖B x - c‖)` of a candidate solution.
pub fn saddle_residuals(sys: &SaddleSystem, x: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let stationarity = (&sys.mass * x - sys.constraint.transpose() * y - &sys.load).norm();
    let feasibility = (&sys.constraint * x - &sys.constraint_rhs).norm();
    (stationarity, feasibility)
}

/// A known one-dimensional nullspace of a singular symmetric system, together
/// with the weights that select the representative solution.
#[derive(Debug, Clone)]
pub struct MeanConstraint {
    /// Weights `w`; the returned solution satisfies `wᵀ x = 0`.
    pub weights: Vec<f64>,
    /// Nullspace vector `z` of the matrix, used to shift solutions.
    pub nullvector: Vec<f64>,
}

/// A sparse symmetric positive semi-definite system assembled from triplets.
///
/// Duplicate triplets are summed, so element loops can push local
/// contributions directly.  A singular system (pure Neumann stiffness) must
/// declare its nullspace through [`MeanConstraint`]; it is then solved by
/// grounding the unknown where the nullvector is largest and shifting the
/// solution along the nullvector to zero weighted mean.
#[derive(Debug, Clone)]
pub struct SparseSPD {
    dim: usize,
    triplets: Vec<(usize, usize, f64)>,
    mean: Option<MeanConstraint>,
}

impl SparseSPD {
    /// Creates an empty system with `dim` unknowns.
    pub fn new(dim: usize) -> Self {
        Self { dim, triplets: Vec::new(), mean: None }
    }

    /// Accumulates `value` into entry `(row, col)`.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.dim && col < self.dim, "index out of range");
        self.triplets.push((row, col, value));
    }

    /// Declares the nullspace and the zero-mean selection weights.
    pub fn with_mean_constraint(mut self, weights: Vec<f64>, nullvector: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.dim);
        assert_eq!(nullvector.len(), self.dim);
        self.mean = Some(MeanConstraint { weights, nullvector });
        self
    }

    /// Number of unknowns.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Matrix–vector product of the assembled system.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for &(i, j, v) in &self.triplets {
            out[i] += v * x[j];
        }
        out
    }
}

/// Solves a sparse symmetric positive (semi-)definite system by Cholesky
/// factorization and verifies the residual of the returned solution.
pub fn solve_spd(sys: &SparseSPD, rhs: &DVector<f64>) -> Result<DVector<f64>, LinsolveError> {
    sequential_solves();
    assert_eq!(rhs.len(), sys.dim, "right-hand side length must match the system");
    let grounded = sys.mean.as_ref().map(|mc| {
        let (k, _) = mc
            .nullvector
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("nullvector is nonempty");
        k
    });

    let mut triplets: Vec<faer::sparse::Triplet<usize, usize, f64>> = Vec::new();
    for &(i, j, v) in &sys.triplets {
        if Some(i) == grounded || Some(j) == grounded {
            continue;
        }
        triplets.push(faer::sparse::Triplet::new(i, j, v));
    }
    if let Some(k) = grounded {
        triplets.push(faer::sparse::Triplet::new(k, k, 1.0));
    }
    let matrix =
        faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(sys.dim, sys.dim, &triplets)
            .expect("triplet indices are in range");
    let factor = matrix
        .sp_cholesky(faer::Side::Lower)
        .map_err(|_| LinsolveError::NotPositiveDefinite)?;

    let mut col = faer::Col::<f64>::from_fn(sys.dim, |i| rhs[i]);
    if let Some(k) = grounded {
        col[k] = 0.0;
    }
    use faer::linalg::solvers::Solve;
    let solved = factor.solve(&col);
    let mut x = DVector::from_fn(sys.dim, |i, _| solved[i]);

    if let Some(mc) = &sys.mean {
        let w = DVector::from_column_slice(&mc.weights);
        let z = DVector::from_column_slice(&mc.nullvector);
        let wz = w.dot(&z);
        assert!(wz.abs() > 0.0, "weights must not annihilate the nullvector");
        let shift = w.dot(&x) / wz;
        x -= z * shift;
    }

    let residual_vec = sys.apply(&x) - rhs;
    let matrix_norm: f64 = sys.triplets.iter().map(|t| t.2 * t.2).sum::<f64>().sqrt();
    let scale = 1.0 + rhs.norm() + matrix_norm * x.norm();
    let tolerance = RESIDUAL_TOL * scale;
    let residual = residual_vec.norm();
    if !residual.is_finite() || residual > tolerance {
        return Err(LinsolveError::Singular { residual, tolerance });
    }
    Ok(x)
}
