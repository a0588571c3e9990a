//! Patch-wise flux equilibration: one small constrained least-squares
//! problem per mesh vertex, whose solutions sum to a conforming flux with
//! exactly prescribed divergence.
//!
//! For each vertex `a`, the patch problem minimizes `‖v + τ‖` over flux
//! fields `v` on the vertex patch `ω_a`, subject to a prescribed elementwise
//! divergence and zero normal trace on the patch boundary — all of it when
//! `a` is not a Dirichlet vertex, everything except the Dirichlet faces when
//! it is. The
//! target `τ` is the hat-weighted residual flux `ψ_a(ξ + ∇u_h)` — or the
//! variant that replaces `ψ_a ξ` by its flux interpolant, which leads to the
//! same minimizer whenever `ξ` is itself a piecewise flux-space field. The
//! divergence data `g_a = Π_p(ψ_a f) − ∇ψ_a·(Π_p ξ + ∇u_h)` inherits
//! compatibility on fully constrained patches from the Galerkin orthogonality
//! of `u_h` against the hat function, which is checked, not assumed.
//!
//! Degrees of freedom of a patch problem are the moment coefficients of the
//! flux basis: coefficients on a shared interior face are a single unknown
//! for both incident elements (this is exactly normal-trace continuity), and
//! coefficients on constrained faces are eliminated, so boundary conditions
//! hold to the last bit. Summing the patch solutions element by element then
//! yields a conforming field whose divergence is the sum of the patch data —
//! `Π_p f`, since the hats partition unity and their gradients cancel.
//!
//! The module solves one patch in [`patch_solve`], the whole mesh in
//! [`equilibrate`], and re-verifies the advertised identities on any
//! assembled flux in [`verify_equilibration`]. Patch problems are mutually
//! independent pure computations; callers may distribute them freely.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DVector, Point2, Vector2};
use serde::Serialize;
use thiserror::Error;

use crate::linsolve::{solve_saddle, LinsolveError, SaddleSystem};
use crate::mesh::{
    all_patches, classify_vertices, hat_eval, BoundaryPartition, Mesh, Patch, VertexClass,
};
use crate::polyspace::{
    element_flux_gram, element_flux_moments, normal_trace_sup_bound, project_rtn_element,
    project_scalar, rtn_dim, scalar_dim, tabulate_flux, triangle_rule, AffineMap, MeshFn,
    PiecewisePoly, RTNBasis, RTNField, ScalarBasis, VectorField,
};
use crate::primal::{DofMap, PrimalSolution, ProblemData};

/// Relative tolerance for the compatibility of patch divergence data.
pub const COMPATIBILITY_TOL: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum EquilibrationError {
    /// Divergence data on a fully constrained patch has nonzero mean, which
    /// makes the patch problem unsolvable; for data built by [`patch_rhs`]
    /// this signals a broken primal solve.
    #[error(
        "patch data at vertex {vertex} is incompatible: |(g,1)| = {integral:.3e} \
         exceeds {tolerance:.3e}"
    )]
    IncompatiblePatchData { vertex: usize, integral: f64, tolerance: f64 },
    /// Flux assembly did not receive exactly one patch flux per mesh vertex.
    #[error("no patch flux supplied for vertex {vertex}")]
    MissingPatch { vertex: usize },
    #[error(transparent)]
    Solver(#[from] LinsolveError),
}

/// Quadrature degree used when projecting source data at flux degree `p`:
/// high enough for exact projections of polynomial data up to `data_degree`,
/// and shared between [`patch_rhs`] and [`verify_equilibration`] (and the
/// lifting verifications) so the partition-of-unity cancellation between
/// them is exact.
pub(crate) fn data_rule_degree(degree: usize, data_degree: usize) -> usize {
    (2 * degree + 2).max(degree + data_degree + 3)
}

/// Quadrature degree for target moments and norms at flux degree `p`.
pub(crate) fn target_rule_degree(degree: usize, data_degree: usize) -> usize {
    (2 * degree + 4).max(2 * data_degree + 2)
}

/// Divergence data for one vertex patch: per patch element, the coefficients
/// of `Π_p(ψ_a f) − ∇ψ_a·(Π_p ξ + ∇u_h)` in the orthonormal element basis,
/// parallel to `patch.elements`.
///
/// On patches whose flux space constrains the whole boundary, the data must
/// have zero mean over the patch; the check exploits that the hat function
/// `ψ_a` is then an admissible test function of the primal solve, so the
/// mean equals a Galerkin residual. A violation is reported as an error
/// rather than asserted, since it indicates inconsistent inputs.
pub fn patch_rhs(
    mesh: &Mesh,
    patch: &Patch,
    data: &ProblemData,
    solution: &PrimalSolution,
    degree: usize,
) -> Result<Vec<DVector<f64>>, EquilibrationError> {
    assert!(
        degree >= solution.degree.max(1),
        "flux degree {degree} must cover the primal degree {}",
        solution.degree
    );
    let sdim = scalar_dim(degree);
    let basis = ScalarBasis::new(degree);
    let rule = triangle_rule(data_rule_degree(degree, data.data_degree));
    let mut vals = vec![vec![0.0; sdim]; rule.points.len()];
    for (q, &x) in rule.points.iter().enumerate() {
        basis.eval_into(x, &mut vals[q]);
    }

    let mut out = Vec::with_capacity(patch.elements.len());
    let mut integral: f64 = 0.0;
    let mut norm_sq: f64 = 0.0;
    for &e in &patch.elements {
        let map = AffineMap::for_element(mesh, e);
        let sqrt_det = map.det.sqrt();
        let mut g = DVector::zeros(sdim);
        for (q, &xhat) in rule.points.iter().enumerate() {
            let x = map.to_physical(xhat);
            let (psi, grad_psi) = hat_eval(mesh, patch, e, x).expect("patch element");
            let density = psi * data.f.eval(mesh, e, x)
                - grad_psi.dot(&(data.xi.eval(mesh, e, x) + solution.eval_gradient(mesh, e, x)));
            let w = rule.weights[q] * sqrt_det * density;
            for m in 0..sdim {
                g[m] += w * vals[q][m];
            }
        }
        integral += g[0] * mesh.areas[e].sqrt();
        norm_sq += g.norm_squared();
        out.push(g);
    }

    if patch.class == VertexClass::Interior {
        let tolerance = COMPATIBILITY_TOL * (1.0 + norm_sq.sqrt());
        if integral.abs() > tolerance {
            return Err(EquilibrationError::IncompatiblePatchData {
                vertex: patch.center,
                integral: integral.abs(),
                tolerance,
            });
        }
    }
    Ok(out)
}

/// The target field of a patch minimization, reduced to what the solver
/// needs: its moments against the scaled flux basis on each patch element,
/// and its squared norm over the patch (used for objective values).
pub struct PatchTarget {
    /// Per patch element, `(τ, b_j)_K` for every basis member `j`.
    pub moments: Vec<DVector<f64>>,
    /// `‖τ‖²` over the patch.
    pub norm_sq: f64,
}

impl PatchTarget {
    /// The zero target, minimizing the plain norm of the flux.
    pub fn zeros(basis: &RTNBasis, elements: usize) -> Self {
        PatchTarget { moments: vec![DVector::zeros(basis.dim); elements], norm_sq: 0.0 }
    }
}

/// Target `τ = ψ_a (ξ + ∇u_h)`: the hat-weighted residual flux, evaluated by
/// quadrature.
pub fn hat_target(
    mesh: &Mesh,
    patch: &Patch,
    basis: &RTNBasis,
    xi: &dyn VectorField,
    solution: &PrimalSolution,
    data_degree: usize,
) -> PatchTarget {
    let tab = tabulate_flux(basis, target_rule_degree(basis.degree, data_degree));
    let sampler = MeshFn(|m: &Mesh, e: usize, x: Point2<f64>| {
        let (psi, _) = hat_eval(m, patch, e, x).expect("patch element");
        psi * (xi.eval(m, e, x) + solution.eval_gradient(m, e, x))
    });
    let mut moments = Vec::with_capacity(patch.elements.len());
    let mut norm_sq = 0.0;
    for &e in &patch.elements {
        let map = AffineMap::for_element(mesh, e);
        let scalings = basis.element_scalings(mesh, e);
        moments.push(DVector::from_vec(element_flux_moments(
            &sampler, &tab, mesh, e, &scalings,
        )));
        for (q, &xhat) in tab.rule.points.iter().enumerate() {
            let v = sampler.eval(mesh, e, map.to_physical(xhat));
            norm_sq += tab.rule.weights[q] * map.det * v.norm_squared();
        }
    }
    PatchTarget { moments, norm_sq }
}

/// Target `τ = I_RTN(ψ_a ξ) + ψ_a ∇u_h`, with the hat-weighted data part
/// replaced by its elementwise flux interpolant. When `ξ` is a piecewise
/// member of the flux space of one degree lower, the interpolation changes
/// nothing and this coincides with [`hat_target`].
pub fn projected_target(
    mesh: &Mesh,
    patch: &Patch,
    basis: &RTNBasis,
    xi: &dyn VectorField,
    solution: &PrimalSolution,
    data_degree: usize,
) -> PatchTarget {
    let quad_degree = target_rule_degree(basis.degree, data_degree);
    let tab = tabulate_flux(basis, quad_degree);
    let weighted_xi = MeshFn(|m: &Mesh, e: usize, x: Point2<f64>| {
        let (psi, _) = hat_eval(m, patch, e, x).expect("patch element");
        psi * xi.eval(m, e, x)
    });
    let weighted_grad = MeshFn(|m: &Mesh, e: usize, x: Point2<f64>| {
        let (psi, _) = hat_eval(m, patch, e, x).expect("patch element");
        psi * solution.eval_gradient(m, e, x)
    });
    let mut moments = Vec::with_capacity(patch.elements.len());
    let mut norm_sq = 0.0;
    for &e in &patch.elements {
        let map = AffineMap::for_element(mesh, e);
        let scalings = basis.element_scalings(mesh, e);
        let interpolated =
            DVector::from_vec(project_rtn_element(&weighted_xi, basis, mesh, e, quad_degree));
        let gram = element_flux_gram(&tab, &map, &scalings);
        let grad_moments = element_flux_moments(&weighted_grad, &tab, mesh, e, &scalings);
        let mut mom = &gram * &interpolated;
        for (j, gm) in grad_moments.iter().enumerate() {
            mom[j] += gm;
        }
        moments.push(mom);
        for (q, &xhat) in tab.rule.points.iter().enumerate() {
            let x = map.to_physical(xhat);
            let mut v = weighted_grad.eval(mesh, e, x);
            for (j, vhat) in tab.values[q].iter().enumerate() {
                v += (map.b * *vhat) * (scalings[j] * interpolated[j] / map.det);
            }
            norm_sq += tab.rule.weights[q] * map.det * v.norm_squared();
        }
    }
    PatchTarget { moments, norm_sq }
}

/// Target given by explicit per-element coefficients of a flux field on the
/// patch; moments come from the exact Gram matrix.
pub fn coefficient_target(
    mesh: &Mesh,
    patch: &Patch,
    basis: &RTNBasis,
    coefficients: &[DVector<f64>],
) -> PatchTarget {
    assert_eq!(coefficients.len(), patch.elements.len());
    let tab = tabulate_flux(basis, 2 * basis.degree + 2);
    let mut moments = Vec::with_capacity(patch.elements.len());
    let mut norm_sq = 0.0;
    for (el, &e) in patch.elements.iter().enumerate() {
        let map = AffineMap::for_element(mesh, e);
        let scalings = basis.element_scalings(mesh, e);
        let gram = element_flux_gram(&tab, &map, &scalings);
        let mom = &gram * &coefficients[el];
        norm_sq += coefficients[el].dot(&mom);
        moments.push(mom);
    }
    PatchTarget { moments, norm_sq }
}

/// One vertex-patch minimization, fully specified: minimize `‖v + τ‖_{ω_a}`
/// over patch flux fields `v` with `∇·v = g` elementwise and zero normal
/// trace on the constrained faces.
pub struct PatchProblem<'a> {
    pub mesh: &'a Mesh,
    pub patch: &'a Patch,
    pub basis: &'a RTNBasis,
    /// Patch-boundary faces whose normal trace is constrained to zero.
    pub constrained_faces: Vec<usize>,
    /// Whether the multiplier space is restricted to zero mean over the
    /// patch; true exactly when the whole patch boundary is constrained.
    pub zero_mean: bool,
    /// Divergence data per patch element (orthonormal-basis coefficients).
    pub divergence: Vec<DVector<f64>>,
    pub target: PatchTarget,
}

impl<'a> PatchProblem<'a> {
    /// The equilibration space. Patches centered at a non-Dirichlet vertex
    /// constrain the whole patch boundary (the hat of the center vanishes
    /// there, Dirichlet-marked faces included), so their multiplier space
    /// loses its constant; patches centered on the Dirichlet boundary leave
    /// exactly the Dirichlet faces free.
    pub fn standard(
        mesh: &'a Mesh,
        patch: &'a Patch,
        basis: &'a RTNBasis,
        partition: &BoundaryPartition,
        divergence: Vec<DVector<f64>>,
        target: PatchTarget,
    ) -> Self {
        let constrained = match patch.class {
            VertexClass::Interior => patch.boundary_faces.clone(),
            VertexClass::Dirichlet => patch
                .boundary_faces
                .iter()
                .copied()
                .filter(|&f| !partition.is_dirichlet(f))
                .collect(),
        };
        Self::with_constraints(mesh, patch, basis, constrained, divergence, target)
    }

    /// The lifting space: zero normal trace only on the patch-boundary faces
    /// not containing the center vertex, leaving the faces adjacent to the
    /// center free. Used by the weighted liftings.
    pub fn gamma_constrained(
        mesh: &'a Mesh,
        patch: &'a Patch,
        basis: &'a RTNBasis,
        divergence: Vec<DVector<f64>>,
        target: PatchTarget,
    ) -> Self {
        Self::with_constraints(mesh, patch, basis, patch.gamma_faces.clone(), divergence, target)
    }

    fn with_constraints(
        mesh: &'a Mesh,
        patch: &'a Patch,
        basis: &'a RTNBasis,
        constrained_faces: Vec<usize>,
        divergence: Vec<DVector<f64>>,
        target: PatchTarget,
    ) -> Self {
        assert_eq!(divergence.len(), patch.elements.len());
        assert_eq!(target.moments.len(), patch.elements.len());
        let zero_mean = constrained_faces.len() == patch.boundary_faces.len();
        PatchProblem { mesh, patch, basis, constrained_faces, zero_mean, divergence, target }
    }
}

/// The solution of a patch problem: per-element flux coefficients (full
/// basis dimension, constrained entries exactly zero), the multiplier, and
/// the attained objective `‖σ + τ‖_{ω_a}`.
pub struct PatchFlux {
    /// Center vertex of the patch this flux lives on.
    pub center: usize,
    /// The patch elements, parallel to `coefficients`.
    pub elements: Vec<usize>,
    pub coefficients: Vec<DVector<f64>>,
    pub multiplier: Vec<DVector<f64>>,
    pub objective: f64,
}

/// A patch problem reduced to linear algebra: the patch-local unknown
/// numbering and the assembled stationarity system. Exposed so independent
/// solvers can cross-check [`patch_solve`] on the exact same matrices.
pub struct PatchSystem {
    /// Per patch element, the patch-local unknown index of each flux basis
    /// function — `None` for coefficients pinned to zero on constrained
    /// faces. Interior faces share one index block between both incident
    /// elements, which is what makes the summed flux conforming.
    pub maps: Vec<Vec<Option<usize>>>,
    /// The constrained quadratic minimization in those unknowns.
    pub system: SaddleSystem,
}

/// Assembles the stationarity system of a patch problem without solving it.
///
/// Unknowns are flux coefficients with shared interior-face blocks (normal
/// continuity inside the patch) and constrained-face blocks removed (exact
/// boundary conditions); multipliers are one divergence constraint per
/// element basis function, with the patch mean pinned on fully constrained
/// patches.
pub fn patch_system(problem: &PatchProblem) -> PatchSystem {
    let mesh = problem.mesh;
    let patch = problem.patch;
    let basis = problem.basis;
    let dim = basis.dim;
    let fd = basis.degree + 1;
    let sdim = scalar_dim(basis.degree);
    let els = &patch.elements;

    // Patch-local unknown numbering: one (p+1)-block per free face, shared
    // by both incident elements, then per-element interior blocks.
    let mut face_base: HashMap<usize, usize> = HashMap::new();
    let mut maps: Vec<Vec<Option<usize>>> = Vec::with_capacity(els.len());
    let mut unknowns = 0;
    for &e in els {
        let mut local = vec![None; dim];
        for i in 0..3 {
            let f = mesh.element_faces[e][i];
            if problem.constrained_faces.contains(&f) {
                continue;
            }
            let base = *face_base.entry(f).or_insert_with(|| {
                let b = unknowns;
                unknowns += fd;
                b
            });
            for k in 0..fd {
                local[i * fd + k] = Some(base + k);
            }
        }
        for j in 3 * fd..dim {
            local[j] = Some(unknowns);
            unknowns += 1;
        }
        maps.push(local);
    }

    let rows = els.len() * sdim;
    let mut mass = nalgebra::DMatrix::zeros(unknowns, unknowns);
    let mut constraint = nalgebra::DMatrix::zeros(rows, unknowns);
    let mut load = DVector::zeros(unknowns);
    let mut constraint_rhs = DVector::zeros(rows);
    let tab = tabulate_flux(basis, 2 * basis.degree + 2);
    for (el, &e) in els.iter().enumerate() {
        let map = AffineMap::for_element(mesh, e);
        let scalings = basis.element_scalings(mesh, e);
        let gram = element_flux_gram(&tab, &map, &scalings);
        let sqrt_det = map.det.sqrt();
        for i in 0..dim {
            let Some(pi) = maps[el][i] else { continue };
            load[pi] -= problem.target.moments[el][i];
            for j in 0..dim {
                if let Some(pj) = maps[el][j] {
                    mass[(pi, pj)] += gram[(i, j)];
                }
            }
            for m in 0..sdim {
                constraint[(el * sdim + m, pi)] +=
                    scalings[i] * basis.div_coeffs[(i, m)] / sqrt_det;
            }
        }
        for m in 0..sdim {
            constraint_rhs[el * sdim + m] = problem.divergence[el][m];
        }
    }

    let mut system = SaddleSystem::new(mass, constraint, load, constraint_rhs);
    if problem.zero_mean {
        let mut weights = DVector::zeros(rows);
        for (el, &e) in els.iter().enumerate() {
            weights[el * sdim] = mesh.areas[e].sqrt();
        }
        system = system.with_multiplier_mean(weights);
    }
    PatchSystem { maps, system }
}

/// Solves one patch problem via its stationarity system, after checking on
/// fully constrained patches that the divergence data is compatible with the
/// pinned multiplier mean.
pub fn patch_solve(problem: &PatchProblem) -> Result<PatchFlux, EquilibrationError> {
    let patch = problem.patch;
    let basis = problem.basis;
    let dim = basis.dim;
    let sdim = scalar_dim(basis.degree);
    let els = &patch.elements;

    if problem.zero_mean {
        let mut integral: f64 = 0.0;
        let mut norm_sq: f64 = 0.0;
        for (el, &e) in els.iter().enumerate() {
            integral += problem.divergence[el][0] * problem.mesh.areas[e].sqrt();
            norm_sq += problem.divergence[el].norm_squared();
        }
        let tolerance = COMPATIBILITY_TOL * (1.0 + norm_sq.sqrt());
        if integral.abs() > tolerance {
            return Err(EquilibrationError::IncompatiblePatchData {
                vertex: patch.center,
                integral: integral.abs(),
                tolerance,
            });
        }
    }

    let PatchSystem { maps, system } = patch_system(problem);
    let (x, y) = solve_saddle(&system)?;

    let mut coefficients = Vec::with_capacity(els.len());
    for local in &maps {
        let mut c = DVector::zeros(dim);
        for (j, slot) in local.iter().enumerate() {
            if let Some(pj) = *slot {
                c[j] = x[pj];
            }
        }
        coefficients.push(c);
    }
    let multiplier = (0..els.len())
        .map(|el| DVector::from_fn(sdim, |m, _| y[el * sdim + m]))
        .collect();
    let objective = patch_objective(problem, &coefficients);
    Ok(PatchFlux {
        center: patch.center,
        elements: els.clone(),
        coefficients,
        multiplier,
        objective,
    })
}

/// Objective `‖v + τ‖_{ω_a}` of a patch problem at an arbitrary candidate
/// given by per-element coefficients, e.g. for optimality probes.
pub fn patch_objective(problem: &PatchProblem, coefficients: &[DVector<f64>]) -> f64 {
    assert_eq!(coefficients.len(), problem.patch.elements.len());
    let basis = problem.basis;
    let tab = tabulate_flux(basis, 2 * basis.degree + 2);
    let mut sq = problem.target.norm_sq;
    for (el, &e) in problem.patch.elements.iter().enumerate() {
        let map = AffineMap::for_element(problem.mesh, e);
        let scalings = basis.element_scalings(problem.mesh, e);
        let gram = element_flux_gram(&tab, &map, &scalings);
        let c = &coefficients[el];
        sq += (&gram * c).dot(c) + 2.0 * c.dot(&problem.target.moments[el]);
    }
    sq.max(0.0).sqrt()
}

/// Sums patch fluxes — extended by zero outside their patches — into one
/// global flux field. Requires exactly one patch flux per mesh vertex, in
/// vertex order. Conformity of the result is structural: shared faces carry
/// a single coefficient block within each patch, and every other patch
/// contributes an exact zero.
pub fn assemble_flux(
    fluxes: &[PatchFlux],
    mesh: &Mesh,
    degree: usize,
) -> Result<RTNField, EquilibrationError> {
    let dim = rtn_dim(degree);
    let mut out = RTNField::zeros(degree, mesh.num_elements());
    for a in 0..mesh.num_vertices() {
        let flux = fluxes.get(a).ok_or(EquilibrationError::MissingPatch { vertex: a })?;
        if flux.center != a {
            return Err(EquilibrationError::MissingPatch { vertex: a });
        }
        for (el, &e) in flux.elements.iter().enumerate() {
            assert_eq!(flux.coefficients[el].len(), dim, "patch flux degree mismatch");
            let c = out.coeffs_of_mut(e);
            for j in 0..dim {
                c[j] += flux.coefficients[el][j];
            }
        }
    }
    Ok(out)
}

/// Verification report for an assembled flux: the three structural
/// identities, each with the scale it should be compared against.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibrationReport {
    /// Largest elementwise L² norm of `∇·σ − Π_p f`.
    pub max_divergence_error: f64,
    /// Global L² norm of `Π_p f`.
    pub divergence_scale: f64,
    /// Largest interior-face bound for the normal-trace jump.
    pub max_interior_jump: f64,
    /// Largest bound for `|σ·n|` over Neumann boundary faces.
    pub max_neumann_trace: f64,
    /// Global L² norm of the flux itself.
    pub trace_scale: f64,
}

impl EquilibrationReport {
    /// Whether all three checks hold at relative tolerance `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_divergence_error <= tol * (1.0 + self.divergence_scale)
            && self.max_interior_jump <= tol * (1.0 + self.trace_scale)
            && self.max_neumann_trace <= tol * (1.0 + self.trace_scale)
    }
}

/// Recomputes the equilibration identities for an assembled flux: exact
/// divergence, normal-trace continuity, and vanishing Neumann trace.
pub fn verify_equilibration(
    field: &RTNField,
    basis: &RTNBasis,
    mesh: &Mesh,
    data: &ProblemData,
) -> EquilibrationReport {
    let degree = basis.degree;
    let projected = project_scalar(
        &data.f,
        degree,
        mesh,
        data_rule_degree(degree, data.data_degree),
    );
    let mut divergence = field.divergence(basis, mesh);
    divergence.add_scaled(&projected, -1.0);
    let mut max_divergence_error = 0.0f64;
    for e in 0..mesh.num_elements() {
        max_divergence_error = max_divergence_error.max(divergence.element_l2_norm(e));
    }

    let mut max_interior_jump = 0.0f64;
    let mut max_neumann_trace = 0.0f64;
    for f in 0..mesh.num_faces() {
        if mesh.faces[f].is_boundary() {
            if data.partition.is_neumann(f) {
                let e = mesh.faces[f].elements.0;
                let i = mesh.local_face_index(e, f).expect("incident face");
                max_neumann_trace =
                    max_neumann_trace.max(normal_trace_sup_bound(field.face_coeffs(e, i)));
            }
        } else {
            max_interior_jump =
                max_interior_jump.max(normal_trace_sup_bound(&field.normal_jump(mesh, f)));
        }
    }

    EquilibrationReport {
        max_divergence_error,
        divergence_scale: projected.l2_norm(),
        max_interior_jump,
        max_neumann_trace,
        trace_scale: field.l2_norm(basis, mesh),
    }
}

/// Projection of the scalar source at the rule shared with [`patch_rhs`],
/// i.e. exactly the divergence the equilibrated flux will have.
pub fn projected_source(data: &ProblemData, mesh: &Mesh, degree: usize) -> PiecewisePoly {
    project_scalar(&data.f, degree, mesh, data_rule_degree(degree, data.data_degree))
}

/// The full pipeline: one standard patch problem per vertex with the
/// hat-weighted target, solved and summed into a single conforming flux.
pub fn equilibrate(
    mesh: &Mesh,
    data: &ProblemData,
    solution: &PrimalSolution,
    basis: &RTNBasis,
) -> Result<(RTNField, Vec<PatchFlux>), EquilibrationError> {
    let classes = classify_vertices(mesh, data.partition);
    let patches = all_patches(mesh, data.partition, &classes);
    let mut fluxes = Vec::with_capacity(patches.len());
    for patch in &patches {
        let divergence = patch_rhs(mesh, patch, data, solution, basis.degree)?;
        let target = hat_target(mesh, patch, basis, data.xi, solution, data.data_degree);
        let problem =
            PatchProblem::standard(mesh, patch, basis, data.partition, divergence, target);
        fluxes.push(patch_solve(&problem)?);
    }
    let field = assemble_flux(&fluxes, mesh, basis.degree)?;
    Ok((field, fluxes))
}

/// A random feasible direction of a patch problem: a divergence-free flux
/// with zero normal trace on the constrained faces, built as the rotated
/// gradient of a continuous piecewise polynomial of one degree higher that
/// vanishes on those faces. Its rotated gradient is exactly representable in
/// the flux space, so the membership is by interpolation, not approximation.
pub fn feasible_perturbation(
    mesh: &Mesh,
    patch: &Patch,
    basis: &RTNBasis,
    constrained_faces: &[usize],
    rng: &mut impl rand::Rng,
) -> Vec<DVector<f64>> {
    let bubble_degree = basis.degree + 1;
    let dofs = DofMap::for_mesh(mesh, bubble_degree);
    let ed = dofs.edge_dofs();

    let mut patch_dofs: BTreeSet<usize> = BTreeSet::new();
    let mut blocked: BTreeSet<usize> = BTreeSet::new();
    for &e in &patch.elements {
        let element_dofs = dofs.element_dofs(mesh, e);
        patch_dofs.extend(element_dofs.iter().copied());
        for i in 0..3 {
            let f = mesh.element_faces[e][i];
            if constrained_faces.contains(&f) {
                blocked.insert(mesh.faces[f].vertices[0]);
                blocked.insert(mesh.faces[f].vertices[1]);
                for m in 0..ed {
                    blocked.insert(element_dofs[3 + i * ed + m]);
                }
            }
        }
    }
    let mut coefficients = DVector::zeros(dofs.total());
    for &d in patch_dofs.difference(&blocked) {
        coefficients[d] = rng.random::<f64>() - 0.5;
    }
    let bubble = PrimalSolution::from_coefficients(mesh, bubble_degree, coefficients);
    let rotated = MeshFn(|m: &Mesh, e: usize, x: Point2<f64>| {
        let g = bubble.eval_gradient(m, e, x);
        Vector2::new(g.y, -g.x)
    });

    let fd = basis.degree + 1;
    patch
        .elements
        .iter()
        .map(|&e| {
            let mut c = DVector::from_vec(project_rtn_element(
                &rotated,
                basis,
                mesh,
                e,
                2 * bubble_degree,
            ));
            for i in 0..3 {
                if constrained_faces.contains(&mesh.element_faces[e][i]) {
                    for k in 0..fd {
                        c[i * fd + k] = 0.0;
                    }
                }
            }
            c
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{
        all_dirichlet, all_neumann, perturbed_square, structured_square, vertex_patch,
        BoundaryMarker,
    };
    use crate::polyspace::{FluxField, PointFn};
    use crate::primal::solve_primal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bottom_dirichlet(a: Point2<f64>, b: Point2<f64>) -> BoundaryMarker {
        if a.y < 1e-9 && b.y < 1e-9 {
            BoundaryMarker::Dirichlet
        } else {
            BoundaryMarker::Neumann
        }
    }

    fn centroid(mesh: &Mesh, e: usize) -> Point2<f64> {
        let [p0, p1, p2] = mesh.element_coords(e);
        Point2::from((p0.coords + p1.coords + p2.coords) / 3.0)
    }

    #[test]
    fn zero_data_gives_zero_patch_fluxes() {
        let (mesh, partition) = structured_square(2, all_dirichlet);
        let f = PointFn(|_: Point2<f64>| 0.0);
        let xi = PointFn(|_: Point2<f64>| Vector2::zeros());
        let data = ProblemData::new(&f, &xi, &partition).with_data_degree(0);
        let solution = solve_primal(&data, &mesh, 1).unwrap();
        let basis = RTNBasis::new(1).unwrap();
        let (field, fluxes) = equilibrate(&mesh, &data, &solution, &basis).unwrap();
        assert!(field.l2_norm(&basis, &mesh) < 1e-12);
        for flux in &fluxes {
            assert!(flux.objective < 1e-12);
            for c in &flux.coefficients {
                assert!(c.norm() < 1e-12);
            }
            for r in &flux.multiplier {
                assert!(r.norm() < 1e-10);
            }
        }
        let report = verify_equilibration(&field, &basis, &mesh, &data);
        assert!(report.passes(1e-12), "{report:?}");
    }

    #[test]
    fn constant_flux_cancellation_yields_zero_rhs_and_flux() {
        // With ξ constant and the primal solve reproducing the matching
        // linear solution, the weighted residual ψ_a(ξ + ∇u_h) and the patch
        // data both cancel, so every patch minimizer is (numerically) zero.
        let (mesh, partition) = perturbed_square(3, 29, all_neumann);
        let f = PointFn(|_: Point2<f64>| 0.0);
        let c = Vector2::new(0.4, -0.8);
        let xi = PointFn(move |_: Point2<f64>| c);
        let data = ProblemData::new(&f, &xi, &partition).with_data_degree(0);
        let solution = solve_primal(&data, &mesh, 1).unwrap();
        let basis = RTNBasis::new(2).unwrap();

        let classes = classify_vertices(&mesh, &partition);
        for a in 0..mesh.num_vertices() {
            let patch = vertex_patch(&mesh, &partition, &classes, a);
            let g = patch_rhs(&mesh, &patch, &data, &solution, 2).unwrap();
            for ge in &g {
                assert!(ge.norm() < 1e-10, "vertex {a}: |g| = {}", ge.norm());
            }
        }

        let (field, _) = equilibrate(&mesh, &data, &solution, &basis).unwrap();
        assert!(field.l2_norm(&basis, &mesh) < 1e-9);
        // Every boundary face is Neumann here, and its coefficients are not
        // merely small but exactly the zeros the constraints wrote.
        for f in 0..mesh.num_faces() {
            if mesh.faces[f].is_boundary() {
                let e = mesh.faces[f].elements.0;
                let i = mesh.local_face_index(e, f).unwrap();
                for &cf in field.face_coeffs(e, i) {
                    assert_eq!(cf, 0.0);
                }
            }
        }
    }

    #[test]
    fn unit_source_rhs_matches_a_direct_quadrature_oracle() {
        let (mesh, partition) = structured_square(4, all_dirichlet);
        let f = PointFn(|_: Point2<f64>| 1.0);
        let xi = PointFn(|_: Point2<f64>| Vector2::zeros());
        let data = ProblemData::new(&f, &xi, &partition).with_data_degree(0);
        let solution = solve_primal(&data, &mesh, 1).unwrap();
        let classes = classify_vertices(&mesh, &partition);
        let center = Point2::new(0.5, 0.5);
        let a = (0..mesh.num_vertices())
            .filter(|&v| classes[v] == VertexClass::Interior)
            .min_by(|&u, &v| {
                let du = (mesh.vertices[u] - center).norm();
                let dv = (mesh.vertices[v] - center).norm();
                du.partial_cmp(&dv).unwrap()
            })
            .unwrap();
        let patch = vertex_patch(&mesh, &partition, &classes, a);
        let g = patch_rhs(&mesh, &patch, &data, &solution, 1).unwrap();

        // Compatibility: the data mean over the patch vanishes.
        let integral: f64 = patch
            .elements
            .iter()
            .enumerate()
            .map(|(el, &e)| g[el][0] * mesh.areas[e].sqrt())
            .sum();
        assert!(integral.abs() < 1e-12, "(g,1) = {integral}");

        // (g, ψ_a) against a direct quadrature of (ψ_a·1 − ∇ψ_a·∇u_h)·ψ_a,
        // which must agree since ψ_a has degree within the projection.
        let rule = triangle_rule(8);
        let sb = ScalarBasis::new(1);
        let mut vals = vec![0.0; 3];
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for (el, &e) in patch.elements.iter().enumerate() {
            let map = AffineMap::for_element(&mesh, e);
            for (q, &xhat) in rule.points.iter().enumerate() {
                let x = map.to_physical(xhat);
                let (psi, grad_psi) = hat_eval(&mesh, &patch, e, x).unwrap();
                sb.eval_into(xhat, &mut vals);
                let gval: f64 = (0..3).map(|m| g[el][m] * vals[m]).sum::<f64>()
                    / map.det.sqrt();
                lhs += rule.weights[q] * map.det * gval * psi;
                let gu = solution.eval_gradient(&mesh, e, x);
                rhs += rule.weights[q] * map.det * (psi - grad_psi.dot(&gu)) * psi;
            }
        }
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn unit_source_assembly_equilibrates_exactly() {
        let (mesh, partition) = structured_square(4, all_dirichlet);
        let f = PointFn(|_: Point2<f64>| 1.0);
        let xi = PointFn(|_: Point2<f64>| Vector2::zeros());
        let data = ProblemData::new(&f, &xi, &partition).with_data_degree(0);
        let solution = solve_primal(&data, &mesh, 1).unwrap();
        let basis = RTNBasis::new(1).unwrap();
        let (field, fluxes) = equilibrate(&mesh, &data, &solution, &basis).unwrap();
        assert_eq!(fluxes.len(), mesh.num_vertices());

        let report = verify_equilibration(&field, &basis, &mesh, &data);
        assert!(report.passes(1e-10), "{report:?}");
        // Interior jumps are bitwise zero: both sides of a face accumulate
        // the same patch contributions in the same order.
        assert_eq!(report.max_interior_jump, 0.0);

        // The divergence is literally the constant source.
        let div = field.divergence(&basis, &mesh);
        for e in 0..mesh.num_elements() {
            let value = div.eval(&mesh, e, centroid(&mesh, e));
            assert!((value - 1.0).abs() < 1e-10, "element {e}: ∇·σ = {value}");
        }
    }

    #[test]
    fn attainable_zero_objective_recovers_the_competitor() {
        // With target τ = −w for a feasible w, the minimizer is w itself and
        // the objective is zero; exercises the full optimality path.
        let (mesh, partition) = structured_square(4, all_dirichlet);
        let f = PointFn(|_: Point2<f64>| 1.0);
        let xi = PointFn(|_: Point2<f64>| Vector2::zeros());
        let data = ProblemData::new(&f, &xi, &partition).with_data_degree(0);
        let solution = solve_primal(&data, &mesh, 1).unwrap();
        let basis = RTNBasis::new(1).unwrap();
        let classes = classify_vertices(&mesh, &partition);
        let a = (0..mesh.num_vertices())
            .find(|&v| classes[v] == VertexClass::Interior)
            .unwrap();
        let patch = vertex_patch(&mesh, &partition, &classes, a);
        let g = patch_rhs(&mesh, &patch, &data, &solution, 1).unwrap();

        let reference = patch_solve(&PatchProblem::standard(
            &mesh,
            &patch,
            &basis,
            &partition,
            g.clone(),
            hat_target(&mesh, &patch, &basis, &xi, &solution, 0),
        ))
        .unwrap();
        let scale: f64 = reference.coefficients.iter().map(|c| c.norm()).sum();
        assert!(scale > 1e-3, "reference flux must be nontrivial");

        let negated: Vec<DVector<f64>> =
            reference.coefficients.iter().map(|c| -c).collect();
        let target = coefficient_target(&mesh, &patch, &basis, &negated);
        let recovered = patch_solve(&PatchProblem::standard(
            &mesh, &patch, &basis, &partition, g, target,
        ))
        .unwrap();
        assert!(recovered.objective < 1e-9, "objective = {}", recovered.objective);
        for (c, c0) in recovered.coefficients.iter().zip(&reference.coefficients) {
            assert!((c - c0).norm() < 1e-9 * (1.0 + c0.norm()));
        }
    }

    #[test]
    fn both_target_variants_give_the_same_minimizer() {
        // With ξ a piecewise flux-space field of one degree lower, weighting
        // by a hat keeps it inside the degree-p flux space, so interpolation
        // changes nothing and the two targets must agree — first in their
        // moments, then in their minimizers.
        let (mesh, partition) = perturbed_square(3, 51, bottom_dirichlet);
        let p = 3;
        let lower = RTNBasis::new(p - 1).unwrap();
        let mut xi_field = RTNField::zeros(p - 1, mesh.num_elements());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for c in &mut xi_field.coeffs {
            *c = rng.random::<f64>() - 0.5;
        }
        let xi = FluxField { basis: &lower, field: &xi_field };
        let mut f_poly = PiecewisePoly::zeros(p - 1, mesh.num_elements());
        for c in &mut f_poly.coeffs {
            *c = rng.random::<f64>() - 0.5;
        }
        let data = ProblemData::new(&f_poly, &xi, &partition).with_data_degree(p - 1);
        let solution = solve_primal(&data, &mesh, 2).unwrap();
        let basis = RTNBasis::new(p).unwrap();

        let classes = classify_vertices(&mesh, &partition);
        for a in 0..mesh.num_vertices() {
            let patch = vertex_patch(&mesh, &partition, &classes, a);
            let g = patch_rhs(&mesh, &patch, &data, &solution, p).unwrap();
            let from_hat = hat_target(&mesh, &patch, &basis, &xi, &solution, p - 1);
            let from_interp = projected_target(&mesh, &patch, &basis, &xi, &solution, p - 1);
            for (mh, mp) in from_hat.moments.iter().zip(&from_interp.moments) {
                assert!(
                    (mh - mp).norm() < 1e-11 * (1.0 + mh.norm()),
                    "vertex {a}: target moments differ by {}",
                    (mh - mp).norm()
                );
            }
            let first = patch_solve(&PatchProblem::standard(
                &mesh,
                &patch,
                &basis,
                &partition,
                g.clone(),
                from_hat,
            ))
            .unwrap();
            let second = patch_solve(&PatchProblem::standard(
                &mesh,
                &patch,
                &basis,
                &partition,
                g,
                from_interp,
            ))
            .unwrap();
            for (c1, c2) in first.coefficients.iter().zip(&second.coefficients) {
                assert!(
                    (c1 - c2).norm() < 1e-10 * (1.0 + c1.norm()),
                    "vertex {a}: minimizers differ by {}",
                    (c1 - c2).norm()
                );
            }
        }
    }

    #[test]
    fn minimizer_beats_random_feasible_perturbations() {
        let (mesh, partition) = perturbed_square(3, 63, all_dirichlet);
        let f = PointFn(|_: Point2<f64>| 1.0);
        let xi = PointFn(|_: Point2<f64>| Vector2::zeros());
        let data = ProblemData::new(&f, &xi, &partition).with_data_degree(0);
        let solution = solve_primal(&data, &mesh, 1).unwrap();
        let p = 2;
        let basis = RTNBasis::new(p).unwrap();
        let classes = classify_vertices(&mesh, &partition);
        let interior = (0..mesh.num_vertices())
            .find(|&v| classes[v] == VertexClass::Interior)
            .unwrap();
        let boundary = (0..mesh.num_vertices())
            .find(|&v| classes[v] == VertexClass::Dirichlet)
            .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for a in [interior, boundary] {
            let patch = vertex_patch(&mesh, &partition, &classes, a);
            let g = patch_rhs(&mesh, &patch, &data, &solution, p).unwrap();
            let target = hat_target(&mesh, &patch, &basis, &xi, &solution, 0);
            let problem =
                PatchProblem::standard(&mesh, &patch, &basis, &partition, g, target);
            let flux = patch_solve(&problem).unwrap();

            for _ in 0..50 {
                let w = feasible_perturbation(
                    &mesh,
                    &patch,
                    &basis,
                    &problem.constrained_faces,
                    &mut rng,
                );
                let wnorm: f64 =
                    w.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt();
                assert!(wnorm > 1e-8, "perturbation must be nontrivial");

                // Feasibility: the perturbation is divergence-free.
                let mut scratch = RTNField::zeros(p, mesh.num_elements());
                for (el, &e) in patch.elements.iter().enumerate() {
                    scratch.coeffs_of_mut(e).copy_from_slice(w[el].as_slice());
                }
                let div = scratch.divergence(&basis, &mesh);
                assert!(div.l2_norm() < 1e-10 * (1.0 + wnorm));

                let shifted: Vec<DVector<f64>> = flux
                    .coefficients
                    .iter()
                    .zip(&w)
                    .map(|(c, d)| c + d)
                    .collect();
                let perturbed = patch_objective(&problem, &shifted);
                assert!(
                    flux.objective <= perturbed + 1e-9,
                    "vertex {a}: {} > {perturbed}",
                    flux.objective
                );
            }
        }
    }

    #[test]
    fn patch_spaces_constrain_the_expected_faces() {
        let (mesh, partition) = structured_square(2, bottom_dirichlet);
        let classes = classify_vertices(&mesh, &partition);
        let basis = RTNBasis::new(1).unwrap();
        for a in 0..mesh.num_vertices() {
            let patch = vertex_patch(&mesh, &partition, &classes, a);
            let n = patch.elements.len();
            let g = vec![DVector::zeros(scalar_dim(1)); n];

            let standard = PatchProblem::standard(
                &mesh,
                &patch,
                &basis,
                &partition,
                g.clone(),
                PatchTarget::zeros(&basis, n),
            );
            match patch.class {
                VertexClass::Interior => {
                    assert_eq!(standard.constrained_faces, patch.boundary_faces);
                }
                VertexClass::Dirichlet => {
                    for &f in &patch.boundary_faces {
                        assert_eq!(
                            standard.constrained_faces.contains(&f),
                            !partition.is_dirichlet(f)
                        );
                    }
                    assert!(!patch.dirichlet_faces.is_empty());
                }
            }
            assert_eq!(standard.zero_mean, patch.class == VertexClass::Interior);

            let gamma = PatchProblem::gamma_constrained(
                &mesh,
                &patch,
                &basis,
                g,
                PatchTarget::zeros(&basis, n),
            );
            assert_eq!(gamma.constrained_faces, patch.gamma_faces);
            assert_eq!(
                gamma.zero_mean,
                patch.gamma_faces.len() == patch.boundary_faces.len()
            );
        }
    }

    #[test]
    fn incompatible_interior_data_is_rejected() {
        let (mesh, partition) = structured_square(4, all_dirichlet);
        let f = PointFn(|_: Point2<f64>| 1.0);
        let xi = PointFn(|_: Point2<f64>| Vector2::zeros());
        let data = ProblemData::new(&f, &xi, &partition).with_data_degree(0);
        let classes = classify_vertices(&mesh, &partition);
        let a = (0..mesh.num_vertices())
            .find(|&v| classes[v] == VertexClass::Interior)
            .unwrap();
        let patch = vertex_patch(&mesh, &partition, &classes, a);

        // A coefficient vector that is not a Galerkin solution violates the
        // compatibility of the patch data.
        let dofs = DofMap::for_mesh(&mesh, 1);
        let bogus =
            PrimalSolution::from_coefficients(&mesh, 1, DVector::zeros(dofs.total()));
        let err = patch_rhs(&mesh, &patch, &data, &bogus, 1);
        assert!(matches!(err, Err(EquilibrationError::IncompatiblePatchData { .. })));

        // Constant-one data on a fully constrained patch is likewise caught
        // before the solver sees it.
        let basis = RTNBasis::new(1).unwrap();
        let n = patch.elements.len();
        let bad: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(scalar_dim(1), |m, _| if m == 0 { 1.0 } else { 0.0 }))
            .collect();
        let problem = PatchProblem::standard(
            &mesh,
            &patch,
            &basis,
            &partition,
            bad,
            PatchTarget::zeros(&basis, n),
        );
        assert!(matches!(
            patch_solve(&problem),
            Err(EquilibrationError::IncompatiblePatchData { .. })
        ));
    }

    #[test]
    fn assembly_requires_one_patch_per_vertex() {
        let (mesh, partition) = structured_square(2, all_dirichlet);
        let f = PointFn(|_: Point2<f64>| 0.0);
        let xi = PointFn(|_: Point2<f64>| Vector2::zeros());
        let data = ProblemData::new(&f, &xi, &partition).with_data_degree(0);
        let solution = solve_primal(&data, &mesh, 1).unwrap();
        let basis = RTNBasis::new(1).unwrap();
        let (_, mut fluxes) = equilibrate(&mesh, &data, &solution, &basis).unwrap();
        fluxes.pop();
        assert!(matches!(
            assemble_flux(&fluxes, &mesh, 1),
            Err(EquilibrationError::MissingPatch { .. })
        ));
        fluxes.clear();
        assert!(matches!(
            assemble_flux(&fluxes, &mesh, 1),
            Err(EquilibrationError::MissingPatch { vertex: 0 })
        ));
    }
}
