//! H¹-conforming Lagrange finite element solve of the primal problem.
//!
//! The weak problem reads: find `u_h` in the degree-`p′` continuous Lagrange
//! space (zero trace on the Dirichlet boundary; zero mean when the whole
//! boundary is Neumann) such that `(∇u_h, ∇v_h) = (f, v_h) − (ξ, ∇v_h)` for
//! all test functions `v_h`.
//!
//! Shape functions on the reference triangle are nodal for degrees one and
//! two and hierarchic for higher degrees: vertex hats, edge kernels built
//! from homogenized Legendre polynomials in the two endpoint barycentric
//! coordinates, and interior bubbles.  Edge kernels of odd order are odd
//! under endpoint exchange, so conformity across a shared edge is restored by
//! flipping their sign on the element whose counterclockwise traversal runs
//! against the global (low-to-high vertex index) edge orientation — the same
//! convention the flux spaces use.  All shapes are stored as coefficients in
//! the orthonormal modal basis, which provides exact values and gradients.

use crate::linsolve::{solve_spd, LinsolveError, SparseSPD};
use crate::mesh::{BoundaryPartition, Mesh, LOCAL_FACE_VERTICES};
use crate::polyspace::{
    project_vector, scalar_dim, triangle_rule, AffineMap, PiecewiseVector, QuadRule, ScalarBasis,
    ScalarField, VectorField, MAX_DEGREE,
};
use nalgebra::{DMatrix, DVector, Point2, Vector2};
use thiserror::Error;

/// Errors from the primal solve.
#[derive(Debug, Error)]
pub enum PrimalError {
    /// The polynomial degree is outside the supported range.
    #[error("degree must be between 1 and {MAX_DEGREE}, got {degree}")]
    DegreeOutOfRange { degree: usize },
    /// A pure-Neumann problem whose source does not integrate to zero.
    #[error("pure-Neumann data incompatible: (f,1) = {integral:.3e} exceeds {tolerance:.3e}")]
    IncompatibleData { integral: f64, tolerance: f64 },
    /// The stiffness solve failed.
    #[error("stiffness solve failed: {0}")]
    Solver(#[from] LinsolveError),
}

/// The problem data: source `f`, flux part `ξ` of the distributional source
/// `f + ∇·ξ`, and the boundary partition.
pub struct ProblemData<'a> {
    /// Scalar source term.
    pub f: &'a dyn ScalarField,
    /// Vector source term (enters the load as `−(ξ, ∇v)`).
    pub xi: &'a dyn VectorField,
    /// Dirichlet/Neumann marking of the boundary faces.
    pub partition: &'a BoundaryPartition,
    /// Polynomial degree to which the data samplers are resolved by
    /// quadrature; piecewise polynomial data should pass their exact degree.
    pub data_degree: usize,
}

impl<'a> ProblemData<'a> {
    /// Bundles the data with a default sampler resolution degree of 8.
    pub fn new(
        f: &'a dyn ScalarField,
        xi: &'a dyn VectorField,
        partition: &'a BoundaryPartition,
    ) -> Self {
        Self { f, xi, partition, data_degree: 8 }
    }

    /// Overrides the quadrature resolution degree for the data terms.
    pub fn with_data_degree(mut self, data_degree: usize) -> Self {
        self.data_degree = data_degree;
        self
    }
}

/// Global degree-of-freedom layout of the continuous Lagrange space:
/// one per vertex, `p′−1` per edge, `(p′−1)(p′−2)/2` per element.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub degree: usize,
    pub vertices: usize,
    pub faces: usize,
    pub elements: usize,
}

impl DofMap {
    pub fn for_mesh(mesh: &Mesh, degree: usize) -> Self {
        Self {
            degree,
            vertices: mesh.num_vertices(),
            faces: mesh.num_faces(),
            elements: mesh.num_elements(),
        }
    }

    /// Degrees of freedom per edge.
    pub fn edge_dofs(&self) -> usize {
        self.degree - 1
    }

    /// Degrees of freedom interior to each element.
    pub fn interior_dofs(&self) -> usize {
        if self.degree < 3 {
            0
        } else {
            (self.degree - 1) * (self.degree - 2) / 2
        }
    }

    /// Total number of degrees of freedom.
    pub fn total(&self) -> usize {
        self.vertices + self.faces * self.edge_dofs() + self.elements * self.interior_dofs()
    }

    /// Local basis size on one element, `(p′+1)(p′+2)/2`.
    pub fn local_dim(&self) -> usize {
        3 + 3 * self.edge_dofs() + self.interior_dofs()
    }

    fn edge_dof(&self, face: usize, m: usize) -> usize {
        self.vertices + face * self.edge_dofs() + m
    }

    fn interior_dof(&self, element: usize, j: usize) -> usize {
        self.vertices + self.faces * self.edge_dofs() + element * self.interior_dofs() + j
    }

    /// Global indices of the local shape functions on element `e`, in the
    /// local order: three vertices, edge kernels per local face, bubbles.
    pub fn element_dofs(&self, mesh: &Mesh, e: usize) -> Vec<usize> {
        let mut dofs = Vec::with_capacity(self.local_dim());
        for i in 0..3 {
            dofs.push(mesh.elements[e][i]);
        }
        for i in 0..3 {
            let f = mesh.element_faces[e][i];
            for m in 0..self.edge_dofs() {
                dofs.push(self.edge_dof(f, m));
            }
        }
        for j in 0..self.interior_dofs() {
            dofs.push(self.interior_dof(e, j));
        }
        dofs
    }

    /// Sign factors aligning the local shapes with the global basis: odd edge
    /// kernels flip on elements traversing the edge against its global
    /// orientation; everything else is `+1`.
    pub fn element_flips(&self, mesh: &Mesh, e: usize) -> Vec<f64> {
        let mut flips = vec![1.0; self.local_dim()];
        for i in 0..3 {
            if mesh.face_sign(e, i) < 0.0 {
                for m in 0..self.edge_dofs() {
                    if m % 2 == 1 {
                        flips[3 + i * self.edge_dofs() + m] = -1.0;
                    }
                }
            }
        }
        flips
    }
}

/// Plain Legendre values `P_0..P_n` at `t ∈ [−1, 1]`.
fn legendre_values(n: usize, t: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n == 0 {
        return p;
    }
    p.push(t);
    for i in 1..n {
        let next = ((2 * i + 1) as f64 * t * p[i] - i as f64 * p[i - 1]) / (i + 1) as f64;
        p.push(next);
    }
    p
}

/// Canonical shape function values on the reference triangle, before the
/// per-element orientation flips.
fn canonical_shape_values(degree: usize, x: Point2<f64>) -> Vec<f64> {
    let l = [1.0 - x.x - x.y, x.x, x.y];
    let mut out = Vec::new();
    match degree {
        1 => out.extend_from_slice(&l),
        2 => {
            for i in 0..3 {
                out.push(l[i] * (2.0 * l[i] - 1.0));
            }
            for i in 0..3 {
                let [a, b] = LOCAL_FACE_VERTICES[i];
                out.push(4.0 * l[a] * l[b]);
            }
        }
        k => {
            for i in 0..3 {
                out.push(l[i]);
            }
            for i in 0..3 {
                let [a, b] = LOCAL_FACE_VERTICES[i];
                let kernels =
                    crate::polyspace::rtn::homogenized_legendre(k - 2, l[b], l[a]);
                for m in 0..=(k - 2) {
                    out.push(l[a] * l[b] * kernels[m]);
                }
            }
            let bubble = l[0] * l[1] * l[2];
            let radial = crate::polyspace::rtn::homogenized_legendre(k - 3, l[1], l[0]);
            let axial = legendre_values(k - 3, 2.0 * l[2] - 1.0);
            for d in 0..=(k - 3) {
                for m in 0..=d {
                    out.push(bubble * radial[m] * axial[d - m]);
                }
            }
        }
    }
    out
}

/// The local shape functions of one degree, held as exact coefficient
/// expansions in the orthonormal modal basis so that values and gradients
/// come from a single evaluation path.
#[derive(Debug, Clone)]
struct ShapeTable {
    degree: usize,
    scalar: ScalarBasis,
    /// `local_dim × scalar_dim(degree)` expansion coefficients.
    coeffs: DMatrix<f64>,
}

impl ShapeTable {
    fn new(degree: usize) -> Self {
        let scalar = ScalarBasis::new(degree);
        let sdim = scalar_dim(degree);
        let rule = triangle_rule(2 * degree);
        let ldim = (degree + 1) * (degree + 2) / 2;
        let mut coeffs = DMatrix::zeros(ldim, sdim);
        let mut modal = vec![0.0; sdim];
        for (q, &point) in rule.points.iter().enumerate() {
            let w = rule.weights[q];
            let shapes = canonical_shape_values(degree, point);
            debug_assert_eq!(shapes.len(), ldim);
            scalar.eval_into(point, &mut modal);
            for i in 0..ldim {
                for m in 0..sdim {
                    coeffs[(i, m)] += w * shapes[i] * modal[m];
                }
            }
        }
        Self { degree, scalar, coeffs }
    }

    fn local_dim(&self) -> usize {
        self.coeffs.nrows()
    }

    fn values_into(&self, x: Point2<f64>, modal: &mut [f64], out: &mut [f64]) {
        self.scalar.eval_into(x, modal);
        for i in 0..self.local_dim() {
            let mut v = 0.0;
            for (m, &mv) in modal.iter().enumerate() {
                v += self.coeffs[(i, m)] * mv;
            }
            out[i] = v;
        }
    }

    fn gradients_into(
        &self,
        x: Point2<f64>,
        modal: &mut [Vector2<f64>],
        out: &mut [Vector2<f64>],
    ) {
        self.scalar.grad_into(x, modal);
        for i in 0..self.local_dim() {
            let mut g = Vector2::zeros();
            for (m, &mg) in modal.iter().enumerate() {
                g += self.coeffs[(i, m)] * mg;
            }
            out[i] = g;
        }
    }
}

/// Shape values and reference gradients tabulated at the points of a rule.
struct Tabulation {
    rule: QuadRule,
    values: Vec<Vec<f64>>,
    gradients: Vec<Vec<Vector2<f64>>>,
}

fn tabulate(table: &ShapeTable, rule: QuadRule) -> Tabulation {
    let ldim = table.local_dim();
    let sdim = scalar_dim(table.degree);
    let mut modal_v = vec![0.0; sdim];
    let mut modal_g = vec![Vector2::zeros(); sdim];
    let mut values = Vec::with_capacity(rule.points.len());
    let mut gradients = Vec::with_capacity(rule.points.len());
    for &point in &rule.points {
        let mut v = vec![0.0; ldim];
        let mut g = vec![Vector2::zeros(); ldim];
        table.values_into(point, &mut modal_v, &mut v);
        table.gradients_into(point, &mut modal_g, &mut g);
        values.push(v);
        gradients.push(g);
    }
    Tabulation { rule, values, gradients }
}

/// The discrete solution of the primal problem.
#[derive(Debug, Clone)]
pub struct PrimalSolution {
    /// Polynomial degree `p′`.
    pub degree: usize,
    /// Global coefficient vector (constrained entries are zero).
    pub coefficients: DVector<f64>,
    /// Degree-of-freedom layout the coefficients refer to.
    pub dofs: DofMap,
    shapes: ShapeTable,
}

impl PrimalSolution {
    /// Wraps an explicit coefficient vector as a conforming field of the
    /// given degree, e.g. for prescribed test fields. The coefficients must
    /// follow the layout of [`DofMap::for_mesh`].
    pub fn from_coefficients(mesh: &Mesh, degree: usize, coefficients: DVector<f64>) -> Self {
        let dofs = DofMap::for_mesh(mesh, degree);
        assert_eq!(coefficients.len(), dofs.total());
        let shapes = ShapeTable::new(degree);
        PrimalSolution { degree, coefficients, dofs, shapes }
    }

    /// Value of `u_h` at physical point `x` of element `e`.
    pub fn eval(&self, mesh: &Mesh, e: usize, x: Point2<f64>) -> f64 {
        let map = AffineMap::for_element(mesh, e);
        let xr = map.to_reference(x);
        let ldim = self.dofs.local_dim();
        let mut modal = vec![0.0; scalar_dim(self.degree)];
        let mut values = vec![0.0; ldim];
        self.shapes.values_into(xr, &mut modal, &mut values);
        let dofs = self.dofs.element_dofs(mesh, e);
        let flips = self.dofs.element_flips(mesh, e);
        (0..ldim)
            .map(|i| self.coefficients[dofs[i]] * flips[i] * values[i])
            .sum()
    }

    /// Gradient of `u_h` at physical point `x` of element `e`.
    pub fn eval_gradient(&self, mesh: &Mesh, e: usize, x: Point2<f64>) -> Vector2<f64> {
        let map = AffineMap::for_element(mesh, e);
        let xr = map.to_reference(x);
        let ldim = self.dofs.local_dim();
        let mut modal = vec![Vector2::zeros(); scalar_dim(self.degree)];
        let mut grads = vec![Vector2::zeros(); ldim];
        self.shapes.gradients_into(xr, &mut modal, &mut grads);
        let dofs = self.dofs.element_dofs(mesh, e);
        let flips = self.dofs.element_flips(mesh, e);
        let mut g = Vector2::zeros();
        for i in 0..ldim {
            g += self.coefficients[dofs[i]] * flips[i] * grads[i];
        }
        map.gradient(g)
    }

    /// The broken gradient `∇u_h` as an exact degree-`(p′−1)` field in the
    /// orthonormal elementwise basis.
    pub fn gradient(&self, mesh: &Mesh) -> PiecewiseVector {
        struct Grad<'a> {
            solution: &'a PrimalSolution,
        }
        impl VectorField for Grad<'_> {
            fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> Vector2<f64> {
                self.solution.eval_gradient(mesh, element, x)
            }
        }
        project_vector(&Grad { solution: self }, self.degree - 1, mesh, 2 * self.degree)
    }

    /// The H¹ seminorm `‖∇u_h‖` (exact).
    pub fn h1_seminorm(&self, mesh: &Mesh) -> f64 {
        self.gradient(mesh).l2_norm()
    }

    /// The mean `(u_h, 1) / |Ω|`.
    pub fn mean(&self, mesh: &Mesh) -> f64 {
        let rule = triangle_rule(self.degree + 1);
        let mut integral = 0.0;
        let mut volume = 0.0;
        for e in 0..mesh.num_elements() {
            let map = AffineMap::for_element(mesh, e);
            for (q, &point) in rule.points.iter().enumerate() {
                let w = rule.weights[q] * map.det;
                integral += w * self.eval(mesh, e, map.to_physical(point));
                volume += w;
            }
        }
        integral / volume
    }
}

/// Solves the primal problem at degree `p′`, returning the discrete solution.
///
/// Dirichlet constraints are imposed by eliminating the vertex and edge
/// degrees of freedom on the Dirichlet boundary; a pure-Neumann problem is
/// solved through the mean-constrained singular path after the compatibility
/// of the data has been verified.
pub fn solve_primal(
    data: &ProblemData,
    mesh: &Mesh,
    degree: usize,
) -> Result<PrimalSolution, PrimalError> {
    if degree < 1 || degree > MAX_DEGREE {
        return Err(PrimalError::DegreeOutOfRange { degree });
    }
    assert_eq!(
        data.partition.markers.len(),
        mesh.num_faces(),
        "boundary partition does not match the mesh"
    );
    let dofs = DofMap::for_mesh(mesh, degree);
    let shapes = ShapeTable::new(degree);
    let quad_degree = (2 * degree).max(degree + data.data_degree + 2);
    let tab = tabulate(&shapes, triangle_rule(quad_degree));

    // Constrained set: vertex and edge unknowns on the Dirichlet boundary.
    let total = dofs.total();
    let mut constrained = vec![false; total];
    for f in 0..mesh.num_faces() {
        if data.partition.is_dirichlet(f) {
            for &v in &mesh.faces[f].vertices {
                constrained[v] = true;
            }
            for m in 0..dofs.edge_dofs() {
                constrained[dofs.edge_dof(f, m)] = true;
            }
        }
    }
    let pure_neumann = !data.partition.has_dirichlet();

    let mut reduced_index = vec![usize::MAX; total];
    let mut free = 0usize;
    for i in 0..total {
        if !constrained[i] {
            reduced_index[i] = free;
            free += 1;
        }
    }

    let mut system = SparseSPD::new(free);
    let mut rhs = DVector::zeros(free);
    let mut mean_weights = DVector::zeros(free);
    let mut source_integral = 0.0;
    let mut source_norm_sq = 0.0;
    let ldim = dofs.local_dim();
    for e in 0..mesh.num_elements() {
        let map = AffineMap::for_element(mesh, e);
        let element_dofs = dofs.element_dofs(mesh, e);
        let flips = dofs.element_flips(mesh, e);
        let mut local_k = DMatrix::zeros(ldim, ldim);
        let mut local_rhs = vec![0.0; ldim];
        let mut local_weight = vec![0.0; ldim];
        for (q, &point) in tab.rule.points.iter().enumerate() {
            let w = tab.rule.weights[q] * map.det;
            let phys = map.to_physical(point);
            let f_val = data.f.eval(mesh, e, phys);
            let xi_val = data.xi.eval(mesh, e, phys);
            source_integral += w * f_val;
            source_norm_sq += w * f_val * f_val;
            let grads: Vec<Vector2<f64>> =
                tab.gradients[q].iter().map(|&g| map.gradient(g)).collect();
            for i in 0..ldim {
                let vi = flips[i] * tab.values[q][i];
                let gi = flips[i] * grads[i];
                local_rhs[i] += w * (f_val * vi - xi_val.dot(&gi));
                local_weight[i] += w * vi;
                for j in 0..=i {
                    local_k[(i, j)] += w * gi.dot(&(flips[j] * grads[j]));
                }
            }
        }
        for i in 0..ldim {
            let gi = element_dofs[i];
            if constrained[gi] {
                continue;
            }
            let ri = reduced_index[gi];
            rhs[ri] += local_rhs[i];
            mean_weights[ri] += local_weight[i];
            for j in 0..ldim {
                let gj = element_dofs[j];
                if constrained[gj] {
                    continue;
                }
                let k = if j <= i { local_k[(i, j)] } else { local_k[(j, i)] };
                system.add(ri, reduced_index[gj], k);
            }
        }
    }

    if pure_neumann {
        let tolerance = 1e-12 * source_norm_sq.sqrt();
        if source_integral.abs() > tolerance {
            return Err(PrimalError::IncompatibleData {
                integral: source_integral,
                tolerance,
            });
        }
        // Nullspace of the stiffness matrix: the constant function, which is
        // the sum of the vertex hats (plus the edge shapes for the degree-2
        // nodal family, where the six shapes sum to one).
        let mut nullvector = vec![0.0; free];
        for v in 0..dofs.vertices {
            nullvector[reduced_index[v]] = 1.0;
        }
        if degree == 2 {
            for f in 0..dofs.faces {
                nullvector[reduced_index[dofs.edge_dof(f, 0)]] = 1.0;
            }
        }
        system = system.with_mean_constraint(mean_weights.iter().copied().collect(), nullvector);
    }

    let reduced = solve_spd(&system, &rhs)?;
    let mut coefficients = DVector::zeros(total);
    for i in 0..total {
        if !constrained[i] {
            coefficients[i] = reduced[reduced_index[i]];
        }
    }
    Ok(PrimalSolution { degree, coefficients, dofs, shapes })
}

/// Quadrature approximation of the energy error `‖∇u − ∇u_h‖` against a
/// reference gradient sampler, with exactness degree `2p′ + 4`.
pub fn energy_error(
    solution: &PrimalSolution,
    mesh: &Mesh,
    reference: &dyn VectorField,
) -> f64 {
    let rule = triangle_rule(2 * solution.degree + 4);
    let mut total = 0.0;
    for e in 0..mesh.num_elements() {
        let map = AffineMap::for_element(mesh, e);
        for (q, &point) in rule.points.iter().enumerate() {
            let phys = map.to_physical(point);
            let diff = reference.eval(mesh, e, phys) - solution.eval_gradient(mesh, e, phys);
            total += rule.weights[q] * map.det * diff.norm_squared();
        }
    }
    total.sqrt()
}
