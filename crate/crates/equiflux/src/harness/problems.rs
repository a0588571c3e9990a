//! Manufactured problems with pinned data and, where available, exact
//! solutions, plus the boundary-marker and weight-field recipes the
//! experiments draw from. Every randomized ingredient is produced by a
//! `ChaCha8` generator seeded from the experiment seed, in a fixed draw
//! order, so a problem is reproducible bit for bit.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lifting::WeightedLiftConfig;
use crate::mesh::{BoundaryMarker, BoundaryPartition, Mesh};
use crate::polyspace::{
    triangle_rule, AffineMap, PiecewisePoly, PointFn, ScalarField, VectorField,
};
use crate::primal::ProblemData;

/// Tolerance below which a coordinate counts as lying on the bottom edge
/// when marking generated square meshes.
const EDGE_TOL: f64 = 1e-12;

/// The built-in manufactured problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemId {
    /// `u = sin(πx)sin(πy)` on the unit square, Dirichlet everywhere:
    /// smooth nonpolynomial data with a known energy norm `π/√2`.
    SinSin,
    /// `f = 0`, constant `ξ`, Neumann everywhere: the exact gradient is
    /// `-ξ`, so the primal solve and both liftings are exact up to
    /// quadrature on any mesh.
    ConstantFluxNeumann,
    /// Seeded piecewise-polynomial `f` of degree `p-1` and a global
    /// polynomial `ξ` of degree `p-1`: data the degree-`p` flux space
    /// reproduces without oscillation, with no closed-form solution.
    Polynomial,
    /// `u = x(1-x)y(1-y)`, Dirichlet everywhere: polynomial data of degree
    /// two, captured exactly by primal degrees four and up.
    Bubble,
}

impl ProblemId {
    /// The boundary marking a problem's exact solution is manufactured for,
    /// if it has one; configs may not override it.
    pub fn required_markers(self) -> Option<MarkerRule> {
        match self {
            ProblemId::SinSin | ProblemId::Bubble => Some(MarkerRule::AllDirichlet),
            ProblemId::ConstantFluxNeumann => Some(MarkerRule::AllNeumann),
            ProblemId::Polynomial => None,
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ProblemId::SinSin => "sin-sin",
            ProblemId::ConstantFluxNeumann => "constant-flux-neumann",
            ProblemId::Polynomial => "polynomial",
            ProblemId::Bubble => "bubble",
        };
        f.write_str(name)
    }
}

impl FromStr for ProblemId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sin-sin" => Ok(ProblemId::SinSin),
            "constant-flux-neumann" => Ok(ProblemId::ConstantFluxNeumann),
            "polynomial" => Ok(ProblemId::Polynomial),
            "bubble" => Ok(ProblemId::Bubble),
            other => Err(format!(
                "unknown problem {other:?}; expected sin-sin, constant-flux-neumann, \
                 polynomial, or bubble"
            )),
        }
    }
}

/// How the boundary faces of a mesh are split into Dirichlet and Neumann.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkerRule {
    /// Keep the markers read from the mesh files.
    FromMesh,
    AllDirichlet,
    AllNeumann,
    /// Dirichlet on faces whose endpoints both lie on `y = 0`, Neumann
    /// elsewhere: the mixed partition used by default for problems without
    /// an exact solution.
    BottomDirichlet,
}

impl MarkerRule {
    /// Marker for one boundary face given its endpoints. [`FromMesh`] has no
    /// pointwise rule and must be resolved against the mesh files instead.
    ///
    /// [`FromMesh`]: MarkerRule::FromMesh
    pub fn classify(self, a: Point2<f64>, b: Point2<f64>) -> BoundaryMarker {
        match self {
            MarkerRule::FromMesh => {
                panic!("from-mesh markers must be taken from the boundary file")
            }
            MarkerRule::AllDirichlet => BoundaryMarker::Dirichlet,
            MarkerRule::AllNeumann => BoundaryMarker::Neumann,
            MarkerRule::BottomDirichlet => {
                if a.y.abs() <= EDGE_TOL && b.y.abs() <= EDGE_TOL {
                    BoundaryMarker::Dirichlet
                } else {
                    BoundaryMarker::Neumann
                }
            }
        }
    }
}

/// Builds a boundary partition for an existing mesh by classifying each
/// boundary face from its endpoints.
pub fn mark_boundary(
    mesh: &Mesh,
    marker: impl Fn(Point2<f64>, Point2<f64>) -> BoundaryMarker,
) -> BoundaryPartition {
    let markers = (0..mesh.num_faces())
        .map(|f| {
            mesh.faces[f]
                .is_boundary()
                .then(|| marker(mesh.face_point(f, 0.0), mesh.face_point(f, 1.0)))
        })
        .collect();
    BoundaryPartition { markers }
}

/// A fully assembled problem instance: owned data samplers, the boundary
/// partition, and whatever exact references the recipe provides.
pub struct Manufactured {
    pub id: ProblemId,
    pub f: Box<dyn ScalarField + Send + Sync>,
    pub xi: Box<dyn VectorField + Send + Sync>,
    /// Polynomial degree the data samplers resolve at (quadrature hint).
    pub data_degree: usize,
    pub partition: BoundaryPartition,
    /// `∇u` of the exact solution, when the recipe has one.
    pub exact_gradient: Option<Box<dyn VectorField + Send + Sync>>,
    /// `‖∇u‖` of the exact solution, when known in closed form.
    pub energy_norm: Option<f64>,
}

impl Manufactured {
    /// Borrows the problem as the data bundle the solver modules take.
    pub fn data(&self) -> ProblemData<'_> {
        ProblemData::new(self.f.as_ref(), self.xi.as_ref(), &self.partition)
            .with_data_degree(self.data_degree)
    }
}

/// Instantiates a problem recipe on a mesh. `degree` is the flux degree the
/// experiment will run at (it sets the data degree of the seeded polynomial
/// recipe); `partition` must already respect
/// [`ProblemId::required_markers`].
pub fn build_problem(
    id: ProblemId,
    mesh: &Mesh,
    degree: usize,
    seed: u64,
    partition: BoundaryPartition,
) -> Manufactured {
    match id {
        ProblemId::SinSin => Manufactured {
            id,
            f: Box::new(PointFn(|x: Point2<f64>| {
                2.0 * PI * PI * (PI * x.x).sin() * (PI * x.y).sin()
            })),
            xi: Box::new(PointFn(|_| Vector2::zeros())),
            data_degree: 8,
            partition,
            exact_gradient: Some(Box::new(PointFn(|x: Point2<f64>| {
                PI * Vector2::new(
                    (PI * x.x).cos() * (PI * x.y).sin(),
                    (PI * x.x).sin() * (PI * x.y).cos(),
                )
            }))),
            energy_norm: Some(PI / 2.0f64.sqrt()),
        },
        ProblemId::ConstantFluxNeumann => {
            let xi = Vector2::new(0.3, -0.7);
            let area: f64 = mesh.areas.iter().sum();
            Manufactured {
                id,
                f: Box::new(PointFn(|_| 0.0)),
                xi: Box::new(PointFn(move |_| xi)),
                data_degree: 0,
                partition,
                exact_gradient: Some(Box::new(PointFn(move |_| -xi))),
                energy_norm: Some(xi.norm() * area.sqrt()),
            }
        }
        ProblemId::Polynomial => {
            let data_degree = degree - 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Draw order is pinned: first the global flux polynomial
            // (mesh-independent), then the piecewise source element by
            // element, so the same seed gives the same fields on any mesh
            // enumeration-compatible with the original.
            let monomials: Vec<(i32, i32)> = (0..=data_degree as i32)
                .flat_map(|i| (0..=data_degree as i32 - i).map(move |j| (i, j)))
                .collect();
            let coeffs: Vec<(f64, f64)> = monomials
                .iter()
                .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let xi = PointFn(move |x: Point2<f64>| {
                let mut v = Vector2::zeros();
                for (&(i, j), &(cx, cy)) in monomials.iter().zip(&coeffs) {
                    let m = x.x.powi(i) * x.y.powi(j);
                    v.x += cx * m;
                    v.y += cy * m;
                }
                v
            });
            let mut f = PiecewisePoly::zeros(data_degree, mesh.num_elements());
            for c in f.coeffs.iter_mut() {
                *c = rng.random_range(-1.0..1.0);
            }
            Manufactured {
                id,
                f: Box::new(f),
                xi: Box::new(xi),
                data_degree,
                partition,
                exact_gradient: None,
                energy_norm: None,
            }
        }
        ProblemId::Bubble => Manufactured {
            id,
            f: Box::new(PointFn(|x: Point2<f64>| {
                2.0 * x.y * (1.0 - x.y) + 2.0 * x.x * (1.0 - x.x)
            })),
            xi: Box::new(PointFn(|_| Vector2::zeros())),
            data_degree: 2,
            partition,
            exact_gradient: Some(Box::new(PointFn(|x: Point2<f64>| {
                Vector2::new(
                    (1.0 - 2.0 * x.x) * x.y * (1.0 - x.y),
                    x.x * (1.0 - x.x) * (1.0 - 2.0 * x.y),
                )
            }))),
            energy_norm: Some((1.0 / 45.0f64).sqrt()),
        },
    }
}

/// Largest weak-form residual `|(∇u,∇v) - (f,v) + (ξ,∇v)| / ‖∇v‖` of a
/// problem's declared data over a family of smooth test functions, by
/// quadrature on the given mesh. Problems without an exact gradient return
/// zero (their data defines the solution rather than the other way around).
///
/// Test functions are the monomials `x^i y^j`, `i+j ≤ 4`, multiplied by the
/// square bubble `x(1-x)y(1-y)` when the partition has a Dirichlet part
/// (probing the interior equation), and taken plain on pure-Neumann
/// partitions (probing the natural boundary condition as well). The check
/// therefore expects the unit square.
pub fn consistency_residual(problem: &Manufactured, mesh: &Mesh) -> f64 {
    let Some(grad) = problem.exact_gradient.as_deref() else {
        return 0.0;
    };
    let with_bubble = problem.partition.has_dirichlet();
    let rule = triangle_rule(18);
    let mut worst = 0.0f64;
    for i in 0..=4i32 {
        for j in 0..=4 - i {
            // v = x^i y^j (times the bubble on Dirichlet partitions), with
            // its gradient assembled by the product rule.
            let eval = |x: Point2<f64>| -> (f64, Vector2<f64>) {
                let m = x.x.powi(i) * x.y.powi(j);
                let dm = Vector2::new(
                    f64::from(i) * x.x.powi((i - 1).max(0)) * x.y.powi(j),
                    f64::from(j) * x.x.powi(i) * x.y.powi((j - 1).max(0)),
                );
                if with_bubble {
                    let b = x.x * (1.0 - x.x) * x.y * (1.0 - x.y);
                    let db = Vector2::new(
                        (1.0 - 2.0 * x.x) * x.y * (1.0 - x.y),
                        x.x * (1.0 - x.x) * (1.0 - 2.0 * x.y),
                    );
                    (b * m, b * dm + m * db)
                } else {
                    (m, dm)
                }
            };
            let mut residual = 0.0;
            let mut norm_sq = 0.0;
            for e in 0..mesh.num_elements() {
                let map = AffineMap::for_element(mesh, e);
                for (q, &xhat) in rule.points.iter().enumerate() {
                    let x = map.to_physical(xhat);
                    let (v, dv) = eval(x);
                    let w = rule.weights[q] * map.det;
                    residual += w
                        * (grad.eval(mesh, e, x).dot(&dv) - problem.f.eval(mesh, e, x) * v
                            + problem.xi.eval(mesh, e, x).dot(&dv));
                    // Full H¹ norm, so the constant test function (the
                    // pure-Neumann compatibility probe) is not skipped.
                    norm_sq += w * (v * v + dv.norm_squared());
                }
            }
            if norm_sq > 0.0 {
                worst = worst.max(residual.abs() / norm_sq.sqrt());
            }
        }
    }
    worst
}

/// The built-in weight fields for the weighted-lifting experiments, given
/// as values at the mesh vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// `ψ ≡ 1`: the weighted lifting degenerates to the plain one.
    Unit,
    /// The hat function of the interior vertex nearest the area centroid of
    /// the domain (lowest index on ties).
    InteriorHat,
    /// `1` on every interior vertex, `0` on the boundary: a plateau with a
    /// one-layer ramp, vanishing on the whole boundary like the hat but
    /// with interior gradients only along the ramp.
    Plateau,
    /// `ψ(x) = x - min x`: affine, vanishing exactly on the left edge.
    CoordinateX,
}

impl fmt::Display for WeightRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            WeightRule::Unit => "unit",
            WeightRule::InteriorHat => "interior-hat",
            WeightRule::Plateau => "plateau",
            WeightRule::CoordinateX => "coordinate-x",
        };
        f.write_str(name)
    }
}

impl FromStr for WeightRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit" => Ok(WeightRule::Unit),
            "interior-hat" => Ok(WeightRule::InteriorHat),
            "plateau" => Ok(WeightRule::Plateau),
            "coordinate-x" => Ok(WeightRule::CoordinateX),
            other => Err(format!(
                "unknown weight {other:?}; expected unit, interior-hat, plateau, or \
                 coordinate-x"
            )),
        }
    }
}

/// Instantiates a weight rule on a mesh.
pub fn build_weight(mesh: &Mesh, rule: WeightRule) -> WeightedLiftConfig {
    let nv = mesh.num_vertices();
    let weights = match rule {
        WeightRule::Unit => vec![1.0; nv],
        WeightRule::InteriorHat => {
            let mut weights = vec![0.0; nv];
            weights[central_interior_vertex(mesh)] = 1.0;
            weights
        }
        WeightRule::Plateau => {
            let on_boundary = boundary_vertices(mesh);
            (0..nv).map(|a| if on_boundary[a] { 0.0 } else { 1.0 }).collect()
        }
        WeightRule::CoordinateX => {
            let min_x =
                mesh.vertices.iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
            mesh.vertices.iter().map(|v| v.x - min_x).collect()
        }
    };
    WeightedLiftConfig::new(mesh, weights)
}

/// Flags the vertices lying on the domain boundary.
fn boundary_vertices(mesh: &Mesh) -> Vec<bool> {
    let mut on_boundary = vec![false; mesh.num_vertices()];
    for &f in &mesh.boundary_faces {
        for &v in &mesh.faces[f].vertices {
            on_boundary[v] = true;
        }
    }
    on_boundary
}

/// Interior vertex nearest the area centroid of the mesh, lowest index on
/// ties; used to center the hat weight.
fn central_interior_vertex(mesh: &Mesh) -> usize {
    let on_boundary = boundary_vertices(mesh);
    let mut centroid = Vector2::zeros();
    let mut area = 0.0;
    for e in 0..mesh.num_elements() {
        let [a, b, c] = mesh.elements[e];
        let barycenter =
            (mesh.vertices[a].coords + mesh.vertices[b].coords + mesh.vertices[c].coords) / 3.0;
        centroid += mesh.areas[e] * barycenter;
        area += mesh.areas[e];
    }
    centroid /= area;
    let mut best: Option<(usize, f64)> = None;
    for a in 0..mesh.num_vertices() {
        if on_boundary[a] {
            continue;
        }
        let d = (mesh.vertices[a].coords - centroid).norm_squared();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((a, d));
        }
    }
    let (vertex, _) = best.expect("mesh has no interior vertex to center the hat weight on");
    vertex
}
