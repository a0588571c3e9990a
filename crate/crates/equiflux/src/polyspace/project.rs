//! Elementwise projections of pointwise-evaluable sources onto the discrete
//! field types, and quadrature tabulations shared by assembly loops.
//!
//! Scalar and vector projections are orthogonal L² projections, computed as
//! plain inner products against the per-element orthonormal basis. Flux
//! projections are the canonical moment interpolant: face moments of the
//! normal trace (taken in each face's global orientation, from within the
//! element) and pulled-back interior moments. All three reproduce members of
//! their own space exactly whenever the requested quadrature degree covers
//! the integrands, and the flux interpolant commutes with the divergence in
//! the usual sense: the divergence of the interpolant is the L² projection
//! of the divergence.

use nalgebra::{DMatrix, Vector2};

use crate::mesh::Mesh;

use super::fields::{AffineMap, PiecewisePoly, PiecewiseVector, RTNField};
use super::jacobi::shifted_legendre_orthonormal;
use super::quadrature::{edge_rule, triangle_rule, QuadRule};
use super::rtn::RTNBasis;
use super::scalar::ScalarBasis;
use super::sources::{ScalarField, VectorField};

/// L² projection of a scalar source onto piecewise polynomials of `degree`,
/// with per-element quadrature exact to `quad_degree`.
pub fn project_scalar(
    f: &impl ScalarField,
    degree: usize,
    mesh: &Mesh,
    quad_degree: usize,
) -> PiecewisePoly {
    let rule = triangle_rule(quad_degree.max(2 * degree));
    let mut out = PiecewisePoly::zeros(degree, mesh.elements.len());
    let dim = out.dim();
    let mut vals = vec![vec![0.0; dim]; rule.points.len()];
    for (q, &x) in rule.points.iter().enumerate() {
        out.basis().eval_into(x, &mut vals[q]);
    }
    for e in 0..mesh.elements.len() {
        let map = AffineMap::for_element(mesh, e);
        let sqrt_det = map.det.sqrt();
        let c = out.coeffs_of_mut(e);
        for (q, &xhat) in rule.points.iter().enumerate() {
            let fv = f.eval(mesh, e, map.to_physical(xhat));
            let w = rule.weights[q] * sqrt_det * fv;
            for m in 0..dim {
                c[m] += w * vals[q][m];
            }
        }
    }
    out
}

/// Componentwise L² projection of a vector source.
pub fn project_vector(
    f: &impl VectorField,
    degree: usize,
    mesh: &Mesh,
    quad_degree: usize,
) -> PiecewiseVector {
    let rule = triangle_rule(quad_degree.max(2 * degree));
    let mut out = PiecewiseVector::zeros(degree, mesh.elements.len());
    let dim = out.dim();
    let mut vals = vec![vec![0.0; dim]; rule.points.len()];
    for (q, &x) in rule.points.iter().enumerate() {
        out.basis().eval_into(x, &mut vals[q]);
    }
    for e in 0..mesh.elements.len() {
        let map = AffineMap::for_element(mesh, e);
        let sqrt_det = map.det.sqrt();
        let c = out.coeffs_of_mut(e);
        for (q, &xhat) in rule.points.iter().enumerate() {
            let fv = f.eval(mesh, e, map.to_physical(xhat));
            let w = rule.weights[q] * sqrt_det;
            for m in 0..dim {
                c[m] += w * fv.x * vals[q][m];
                c[dim + m] += w * fv.y * vals[q][m];
            }
        }
    }
    out
}

/// Quadrature tables shared by the flux moment interpolant.
struct FluxInterpTabs {
    degree: usize,
    t_nodes: Vec<f64>,
    t_weights: Vec<f64>,
    rule: QuadRule,
    /// `legendre[q][k]`: orthonormal Legendre value at edge node `q`.
    legendre: Vec<Vec<f64>>,
    /// Interior moment basis values at triangle nodes, absent for degree 0.
    interior: Option<(ScalarBasis, Vec<Vec<f64>>)>,
}

fn flux_interp_tabs(degree: usize, quad_degree: usize) -> FluxInterpTabs {
    let (t_nodes, t_weights) = edge_rule(quad_degree.max(2 * degree));
    let rule = triangle_rule(quad_degree.max(2 * degree));
    let legendre = t_nodes
        .iter()
        .map(|&t| shifted_legendre_orthonormal(degree, t))
        .collect();
    let interior = (degree > 0).then(|| {
        let isb = ScalarBasis::new(degree - 1);
        let tab = rule
            .points
            .iter()
            .map(|&x| {
                let mut v = vec![0.0; isb.dim];
                isb.eval_into(x, &mut v);
                v
            })
            .collect();
        (isb, tab)
    });
    FluxInterpTabs { degree, t_nodes, t_weights, rule, legendre, interior }
}

fn flux_interp_element_into(
    f: &impl VectorField,
    tabs: &FluxInterpTabs,
    mesh: &Mesh,
    e: usize,
    c: &mut [f64],
) {
    let fd = tabs.degree + 1;
    for i in 0..3 {
        let face = mesh.element_faces[e][i];
        let normal = mesh.face_normal(face);
        for (q, &t) in tabs.t_nodes.iter().enumerate() {
            let x = mesh.face_point(face, t);
            let vn = f.eval(mesh, e, x).dot(&normal);
            for k in 0..fd {
                c[i * fd + k] += tabs.t_weights[q] * vn * tabs.legendre[q][k];
            }
        }
    }
    if let Some((isb, itab)) = &tabs.interior {
        let map = AffineMap::for_element(mesh, e);
        for (q, &xhat) in tabs.rule.points.iter().enumerate() {
            let v = f.eval(mesh, e, map.to_physical(xhat));
            let pulled = map.piola_inverse(v);
            for m in 0..isb.dim {
                let w = tabs.rule.weights[q] * itab[q][m];
                c[3 * fd + 2 * m] += w * pulled.x;
                c[3 * fd + 2 * m + 1] += w * pulled.y;
            }
        }
    }
}

/// Canonical flux interpolant of a vector source: per element, face moments
/// of the normal trace against the orthonormal Legendre polynomials in the
/// face's global orientation, plus pulled-back interior moments. The source
/// is evaluated from within each element, so discontinuous sources yield the
/// elementwise interpolant (no normal continuity is imposed).
pub fn project_rtn(
    f: &impl VectorField,
    basis: &RTNBasis,
    mesh: &Mesh,
    quad_degree: usize,
) -> RTNField {
    let tabs = flux_interp_tabs(basis.degree, quad_degree);
    let mut out = RTNField::zeros(basis.degree, mesh.elements.len());
    for e in 0..mesh.elements.len() {
        flux_interp_element_into(f, &tabs, mesh, e, out.coeffs_of_mut(e));
    }
    out
}

/// Flux interpolant of a vector source restricted to a single element,
/// returned as the coefficient vector in the element's dual basis. Used by
/// patch-local constructions that only need a handful of elements.
pub fn project_rtn_element(
    f: &impl VectorField,
    basis: &RTNBasis,
    mesh: &Mesh,
    e: usize,
    quad_degree: usize,
) -> Vec<f64> {
    let tabs = flux_interp_tabs(basis.degree, quad_degree);
    let mut c = vec![0.0; basis.dim];
    flux_interp_element_into(f, &tabs, mesh, e, &mut c);
    c
}

/// Reference-element tabulation of a flux basis at triangle quadrature
/// points, for assembly loops.
pub struct FluxTabulation {
    pub rule: QuadRule,
    /// `values[q][j]`: reference value of dual member `j` at point `q`.
    pub values: Vec<Vec<Vector2<f64>>>,
}

pub fn tabulate_flux(basis: &RTNBasis, quad_degree: usize) -> FluxTabulation {
    let rule = triangle_rule(quad_degree);
    let values = rule
        .points
        .iter()
        .map(|&x| {
            let mut v = vec![Vector2::zeros(); basis.dim];
            basis.eval_into(x, &mut v);
            v
        })
        .collect();
    FluxTabulation { rule, values }
}

/// Reference-element tabulation of a scalar basis.
pub struct ScalarTabulation {
    pub rule: QuadRule,
    pub values: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<Vector2<f64>>>,
}

pub fn tabulate_scalar(basis: &ScalarBasis, quad_degree: usize) -> ScalarTabulation {
    let rule = triangle_rule(quad_degree);
    let mut values = Vec::with_capacity(rule.points.len());
    let mut gradients = Vec::with_capacity(rule.points.len());
    for &x in &rule.points {
        let mut v = vec![0.0; basis.dim];
        basis.eval_into(x, &mut v);
        values.push(v);
        let mut g = vec![Vector2::zeros(); basis.dim];
        basis.grad_into(x, &mut g);
        gradients.push(g);
    }
    ScalarTabulation { rule, values, gradients }
}

/// L² Gram matrix of the scaled physical flux basis on one element, from a
/// shared reference tabulation.
pub fn element_flux_gram(
    tab: &FluxTabulation,
    map: &AffineMap,
    scalings: &[f64],
) -> DMatrix<f64> {
    let dim = scalings.len();
    let mut gram = DMatrix::zeros(dim, dim);
    for (q, vals) in tab.values.iter().enumerate() {
        let w = tab.rule.weights[q] / map.det;
        let mapped: Vec<Vector2<f64>> =
            vals.iter().zip(scalings).map(|(v, &s)| map.b * *v * s).collect();
        for i in 0..dim {
            for j in 0..=i {
                let v = w * mapped[i].dot(&mapped[j]);
                gram[(i, j)] += v;
            }
        }
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    gram
}

/// Moments `∫_K b_j · f dx` of a vector source against the scaled physical
/// flux basis on one element.
pub fn element_flux_moments(
    f: &impl VectorField,
    tab: &FluxTabulation,
    mesh: &Mesh,
    e: usize,
    scalings: &[f64],
) -> Vec<f64> {
    let map = AffineMap::for_element(mesh, e);
    let mut out = vec![0.0; scalings.len()];
    for (q, vals) in tab.values.iter().enumerate() {
        let x = map.to_physical(tab.rule.points[q]);
        let fv = f.eval(mesh, e, x);
        let w = tab.rule.weights[q];
        for (j, v) in vals.iter().enumerate() {
            out[j] += w * scalings[j] * (map.b * *v).dot(&fv);
        }
    }
    out
}

/// Upper bound for `sup_t |Σ c_k L_k(t)|` on a face from the moment
/// coefficients, using `max |L_k| = √(2k+1)` on the unit interval.
pub fn normal_trace_sup_bound(face_coeffs: &[f64]) -> f64 {
    face_coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| c.abs() * ((2 * k + 1) as f64).sqrt())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{all_dirichlet, perturbed_square, structured_square};
    use crate::polyspace::sources::{FluxField, PointFn};
    use nalgebra::Point2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_projection_is_idempotent() {
        let (mesh, _) = perturbed_square(3, 7, all_dirichlet);
        let mut f = PiecewisePoly::zeros(3, mesh.elements.len());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for c in &mut f.coeffs {
            *c = rng.random::<f64>() - 0.5;
        }
        let g = project_scalar(&f, 3, &mesh, 6);
        for (a, b) in f.coeffs.iter().zip(&g.coeffs) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn scalar_projection_integrates_linears_exactly() {
        let (mesh, _) = structured_square(2, all_dirichlet);
        let f = project_scalar(&PointFn(|x: Point2<f64>| x.x), 1, &mesh, 8);
        // ∫ x over the unit square.
        assert!((f.integral(&mesh) - 0.5).abs() < 1e-14);
        // The projection of a degree-1 function at degree 1 is the function.
        assert!((f.eval(&mesh, 0, Point2::new(0.21, 0.13)) - 0.21).abs() < 1e-13);
    }

    #[test]
    fn vector_projection_is_idempotent() {
        let (mesh, _) = perturbed_square(2, 9, all_dirichlet);
        let mut f = PiecewiseVector::zeros(2, mesh.elements.len());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for c in &mut f.coeffs {
            *c = rng.random::<f64>() - 0.5;
        }
        let g = project_vector(&f, 2, &mesh, 6);
        for (a, b) in f.coeffs.iter().zip(&g.coeffs) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn flux_interpolation_is_idempotent() {
        let (mesh, _) = perturbed_square(2, 21, all_dirichlet);
        for p in [0, 1, 2, 3] {
            let basis = RTNBasis::new(p).unwrap();
            let mut f = RTNField::zeros(p, mesh.elements.len());
            let mut rng = ChaCha8Rng::seed_from_u64(13 + p as u64);
            for c in &mut f.coeffs {
                *c = rng.random::<f64>() - 0.5;
            }
            let g = project_rtn(&FluxField { basis: &basis, field: &f }, &basis, &mesh, 2 * p + 2);
            for (a, b) in f.coeffs.iter().zip(&g.coeffs) {
                assert!((a - b).abs() < 1e-11, "p={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn normal_trace_matches_direct_evaluation() {
        // The core orientation claim: on every face, evaluating the flux and
        // dotting with the global face normal agrees with the coefficient
        // expansion, from both incident elements.
        let (mesh, _) = perturbed_square(2, 33, all_dirichlet);
        let p = 2;
        let basis = RTNBasis::new(p).unwrap();
        let mut f = RTNField::zeros(p, mesh.elements.len());
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for c in &mut f.coeffs {
            *c = rng.random::<f64>() - 0.5;
        }
        for (fi, face) in mesh.faces.iter().enumerate() {
            let normal = mesh.face_normal(fi);
            let mut incident = vec![face.elements.0];
            if let Some(e1) = face.elements.1 {
                incident.push(e1);
            }
            for e in incident {
                let i = mesh.local_face_index(e, fi).unwrap();
                for &t in &[0.2, 0.55, 0.9] {
                    let x = mesh.face_point(fi, t);
                    let direct = f.eval(&basis, &mesh, e, x).dot(&normal);
                    let from_coeffs = f.normal_trace(e, i, t);
                    assert!(
                        (direct - from_coeffs).abs() < 1e-10,
                        "face {fi} elem {e} t={t}: {direct} vs {from_coeffs}"
                    );
                }
            }
        }
    }

    #[test]
    fn divergence_satisfies_the_divergence_theorem() {
        // ∫_K div v dx must equal the sum of outward face fluxes, which the
        // coefficient conventions express as sign·length·(zeroth moment).
        let (mesh, _) = perturbed_square(3, 5, all_dirichlet);
        for p in [0, 2] {
            let basis = RTNBasis::new(p).unwrap();
            let mut f = RTNField::zeros(p, mesh.elements.len());
            let mut rng = ChaCha8Rng::seed_from_u64(15 + p as u64);
            for c in &mut f.coeffs {
                *c = rng.random::<f64>() - 0.5;
            }
            let div = f.divergence(&basis, &mesh);
            for e in 0..mesh.elements.len() {
                let integral = div.coeffs_of(e)[0] * mesh.areas[e].sqrt();
                let mut flux = 0.0;
                for i in 0..3 {
                    let face = mesh.element_faces[e][i];
                    flux += mesh.face_sign(e, i)
                        * mesh.face_length(face)
                        * f.face_coeffs(e, i)[0];
                }
                assert!(
                    (integral - flux).abs() < 1e-12,
                    "p={p} e={e}: {integral} vs {flux}"
                );
            }
        }
    }

    #[test]
    fn divergence_matches_finite_differences() {
        let (mesh, _) = perturbed_square(2, 17, all_dirichlet);
        let p = 2;
        let basis = RTNBasis::new(p).unwrap();
        let mut f = RTNField::zeros(p, mesh.elements.len());
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for c in &mut f.coeffs {
            *c = rng.random::<f64>() - 0.5;
        }
        let div = f.divergence(&basis, &mesh);
        for e in [0, 3, 5] {
            let [p0, p1, p2] = mesh.element_coords(e);
            let x = Point2::from((p0.coords + p1.coords + p2.coords) / 3.0);
            let fd_div = |h: f64| {
                (f.eval(&basis, &mesh, e, x + Vector2::new(h, 0.0)).x
                    - f.eval(&basis, &mesh, e, x - Vector2::new(h, 0.0)).x
                    + f.eval(&basis, &mesh, e, x + Vector2::new(0.0, h)).y
                    - f.eval(&basis, &mesh, e, x - Vector2::new(0.0, h)).y)
                    / (2.0 * h)
            };
            let fd = (4.0 * fd_div(1e-5) - fd_div(2e-5)) / 3.0;
            let direct = div.eval(&mesh, e, x);
            assert!(
                (fd - direct).abs() < 1e-7 * (1.0 + direct.abs()),
                "e={e}: {fd} vs {direct}"
            );
        }
    }

    #[test]
    fn interpolating_a_smooth_field_converges_in_the_normal_trace() {
        // The flux interpolant of a smooth field reproduces its face moments
        // by construction; check the zeroth moment against an independent
        // high-order quadrature of v·n along the face.
        let (mesh, _) = structured_square(2, all_dirichlet);
        let p = 3;
        let basis = RTNBasis::new(p).unwrap();
        let v = PointFn(|x: Point2<f64>| {
            Vector2::new((2.0 * x.x + x.y).sin(), (x.x - 0.3 * x.y).cos())
        });
        let proj = project_rtn(&v, &basis, &mesh, 20);
        let (t_nodes, t_weights) = edge_rule(24);
        for (fi, _) in mesh.faces.iter().enumerate() {
            let normal = mesh.face_normal(fi);
            let e = mesh.faces[fi].elements.0;
            let i = mesh.local_face_index(e, fi).unwrap();
            let mut moment = 0.0;
            for (q, &t) in t_nodes.iter().enumerate() {
                let x = mesh.face_point(fi, t);
                moment += t_weights[q] * v.0(x).dot(&normal);
            }
            assert!(
                (moment - proj.face_coeffs(e, i)[0]).abs() < 1e-12,
                "face {fi}: {moment} vs {}",
                proj.face_coeffs(e, i)[0]
            );
        }
    }

    #[test]
    fn gram_and_moment_helpers_agree_with_field_norms() {
        let (mesh, _) = perturbed_square(2, 41, all_dirichlet);
        let p = 1;
        let basis = RTNBasis::new(p).unwrap();
        let tab = tabulate_flux(&basis, 2 * p + 2);
        let mut f = RTNField::zeros(p, mesh.elements.len());
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for c in &mut f.coeffs {
            *c = rng.random::<f64>() - 0.5;
        }
        for e in 0..mesh.elements.len() {
            let map = AffineMap::for_element(&mesh, e);
            let scalings = basis.element_scalings(&mesh, e);
            let gram = element_flux_gram(&tab, &map, &scalings);
            let c = nalgebra::DVector::from_column_slice(f.coeffs_of(e));
            let quad_norm = (c.transpose() * &gram * &c)[(0, 0)].sqrt();
            let direct = f.element_l2_norm(&basis, &mesh, e);
            assert!((quad_norm - direct).abs() < 1e-12);

            // Moments of the field against the basis must equal Gram * coeffs.
            let moments = element_flux_moments(
                &FluxField { basis: &basis, field: &f },
                &tab,
                &mesh,
                e,
                &scalings,
            );
            let expected = &gram * &c;
            for (a, b) in moments.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_sup_bound_dominates_samples() {
        let coeffs = [0.4, -0.2, 0.7];
        let bound = normal_trace_sup_bound(&coeffs);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let legendre = shifted_legendre_orthonormal(2, t);
            let v: f64 = coeffs.iter().zip(&legendre).map(|(c, l)| c * l).sum();
            assert!(v.abs() <= bound + 1e-12);
        }
    }
}
