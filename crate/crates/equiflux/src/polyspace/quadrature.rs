//! Quadrature on the reference triangle and its edges.
//!
//! Triangle rules are built by collapsing a tensor Gauss–Legendre grid onto
//! the triangle (Duffy transform) and then symmetrizing over the six affine
//! symmetries of the triangle, so the rule treats the three vertices
//! identically. Weights are positive and sum to the reference area 1/2.

use nalgebra::Point2;

use super::jacobi::gauss_legendre_01;

/// A quadrature rule on the reference triangle `{x, y ≥ 0, x + y ≤ 1}`.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
    /// All polynomials of total degree up to this are integrated exactly.
    pub degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrates `f` over the reference triangle.
    pub fn integrate(&self, mut f: impl FnMut(Point2<f64>) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

/// Builds a symmetric rule exact for all polynomials of total degree
/// `≤ degree`.
pub fn triangle_rule(degree: usize) -> QuadRule {
    let n_u = (degree + 2) / 2;
    let n_v = (degree + 3) / 2;
    let (u, wu) = gauss_legendre_01(n_u.max(1));
    let (v, wv) = gauss_legendre_01(n_v.max(1));

    let mut points = Vec::with_capacity(6 * n_u * n_v);
    let mut weights = Vec::with_capacity(6 * n_u * n_v);
    // The six permutations of the barycentric coordinates (λ0, λ1, λ2);
    // a point (x, y) has λ = (1 - x - y, x, y) and maps back as
    // (x, y) = (λ1, λ2).
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    for (i, &ui) in u.iter().enumerate() {
        for (j, &vj) in v.iter().enumerate() {
            let x = ui * (1.0 - vj);
            let y = vj;
            let w = wu[i] * wv[j] * (1.0 - vj) / 6.0;
            let lam = [1.0 - x - y, x, y];
            for perm in PERMS {
                points.push(Point2::new(lam[perm[1]], lam[perm[2]]));
                weights.push(w);
            }
        }
    }
    QuadRule {
        points,
        weights,
        degree,
    }
}

/// Gauss–Legendre rule on the unit interval, exact to `degree`, used for
/// face moments. Returns `(points, weights)` with weights summing to 1.
pub fn edge_rule(degree: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_legendre_01((degree + 2) / 2)
}
