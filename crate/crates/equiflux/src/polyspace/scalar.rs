//! Orthonormal scalar polynomial basis on the reference triangle.
//!
//! The basis is the Koornwinder–Dubiner family: warped tensor products of
//! Jacobi polynomials on the collapsed square, orthogonal on the triangle by
//! construction and normalized here to unit L² norm. Basis functions are
//! ordered by total degree (all of degree 0, then degree 1, ...), so the
//! degree-`q` basis is a prefix of the degree-`p` basis for `q ≤ p` up to the
//! (stored) normalization constants.
//!
//! Orthonormality is what makes elementwise L² projections trivial: after the
//! `1/sqrt(det B)` Piola-style scaling onto a physical element (see
//! [`crate::polyspace::fields`]), projection coefficients are plain inner
//! products and the L² norm is the Euclidean norm of the coefficients.

use nalgebra::{Point2, Vector2};

use super::jacobi::{jacobi, jacobi_derivative};
use super::quadrature::triangle_rule;

/// Dimension of the polynomials of total degree ≤ `p` in two variables.
pub fn scalar_dim(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// L²-orthonormal basis of `P_p` on the reference triangle.
#[derive(Debug, Clone)]
pub struct ScalarBasis {
    pub degree: usize,
    pub dim: usize,
    /// `(m, n)` index pair of each basis function, `m + n` = total degree.
    pairs: Vec<(usize, usize)>,
    /// Normalization constants making each function unit-norm on the triangle.
    scale: Vec<f64>,
}

impl ScalarBasis {
    pub fn new(degree: usize) -> Self {
        let dim = scalar_dim(degree);
        let mut pairs = Vec::with_capacity(dim);
        for d in 0..=degree {
            for m in 0..=d {
                pairs.push((m, d - m));
            }
        }
        let mut basis = ScalarBasis {
            degree,
            dim,
            pairs,
            scale: vec![1.0; dim],
        };
        // Normalize by quadrature (exact for the degree-2p integrands).
        let rule = triangle_rule(2 * degree);
        let mut norms = vec![0.0; dim];
        let mut values = vec![0.0; dim];
        for (q, &p) in rule.points.iter().enumerate() {
            basis.eval_into(p, &mut values);
            for (i, v) in values.iter().enumerate() {
                norms[i] += rule.weights[q] * v * v;
            }
        }
        for i in 0..dim {
            basis.scale[i] = 1.0 / norms[i].sqrt();
        }
        basis
    }

    /// Normalization constant of basis function `i` (exposed so fields can be
    /// re-expressed exactly in a basis of different degree).
    pub fn scale(&self, i: usize) -> f64 {
        self.scale[i]
    }

    /// Collapsed coordinates `(a, b)` of a point; the `a` coordinate
    /// degenerates at the top vertex and is continued by its limit there.
    fn collapsed(p: Point2<f64>) -> (f64, f64) {
        let om_y = 1.0 - p.y;
        let a = if om_y.abs() > 1e-14 {
            2.0 * p.x / om_y - 1.0
        } else {
            -1.0
        };
        (a, 2.0 * p.y - 1.0)
    }

    /// Values of all basis functions at `p`; `out.len() == self.dim`.
    pub fn eval_into(&self, p: Point2<f64>, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim);
        let (a, b) = Self::collapsed(p);
        let om_y = 1.0 - p.y;
        let leg_a = jacobi(self.degree, 0, 0, a);
        // Powers of (1 - y).
        let mut pow = vec![1.0; self.degree + 1];
        for m in 1..=self.degree {
            pow[m] = pow[m - 1] * om_y;
        }
        for (i, &(m, n)) in self.pairs.iter().enumerate() {
            let jac_b = jacobi(n, 2 * m as u32 + 1, 0, b);
            out[i] = self.scale[i] * leg_a[m] * pow[m] * jac_b[n];
        }
    }

    /// Gradients (with respect to reference coordinates) of all basis
    /// functions at `p`; `out.len() == self.dim`.
    pub fn grad_into(&self, p: Point2<f64>, out: &mut [Vector2<f64>]) {
        assert_eq!(out.len(), self.dim);
        let (a, b) = Self::collapsed(p);
        let om_y = 1.0 - p.y;
        let leg_a = jacobi(self.degree, 0, 0, a);
        let dleg_a = jacobi_derivative(self.degree, 0, 0, a);
        let mut pow = vec![1.0; self.degree + 1];
        for m in 1..=self.degree {
            pow[m] = pow[m - 1] * om_y;
        }
        for (i, &(m, n)) in self.pairs.iter().enumerate() {
            let alpha = 2 * m as u32 + 1;
            let jac_b = jacobi(n, alpha, 0, b);
            let djac_b = jacobi_derivative(n, alpha, 0, b);
            let (dx, dy);
            if m == 0 {
                dx = 0.0;
                dy = 2.0 * djac_b[n];
            } else {
                // pow[m-1] = (1-y)^(m-1) is regular for m ≥ 1.
                dx = 2.0 * dleg_a[m] * pow[m - 1] * jac_b[n];
                dy = dleg_a[m] * (a + 1.0) * pow[m - 1] * jac_b[n]
                    - m as f64 * leg_a[m] * pow[m - 1] * jac_b[n]
                    + 2.0 * leg_a[m] * pow[m] * djac_b[n];
            }
            out[i] = self.scale[i] * Vector2::new(dx, dy);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_interior_point(rng: &mut ChaCha8Rng) -> Point2<f64> {
        loop {
            let x: f64 = rng.random::<f64>() * 0.98 + 0.01;
            let y: f64 = rng.random::<f64>() * 0.98 + 0.01;
            if x + y < 0.98 {
                return Point2::new(x, y);
            }
        }
    }

    #[test]
    fn dimensions() {
        assert_eq!(scalar_dim(0), 1);
        assert_eq!(scalar_dim(1), 3);
        assert_eq!(scalar_dim(2), 6);
        assert_eq!(scalar_dim(8), 45);
        for p in 0..=8 {
            assert_eq!(ScalarBasis::new(p).dim, scalar_dim(p));
        }
    }

    #[test]
    fn orthonormal_up_to_degree_eight() {
        for p in [0, 1, 2, 3, 5, 8] {
            let basis = ScalarBasis::new(p);
            let rule = triangle_rule(2 * p);
            let mut gram = vec![vec![0.0; basis.dim]; basis.dim];
            let mut values = vec![0.0; basis.dim];
            for (q, &pt) in rule.points.iter().enumerate() {
                basis.eval_into(pt, &mut values);
                for i in 0..basis.dim {
                    for j in 0..basis.dim {
                        gram[i][j] += rule.weights[q] * values[i] * values[j];
                    }
                }
            }
            for i in 0..basis.dim {
                for j in 0..basis.dim {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (gram[i][j] - expected).abs() < 1e-12,
                        "p={p}, gram[{i}][{j}] = {}",
                        gram[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn constant_function_value() {
        // The first basis function is the constant sqrt(2) (unit norm on the
        // area-1/2 triangle).
        let basis = ScalarBasis::new(3);
        let mut values = vec![0.0; basis.dim];
        basis.eval_into(Point2::new(0.21, 0.37), &mut values);
        assert!((values[0] - 2.0f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn lower_degree_basis_is_a_prefix() {
        let coarse = ScalarBasis::new(2);
        let fine = ScalarBasis::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cv = vec![0.0; coarse.dim];
        let mut fv = vec![0.0; fine.dim];
        for _ in 0..20 {
            let p = random_interior_point(&mut rng);
            coarse.eval_into(p, &mut cv);
            fine.eval_into(p, &mut fv);
            for i in 0..coarse.dim {
                assert!(
                    (cv[i] - fv[i]).abs() < 1e-12 * (1.0 + fv[i].abs()),
                    "prefix mismatch at {i}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in [1, 2, 4, 6] {
            let basis = ScalarBasis::new(p);
            let mut grads = vec![Vector2::zeros(); basis.dim];
            let mut vp = vec![0.0; basis.dim];
            let mut vm = vec![0.0; basis.dim];
            for _ in 0..10 {
                let x = random_interior_point(&mut rng);
                basis.grad_into(x, &mut grads);
                let h = 1e-6;
                for (dir, e) in [Vector2::new(h, 0.0), Vector2::new(0.0, h)]
                    .into_iter()
                    .enumerate()
                {
                    basis.eval_into(x + e, &mut vp);
                    basis.eval_into(x - e, &mut vm);
                    for i in 0..basis.dim {
                        let fd = (vp[i] - vm[i]) / (2.0 * h);
                        let exact = grads[i][dir];
                        assert!(
                            (fd - exact).abs() < 2e-5 * (1.0 + exact.abs()),
                            "p={p} i={i} dir={dir}: {exact} vs {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn values_stay_finite_at_the_collapsed_vertex() {
        let basis = ScalarBasis::new(6);
        let mut values = vec![0.0; basis.dim];
        let mut grads = vec![Vector2::zeros(); basis.dim];
        basis.eval_into(Point2::new(0.0, 1.0), &mut values);
        basis.grad_into(Point2::new(0.0, 1.0), &mut grads);
        assert!(values.iter().all(|v| v.is_finite()));
        assert!(grads.iter().all(|g| g.x.is_finite() && g.y.is_finite()));
    }
}
