//! Raviart–Thomas–Nédélec vector basis `RTN_p = P_p(K; R²) + P_p(K)·x` on the
//! reference triangle, with moment degrees of freedom:
//!
//! * per face `i`, the moments `v ↦ ∫₀¹ (v·n̂ᵢ)(γᵢ(t)) L_k(t) dt` against the
//!   orthonormal shifted Legendre polynomials `L_k`, `k = 0..=p`, where `γᵢ`
//!   parameterizes the face in the counterclockwise direction;
//! * interior moments of each Cartesian component against the orthonormal
//!   scalar basis of degree `p − 1`.
//!
//! The dual (nodal) basis makes the normal trace face-local: member `(i, k)`
//! has trace `L_k(t)` on face `i` and zero trace on the other faces, and the
//! interior members have zero trace everywhere. Consequently, after the
//! Piola map with the per-element scaling of [`RTNBasis::element_scalings`],
//! a coefficient of a face degree of freedom *is* the corresponding moment of
//! the global normal trace in the face's own `lo → hi` orientation, for both
//! incident elements: H(div) conformity, zero-trace boundary conditions, and
//! jump computations all become statements about raw coefficients.
//!
//! The dual basis is built once per degree by inverting the moment matrix of
//! an L²-orthonormal spanning set — the orthonormal scalar basis per
//! Cartesian component, completed by the homogeneous tail `x·H_p`
//! orthonormalized against it — then polished by a Newton inverse iteration.
//! Orthonormalizing the span matters: the raw tail members lie close to the
//! polynomial block, and without it the moment matrix picks up several
//! orders of magnitude of artificial ill-conditioning. The supported degree
//! is capped at `p = 8`; the stored duality residual and condition estimate
//! document how the construction degrades as the cap is approached.

use nalgebra::{DMatrix, Point2, Vector2};
use thiserror::Error;

use crate::mesh::Mesh;

use super::jacobi::shifted_legendre_orthonormal;
use super::quadrature::{edge_rule, triangle_rule};
use super::scalar::ScalarBasis;

/// Highest supported flux degree; conditioning of the moment-matrix
/// construction is documented by [`RTNBasis::condition_estimate`].
pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Error)]
pub enum RtnError {
    #[error("flux degree {0} exceeds the supported maximum {MAX_DEGREE}")]
    DegreeTooHigh(usize),
}

/// Dimension of `RTN_p` on a triangle.
pub fn rtn_dim(p: usize) -> usize {
    (p + 1) * (p + 3)
}

/// Counterclockwise parameterization of reference edge `i` (the edge
/// opposite vertex `i`).
pub fn reference_edge_point(i: usize, t: f64) -> Point2<f64> {
    match i {
        0 => Point2::new(1.0 - t, t),
        1 => Point2::new(0.0, 1.0 - t),
        _ => Point2::new(t, 0.0),
    }
}

pub const REFERENCE_EDGE_NORMALS: [[f64; 2]; 3] = [
    [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    [-1.0, 0.0],
    [0.0, -1.0],
];

pub const REFERENCE_EDGE_LENGTHS: [f64; 3] = [std::f64::consts::SQRT_2, 1.0, 1.0];

/// L²-orthonormal spanning set of `RTN_p`: the orthonormal scalar basis per
/// Cartesian component (members `s = 2q + c`), then the homogeneous tail
/// `x · H_p` orthonormalized against that block and within itself. The tail
/// members are stored as explicit linear combinations
/// `m̂_i = Σ_j tail_mix[i][j] (x · g_j) + Σ_k scalar_mix[i][k] (φ e)_k`,
/// with `g_j` the homogenized Legendre polynomials.
#[derive(Debug)]
struct SpanBasis {
    p: usize,
    scalar: ScalarBasis,
    tail_mix: DMatrix<f64>,
    scalar_mix: DMatrix<f64>,
    /// Max deviation of the span's Gram matrix from the identity.
    orthonormality_residual: f64,
}

impl SpanBasis {
    fn new(p: usize) -> Self {
        let scalar = ScalarBasis::new(p);
        let sdim = scalar.dim;
        let n_scalar = 2 * sdim;
        let n_tail = p + 1;

        // Quadrature exact for products of any two members (degree 2p + 2).
        let rule = triangle_rule(2 * p + 2);
        let nq = rule.points.len();

        // Tabulate the scalar block and the raw tails at the quadrature
        // points.
        let mut sb = vec![vec![Vector2::zeros(); n_scalar]; nq];
        let mut tv = vec![vec![Vector2::zeros(); n_tail]; nq];
        let mut svals = vec![0.0; sdim];
        for (q, &x) in rule.points.iter().enumerate() {
            scalar.eval_into(x, &mut svals);
            for m in 0..sdim {
                sb[q][2 * m] = Vector2::new(svals[m], 0.0);
                sb[q][2 * m + 1] = Vector2::new(0.0, svals[m]);
            }
            let h = homogenized_legendre(p, x.x, x.y);
            let s = x.x + x.y;
            for i in 0..n_tail {
                let g = s.powi((p - i) as i32) * h[i];
                tv[q][i] = Vector2::new(x.x * g, x.y * g);
            }
        }

        // Twice-applied modified Gram–Schmidt of the tails against the
        // (already orthonormal) scalar block and among themselves, updating
        // the coefficient representation alongside the tabulated values.
        let mut tail_mix = DMatrix::<f64>::identity(n_tail, n_tail);
        let mut scalar_mix = DMatrix::<f64>::zeros(n_tail, n_scalar);
        let inner = |a: &dyn Fn(usize) -> Vector2<f64>, b: &dyn Fn(usize) -> Vector2<f64>| {
            (0..nq).map(|q| rule.weights[q] * a(q).dot(&b(q))).sum::<f64>()
        };
        for _pass in 0..2 {
            for i in 0..n_tail {
                // Remove the scalar-block components.
                for k in 0..n_scalar {
                    let c = inner(&|q| tv[q][i], &|q| sb[q][k]);
                    for q in 0..nq {
                        let delta = sb[q][k] * c;
                        tv[q][i] -= delta;
                    }
                    scalar_mix[(i, k)] -= c;
                }
                // Remove the earlier (already normalized) tails.
                for j in 0..i {
                    let c = inner(&|q| tv[q][i], &|q| tv[q][j]);
                    for q in 0..nq {
                        let delta = tv[q][j] * c;
                        tv[q][i] -= delta;
                    }
                    for col in 0..n_tail {
                        let d = tail_mix[(j, col)] * c;
                        tail_mix[(i, col)] -= d;
                    }
                    for col in 0..n_scalar {
                        let d = scalar_mix[(j, col)] * c;
                        scalar_mix[(i, col)] -= d;
                    }
                }
                let norm = inner(&|q| tv[q][i], &|q| tv[q][i]).sqrt();
                for q in 0..nq {
                    tv[q][i] /= norm;
                }
                for col in 0..n_tail {
                    tail_mix[(i, col)] /= norm;
                }
                for col in 0..n_scalar {
                    scalar_mix[(i, col)] /= norm;
                }
            }
        }

        // Gram residual of the finished span (scalar block included).
        let mut residual = 0.0f64;
        let dim = n_scalar + n_tail;
        for a in 0..dim {
            for b in a..dim {
                let value = inner(
                    &|q| if a < n_scalar { sb[q][a] } else { tv[q][a - n_scalar] },
                    &|q| if b < n_scalar { sb[q][b] } else { tv[q][b - n_scalar] },
                );
                let target = if a == b { 1.0 } else { 0.0 };
                residual = residual.max((value - target).abs());
            }
        }

        SpanBasis {
            p,
            scalar,
            tail_mix,
            scalar_mix,
            orthonormality_residual: residual,
        }
    }

    fn dim(&self) -> usize {
        2 * self.scalar.dim + self.p + 1
    }

    /// Values of all spanning members at a reference point.
    fn values(&self, x: Point2<f64>, scalar_vals: &mut [f64]) -> Vec<Vector2<f64>> {
        let p = self.p;
        self.scalar.eval_into(x, scalar_vals);
        let mut out = Vec::with_capacity(self.dim());
        for &v in scalar_vals.iter() {
            out.push(Vector2::new(v, 0.0));
            out.push(Vector2::new(0.0, v));
        }
        let h = homogenized_legendre(p, x.x, x.y);
        let s = x.x + x.y;
        let raw: Vec<Vector2<f64>> = (0..=p)
            .map(|i| {
                let g = s.powi((p - i) as i32) * h[i];
                Vector2::new(x.x * g, x.y * g)
            })
            .collect();
        for i in 0..=p {
            let mut v = Vector2::zeros();
            for (j, rv) in raw.iter().enumerate() {
                v += *rv * self.tail_mix[(i, j)];
            }
            for k in 0..2 * self.scalar.dim {
                v += out[k] * self.scalar_mix[(i, k)];
            }
            out.push(v);
        }
        out
    }

    /// Divergences of all spanning members at a reference point. For the
    /// scalar block these are gradient components; for the raw tails,
    /// Euler's identity gives `div(x·g) = (2 + p) g` for `g` homogeneous of
    /// degree `p`.
    fn divergences(&self, x: Point2<f64>) -> Vec<f64> {
        let p = self.p;
        let mut grads = vec![Vector2::zeros(); self.scalar.dim];
        self.scalar.grad_into(x, &mut grads);
        let mut out = Vec::with_capacity(self.dim());
        for g in &grads {
            out.push(g.x);
            out.push(g.y);
        }
        let h = homogenized_legendre(p, x.x, x.y);
        let s = x.x + x.y;
        let raw: Vec<f64> = (0..=p)
            .map(|i| (p as f64 + 2.0) * s.powi((p - i) as i32) * h[i])
            .collect();
        for i in 0..=p {
            let mut d = 0.0;
            for (j, rd) in raw.iter().enumerate() {
                d += rd * self.tail_mix[(i, j)];
            }
            for k in 0..2 * self.scalar.dim {
                d += out[k] * self.scalar_mix[(i, k)];
            }
            out.push(d);
        }
        out
    }
}

/// The `RTN_p` reference basis dual to the face and interior moments.
#[derive(Debug)]
pub struct RTNBasis {
    pub degree: usize,
    pub dim: usize,
    /// Degrees of freedom per face (`degree + 1`); face `i`'s block starts at
    /// `i * face_dofs`, interior dofs follow all three face blocks.
    pub face_dofs: usize,
    span: SpanBasis,
    /// Dual-basis coefficients over the spanning set (`dim × dim`).
    w: DMatrix<f64>,
    /// Divergence of each dual member, expanded in the orthonormal scalar
    /// basis of degree `p` (`dim × scalar_dim(p)`).
    pub div_coeffs: DMatrix<f64>,
    /// `max |DOF_i(v_j) - δ_ij|` after Newton polishing.
    pub duality_residual: f64,
    /// ∞-norm condition estimate of the moment matrix over the orthonormal
    /// span.
    pub condition_estimate: f64,
}

impl RTNBasis {
    pub fn new(degree: usize) -> Result<Self, RtnError> {
        if degree > MAX_DEGREE {
            return Err(RtnError::DegreeTooHigh(degree));
        }
        let p = degree;
        let dim = rtn_dim(p);
        let span = SpanBasis::new(p);
        let interior_scalar = if p > 0 { Some(ScalarBasis::new(p - 1)) } else { None };
        let face_dofs = p + 1;

        // DOF × spanning-member moment matrix.
        let mut a = DMatrix::zeros(dim, dim);
        let mut scalar_vals = vec![0.0; span.scalar.dim];

        // Face moments, by 1D quadrature exact for the degree-(2p+1)
        // integrand.
        let (t_nodes, t_weights) = edge_rule(2 * p + 2);
        for face in 0..3 {
            let normal = Vector2::new(
                REFERENCE_EDGE_NORMALS[face][0],
                REFERENCE_EDGE_NORMALS[face][1],
            );
            for (q, &t) in t_nodes.iter().enumerate() {
                let x = reference_edge_point(face, t);
                let legendre = shifted_legendre_orthonormal(p, t);
                let vals = span.values(x, &mut scalar_vals);
                for k in 0..face_dofs {
                    let row = face * face_dofs + k;
                    for (s, v) in vals.iter().enumerate() {
                        a[(row, s)] += t_weights[q] * v.dot(&normal) * legendre[k];
                    }
                }
            }
        }

        // Interior moments, by triangle quadrature exact for degree 2p.
        if let Some(isb) = &interior_scalar {
            let rule = triangle_rule(2 * p + 2);
            let mut ivals = vec![0.0; isb.dim];
            for (q, &x) in rule.points.iter().enumerate() {
                let vals = span.values(x, &mut scalar_vals);
                isb.eval_into(x, &mut ivals);
                for m in 0..isb.dim {
                    for c in 0..2 {
                        let row = 3 * face_dofs + 2 * m + c;
                        for (s, v) in vals.iter().enumerate() {
                            a[(row, s)] += rule.weights[q] * v[c] * ivals[m];
                        }
                    }
                }
            }
        }

        // Dual coefficients W solve A Wᵀ = I, i.e. W = (Aᵀ)⁻¹. Newton inverse
        // iteration X ← X (2I − Aᵀ X) polishes the LU inverse to the floor
        // set by the conditioning.
        let at = a.transpose();
        let mut w = at
            .clone()
            .lu()
            .try_inverse()
            .expect("moment matrix of a unisolvent degree-of-freedom set");
        let identity = DMatrix::<f64>::identity(dim, dim);
        for _ in 0..3 {
            let residual = &identity - &at * &w;
            let update = &w * &residual;
            w += update;
        }
        let duality_residual = (&a * w.transpose() - &identity).abs().max();
        let inf_norm = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0f64, f64::max)
        };
        let condition_estimate = inf_norm(&a) * inf_norm(&w.transpose());

        // Divergence of the spanning members in the orthonormal scalar basis,
        // then mapped through W to the dual members.
        let rule = triangle_rule(2 * p + 2);
        let mut dspan = DMatrix::zeros(dim, span.scalar.dim);
        let mut svals = vec![0.0; span.scalar.dim];
        for (q, &pt) in rule.points.iter().enumerate() {
            let divs = span.divergences(pt);
            span.scalar.eval_into(pt, &mut svals);
            for s in 0..dim {
                for m in 0..span.scalar.dim {
                    dspan[(s, m)] += rule.weights[q] * divs[s] * svals[m];
                }
            }
        }
        let div_coeffs = &w * &dspan;

        Ok(RTNBasis {
            degree,
            dim,
            face_dofs,
            span,
            w,
            div_coeffs,
            duality_residual,
            condition_estimate,
        })
    }

    /// Values of all dual basis members at a reference point.
    pub fn eval_into(&self, x: Point2<f64>, out: &mut [Vector2<f64>]) {
        assert_eq!(out.len(), self.dim);
        let mut scalar_vals = vec![0.0; self.span.scalar.dim];
        let span = self.span.values(x, &mut scalar_vals);
        for j in 0..self.dim {
            let mut v = Vector2::zeros();
            for (s, sv) in span.iter().enumerate() {
                v += *sv * self.w[(j, s)];
            }
            out[j] = v;
        }
    }

    /// Per-element scaling of the Piola-mapped dual basis that makes each
    /// face coefficient equal to the moment of the global normal trace taken
    /// in the face's own `lo → hi` orientation:
    ///
    /// * a length factor `|F| / |ê|` cancels the arc-length mismatch of the
    ///   Piola trace identity;
    /// * when the element traverses the face against the global orientation,
    ///   a parity factor `(-1)^(k+1)` absorbs both the normal flip and the
    ///   reversal `L_k(1-t) = (-1)^k L_k(t)`.
    ///
    /// Interior members keep scaling 1 (their normal traces vanish).
    pub fn element_scalings(&self, mesh: &Mesh, e: usize) -> Vec<f64> {
        let mut scalings = vec![1.0; self.dim];
        for i in 0..3 {
            let f = mesh.element_faces[e][i];
            let ratio = mesh.face_length(f) / REFERENCE_EDGE_LENGTHS[i];
            let along = mesh.face_sign(e, i) > 0.0;
            for k in 0..self.face_dofs {
                let sign = if along {
                    1.0
                } else if k % 2 == 0 {
                    -1.0
                } else {
                    1.0
                };
                scalings[i * self.face_dofs + k] = ratio * sign;
            }
        }
        scalings
    }

    /// The orthonormal scalar basis (degree `p`) the divergence coefficients
    /// refer to.
    pub fn scalar_basis(&self) -> &ScalarBasis {
        &self.span.scalar
    }

    /// Max deviation of the spanning set's Gram matrix from the identity.
    pub fn span_orthonormality_residual(&self) -> f64 {
        self.span.orthonormality_residual
    }
}

/// Homogenized Legendre polynomials `h_0..h_p` at `(x, y)`: degree-`i`
/// homogeneous polynomials equal to `(x+y)^i P_i((x-y)/(x+y))` away from the
/// line `x + y = 0`, evaluated by a recurrence that is polynomial throughout.
pub(crate) fn homogenized_legendre(p: usize, x: f64, y: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(p + 1);
    h.push(1.0);
    if p == 0 {
        return h;
    }
    h.push(x - y);
    let s2 = (x + y) * (x + y);
    for i in 1..p {
        let next = ((2 * i + 1) as f64 * (x - y) * h[i] - i as f64 * s2 * h[i - 1])
            / (i + 1) as f64;
        h.push(next);
    }
    h
}
