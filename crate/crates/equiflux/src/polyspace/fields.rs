//! Coefficient representations of piecewise polynomial fields over a mesh.
//!
//! Scalar and Cartesian-vector fields are stored elementwise in the
//! orthonormal scalar basis mapped by `φ ↦ φ∘F⁻¹/√(det B)`, which keeps the
//! basis orthonormal on every physical element: L² norms are coefficient
//! norms and L² projections are plain inner products. Flux fields are stored
//! elementwise over the contravariant-Piola image of the [`RTNBasis`] dual
//! basis, rescaled per element (see [`RTNBasis::element_scalings`]) so that a
//! face coefficient equals the moment of the global normal trace in the
//! face's own orientation. Normal continuity across a face is then literal
//! equality of the two incident elements' face coefficient blocks.

use nalgebra::{Matrix2, Point2, Vector2};

use crate::mesh::Mesh;

use super::rtn::{rtn_dim, RTNBasis};
use super::scalar::{scalar_dim, ScalarBasis};

/// Affine reference-to-physical map `F(x̂) = origin + B x̂` of an element,
/// with the contravariant Piola transform `v̂ ↦ B v̂ / det B`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub b: Matrix2<f64>,
    pub origin: Point2<f64>,
    pub det: f64,
    inv: Matrix2<f64>,
}

impl AffineMap {
    pub fn for_element(mesh: &Mesh, e: usize) -> Self {
        let [p0, p1, p2] = mesh.element_coords(e);
        let b = Matrix2::from_columns(&[p1 - p0, p2 - p0]);
        let det = b.determinant();
        let inv = b.try_inverse().expect("mesh elements are non-degenerate");
        AffineMap { b, origin: p0, det, inv }
    }

    pub fn to_physical(&self, xhat: Point2<f64>) -> Point2<f64> {
        self.origin + self.b * xhat.coords
    }

    pub fn to_reference(&self, x: Point2<f64>) -> Point2<f64> {
        Point2::from(self.inv * (x - self.origin))
    }

    /// Contravariant Piola transform of a reference vector value.
    pub fn piola(&self, vhat: Vector2<f64>) -> Vector2<f64> {
        self.b * vhat / self.det
    }

    /// Pullback `det B · B⁻¹ v` inverting [`AffineMap::piola`].
    pub fn piola_inverse(&self, v: Vector2<f64>) -> Vector2<f64> {
        self.inv * v * self.det
    }

    /// Covariant transform `B⁻ᵀ ĝ` mapping reference gradients to physical
    /// gradients of `φ̂ ∘ F⁻¹`.
    pub fn gradient(&self, ghat: Vector2<f64>) -> Vector2<f64> {
        self.inv.transpose() * ghat
    }
}

/// Piecewise polynomial of a fixed degree, element-major coefficients in the
/// per-element orthonormal scalar basis.
#[derive(Debug, Clone)]
pub struct PiecewisePoly {
    pub degree: usize,
    basis: ScalarBasis,
    pub coeffs: Vec<f64>,
}

impl PiecewisePoly {
    pub fn zeros(degree: usize, elements: usize) -> Self {
        let basis = ScalarBasis::new(degree);
        let coeffs = vec![0.0; basis.dim * elements];
        PiecewisePoly { degree, basis, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim
    }

    pub fn elements(&self) -> usize {
        self.coeffs.len() / self.basis.dim
    }

    pub fn coeffs_of(&self, e: usize) -> &[f64] {
        &self.coeffs[e * self.basis.dim..(e + 1) * self.basis.dim]
    }

    pub fn coeffs_of_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.coeffs[e * self.basis.dim..(e + 1) * self.basis.dim]
    }

    pub fn basis(&self) -> &ScalarBasis {
        &self.basis
    }

    /// Point value within element `e`.
    pub fn eval(&self, mesh: &Mesh, e: usize, x: Point2<f64>) -> f64 {
        let map = AffineMap::for_element(mesh, e);
        let xhat = map.to_reference(x);
        let mut vals = vec![0.0; self.basis.dim];
        self.basis.eval_into(xhat, &mut vals);
        let scale = 1.0 / map.det.sqrt();
        self.coeffs_of(e)
            .iter()
            .zip(&vals)
            .map(|(&c, &v)| c * v * scale)
            .sum()
    }

    /// Global L² norm (coefficient norm, by orthonormality).
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// L² norm over a single element.
    pub fn element_l2_norm(&self, e: usize) -> f64 {
        self.coeffs_of(e).iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Exact integral over the mesh: only the constant mode `φ₀ = 1/√|K|`
    /// integrates to a nonzero value, `√|K|`.
    pub fn integral(&self, mesh: &Mesh) -> f64 {
        (0..self.elements())
            .map(|e| self.coeffs_of(e)[0] * mesh.areas[e].sqrt())
            .sum()
    }

    /// Exact re-expansion in a higher-degree basis.
    pub fn elevate(&self, degree: usize) -> PiecewisePoly {
        assert!(degree >= self.degree);
        let mut out = PiecewisePoly::zeros(degree, self.elements());
        for e in 0..self.elements() {
            let src = self.coeffs_of(e).to_vec();
            let old_basis = &self.basis;
            let ratios: Vec<f64> = (0..old_basis.dim)
                .map(|i| old_basis.scale(i) / out.basis.scale(i))
                .collect();
            let dst = out.coeffs_of_mut(e);
            for i in 0..src.len() {
                dst[i] = src[i] * ratios[i];
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &PiecewisePoly, factor: f64) {
        assert_eq!(self.degree, other.degree);
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.coeffs {
            *c *= factor;
        }
    }
}

/// Piecewise polynomial vector field; per element the `x`-component block of
/// coefficients is followed by the `y`-component block, each in the
/// orthonormal scalar basis.
#[derive(Debug, Clone)]
pub struct PiecewiseVector {
    pub degree: usize,
    basis: ScalarBasis,
    pub coeffs: Vec<f64>,
}

impl PiecewiseVector {
    pub fn zeros(degree: usize, elements: usize) -> Self {
        let basis = ScalarBasis::new(degree);
        let coeffs = vec![0.0; 2 * basis.dim * elements];
        PiecewiseVector { degree, basis, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim
    }

    pub fn elements(&self) -> usize {
        self.coeffs.len() / (2 * self.basis.dim)
    }

    pub fn coeffs_of(&self, e: usize) -> &[f64] {
        let n = 2 * self.basis.dim;
        &self.coeffs[e * n..(e + 1) * n]
    }

    pub fn coeffs_of_mut(&mut self, e: usize) -> &mut [f64] {
        let n = 2 * self.basis.dim;
        &mut self.coeffs[e * n..(e + 1) * n]
    }

    pub fn basis(&self) -> &ScalarBasis {
        &self.basis
    }

    pub fn eval(&self, mesh: &Mesh, e: usize, x: Point2<f64>) -> Vector2<f64> {
        let map = AffineMap::for_element(mesh, e);
        let xhat = map.to_reference(x);
        let mut vals = vec![0.0; self.basis.dim];
        self.basis.eval_into(xhat, &mut vals);
        let scale = 1.0 / map.det.sqrt();
        let c = self.coeffs_of(e);
        let mut out = Vector2::zeros();
        for (m, &v) in vals.iter().enumerate() {
            out.x += c[m] * v * scale;
            out.y += c[self.basis.dim + m] * v * scale;
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn element_l2_norm(&self, e: usize) -> f64 {
        self.coeffs_of(e).iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn elevate(&self, degree: usize) -> PiecewiseVector {
        assert!(degree >= self.degree);
        let mut out = PiecewiseVector::zeros(degree, self.elements());
        let ratios: Vec<f64> = (0..self.basis.dim)
            .map(|i| self.basis.scale(i) / out.basis.scale(i))
            .collect();
        let old_dim = self.basis.dim;
        let new_dim = out.basis.dim;
        for e in 0..self.elements() {
            let src = self.coeffs_of(e).to_vec();
            let dst = out.coeffs_of_mut(e);
            for i in 0..old_dim {
                dst[i] = src[i] * ratios[i];
                dst[new_dim + i] = src[old_dim + i] * ratios[i];
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &PiecewiseVector, factor: f64) {
        assert_eq!(self.degree, other.degree);
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.coeffs {
            *c *= factor;
        }
    }
}

/// Elementwise flux field over the scaled Piola-mapped [`RTNBasis`]; the
/// basis itself is passed to the methods that need it rather than stored,
/// since its construction involves a dense inversion.
#[derive(Debug, Clone)]
pub struct RTNField {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl RTNField {
    pub fn zeros(degree: usize, elements: usize) -> Self {
        RTNField { degree, coeffs: vec![0.0; rtn_dim(degree) * elements] }
    }

    pub fn dim(&self) -> usize {
        rtn_dim(self.degree)
    }

    pub fn elements(&self) -> usize {
        self.coeffs.len() / self.dim()
    }

    pub fn coeffs_of(&self, e: usize) -> &[f64] {
        let n = self.dim();
        &self.coeffs[e * n..(e + 1) * n]
    }

    pub fn coeffs_of_mut(&mut self, e: usize) -> &mut [f64] {
        let n = self.dim();
        &mut self.coeffs[e * n..(e + 1) * n]
    }

    pub fn eval(&self, basis: &RTNBasis, mesh: &Mesh, e: usize, x: Point2<f64>) -> Vector2<f64> {
        assert_eq!(basis.degree, self.degree);
        let map = AffineMap::for_element(mesh, e);
        let xhat = map.to_reference(x);
        let mut vals = vec![Vector2::zeros(); basis.dim];
        basis.eval_into(xhat, &mut vals);
        let scalings = basis.element_scalings(mesh, e);
        let mut vhat = Vector2::zeros();
        for (j, v) in vals.iter().enumerate() {
            vhat += *v * (self.coeffs_of(e)[j] * scalings[j]);
        }
        map.piola(vhat)
    }

    /// Divergence as a piecewise polynomial of the same degree — exact, via
    /// the precomputed reference divergence expansion and the Piola identity
    /// `div v = div̂ v̂ / det B`.
    pub fn divergence(&self, basis: &RTNBasis, mesh: &Mesh) -> PiecewisePoly {
        assert_eq!(basis.degree, self.degree);
        let sdim = scalar_dim(self.degree);
        let mut out = PiecewisePoly::zeros(self.degree, self.elements());
        for e in 0..self.elements() {
            let scalings = basis.element_scalings(mesh, e);
            let det = 2.0 * mesh.areas[e];
            let c = self.coeffs_of(e).to_vec();
            let dst = out.coeffs_of_mut(e);
            for m in 0..sdim {
                let mut acc = 0.0;
                for j in 0..c.len() {
                    acc += c[j] * scalings[j] * basis.div_coeffs[(j, m)];
                }
                dst[m] = acc / det.sqrt();
            }
        }
        out
    }

    /// Coefficient block of the normal-trace moments of element `e` on its
    /// local face `i`, always in the face's global `lo → hi` orientation.
    pub fn face_coeffs(&self, e: usize, i: usize) -> &[f64] {
        let fd = self.degree + 1;
        &self.coeffs_of(e)[i * fd..(i + 1) * fd]
    }

    /// Value of the normal trace `v|ₑ · n_F` at face parameter `t` (global
    /// orientation), from the face coefficient block.
    pub fn normal_trace(&self, e: usize, i: usize, t: f64) -> f64 {
        let legendre =
            super::jacobi::shifted_legendre_orthonormal(self.degree, t);
        self.face_coeffs(e, i)
            .iter()
            .zip(&legendre)
            .map(|(&c, &l)| c * l)
            .sum()
    }

    /// Moment-coefficient mismatch of the normal trace across an interior
    /// face, or the trace coefficients themselves on a boundary face. A flux
    /// is H(div)-conforming iff these vanish on every interior face.
    pub fn normal_jump(&self, mesh: &Mesh, f: usize) -> Vec<f64> {
        let face = &mesh.faces[f];
        let (e0, other) = face.elements;
        let i0 = mesh.local_face_index(e0, f).expect("face registry is consistent");
        let mine = self.face_coeffs(e0, i0).to_vec();
        match other {
            Some(e1) => {
                let i1 = mesh.local_face_index(e1, f).expect("face registry is consistent");
                let theirs = self.face_coeffs(e1, i1);
                mine.iter().zip(theirs).map(|(a, b)| a - b).collect()
            }
            None => mine,
        }
    }

    /// Global L² norm by per-element quadrature (the flux basis is not
    /// orthogonal, unlike the scalar bases).
    pub fn l2_norm(&self, basis: &RTNBasis, mesh: &Mesh) -> f64 {
        (0..self.elements())
            .map(|e| self.element_l2_norm(basis, mesh, e).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn element_l2_norm(&self, basis: &RTNBasis, mesh: &Mesh, e: usize) -> f64 {
        assert_eq!(basis.degree, self.degree);
        let rule = super::quadrature::triangle_rule(2 * self.degree + 2);
        let map = AffineMap::for_element(mesh, e);
        let scalings = basis.element_scalings(mesh, e);
        let c = self.coeffs_of(e);
        let mut vals = vec![Vector2::zeros(); basis.dim];
        let mut acc = 0.0;
        for (q, &xhat) in rule.points.iter().enumerate() {
            basis.eval_into(xhat, &mut vals);
            let mut vhat = Vector2::zeros();
            for (j, v) in vals.iter().enumerate() {
                vhat += *v * (c[j] * scalings[j]);
            }
            let v = map.b * vhat;
            acc += rule.weights[q] * v.norm_squared() / map.det;
        }
        acc.sqrt()
    }

    pub fn add_scaled(&mut self, other: &RTNField, factor: f64) {
        assert_eq!(self.degree, other.degree);
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.coeffs {
            *c *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::structured_square;

    #[test]
    fn affine_map_round_trip() {
        let (mesh, _) = structured_square(3, crate::mesh::all_dirichlet);
        for e in 0..mesh.elements.len() {
            let map = AffineMap::for_element(&mesh, e);
            assert!(map.det > 0.0);
            assert!((map.det - 2.0 * mesh.areas[e]).abs() < 1e-14);
            let xhat = Point2::new(0.27, 0.41);
            let x = map.to_physical(xhat);
            let back = map.to_reference(x);
            assert!((back - xhat).norm() < 1e-13);
            let v = Vector2::new(0.3, -0.8);
            let there = map.piola(v);
            assert!((map.piola_inverse(there) - v).norm() < 1e-13);
        }
    }

    #[test]
    fn scalar_field_norm_is_coefficient_norm() {
        let (mesh, _) = structured_square(2, crate::mesh::all_dirichlet);
        let mut f = PiecewisePoly::zeros(2, mesh.elements.len());
        // The constant 1 on element 0: coefficient 1/φ₀ = √|K| on mode 0.
        f.coeffs_of_mut(0)[0] = mesh.areas[0].sqrt();
        assert!((f.eval(&mesh, 0, mesh.element_coords(0)[0]) - 1.0).abs() < 1e-13);
        // ‖1‖²_{L²(K)} = |K|.
        assert!((f.l2_norm() - mesh.areas[0].sqrt()).abs() < 1e-14);
        assert!((f.integral(&mesh) - mesh.areas[0]).abs() < 1e-14);
    }

    #[test]
    fn elevation_preserves_values_and_norms() {
        let (mesh, _) = structured_square(2, crate::mesh::all_dirichlet);
        let ne = mesh.elements.len();
        let mut f = PiecewisePoly::zeros(2, ne);
        for (i, c) in f.coeffs.iter_mut().enumerate() {
            *c = (i as f64 * 0.37).sin();
        }
        let g = f.elevate(5);
        assert!((f.l2_norm() - g.l2_norm()).abs() < 1e-12);
        for e in 0..ne {
            let x = mesh.element_coords(e)[0]
                + (mesh.element_coords(e)[1] - mesh.element_coords(e)[0]) * 0.3
                + (mesh.element_coords(e)[2] - mesh.element_coords(e)[0]) * 0.2;
            assert!((f.eval(&mesh, e, x) - g.eval(&mesh, e, x)).abs() < 1e-12);
        }

        let mut v = PiecewiseVector::zeros(1, ne);
        for (i, c) in v.coeffs.iter_mut().enumerate() {
            *c = (i as f64 * 0.91).cos();
        }
        let w = v.elevate(4);
        assert!((v.l2_norm() - w.l2_norm()).abs() < 1e-12);
        for e in 0..ne {
            let x = mesh.element_coords(e)[0]
                + (mesh.element_coords(e)[1] - mesh.element_coords(e)[0]) * 0.25
                + (mesh.element_coords(e)[2] - mesh.element_coords(e)[0]) * 0.35;
            assert!((v.eval(&mesh, e, x) - w.eval(&mesh, e, x)).norm() < 1e-12);
        }
    }
}
