//! Pointwise-evaluable source data for projections and assembly.
//!
//! A source is evaluated *from within a given element*, so piecewise data
//! (discrete gradients, flux fields) present the correct one-sided limit on
//! element boundaries. Plain closures of position are wrapped in [`PointFn`];
//! element-aware closures in [`MeshFn`]. [`Transferred`] re-addresses a field
//! that lives on a coarser mesh so it can be evaluated — exactly, not by
//! interpolation — at quadrature points of a refined mesh, via the
//! child-to-parent element map recorded during refinement.

use nalgebra::{Point2, Vector2};

use crate::mesh::Mesh;

use super::fields::{PiecewisePoly, PiecewiseVector, RTNField};
use super::rtn::RTNBasis;

/// Scalar data evaluable at a point, with the containing element as context.
pub trait ScalarField {
    fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> f64;
}

/// Vector data evaluable at a point, with the containing element as context.
pub trait VectorField {
    fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> Vector2<f64>;
}

impl<T: ScalarField + ?Sized> ScalarField for &T {
    fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> f64 {
        (**self).eval(mesh, element, x)
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> Vector2<f64> {
        (**self).eval(mesh, element, x)
    }
}

/// Adapter for closures of position only.
pub struct PointFn<F>(pub F);

impl<F: Fn(Point2<f64>) -> f64> ScalarField for PointFn<F> {
    fn eval(&self, _mesh: &Mesh, _element: usize, x: Point2<f64>) -> f64 {
        (self.0)(x)
    }
}

impl<F: Fn(Point2<f64>) -> Vector2<f64>> VectorField for PointFn<F> {
    fn eval(&self, _mesh: &Mesh, _element: usize, x: Point2<f64>) -> Vector2<f64> {
        (self.0)(x)
    }
}

/// Adapter for element-aware closures.
pub struct MeshFn<F>(pub F);

impl<F: Fn(&Mesh, usize, Point2<f64>) -> f64> ScalarField for MeshFn<F> {
    fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> f64 {
        (self.0)(mesh, element, x)
    }
}

impl<F: Fn(&Mesh, usize, Point2<f64>) -> Vector2<f64>> VectorField for MeshFn<F> {
    fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> Vector2<f64> {
        (self.0)(mesh, element, x)
    }
}

impl ScalarField for PiecewisePoly {
    fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> f64 {
        PiecewisePoly::eval(self, mesh, element, x)
    }
}

impl VectorField for PiecewiseVector {
    fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> Vector2<f64> {
        PiecewiseVector::eval(self, mesh, element, x)
    }
}

/// A flux field together with the basis needed to evaluate it.
pub struct FluxField<'a> {
    pub basis: &'a RTNBasis,
    pub field: &'a RTNField,
}

impl VectorField for FluxField<'_> {
    fn eval(&self, mesh: &Mesh, element: usize, x: Point2<f64>) -> Vector2<f64> {
        self.field.eval(self.basis, mesh, element, x)
    }
}

/// A field defined on a coarser mesh, evaluated through the child-to-parent
/// element map of one or more refinements. Polynomials restricted to child
/// elements stay polynomials of the same degree (and flux fields stay in the
/// same flux space), so downstream projections of a transferred field are
/// exact.
pub struct Transferred<'a, T> {
    pub base_mesh: &'a Mesh,
    pub field: &'a T,
    /// For each element of the mesh passed at evaluation time, its ancestor
    /// element in `base_mesh`.
    pub parent_of: &'a [usize],
}

impl<T: ScalarField> ScalarField for Transferred<'_, T> {
    fn eval(&self, _mesh: &Mesh, element: usize, x: Point2<f64>) -> f64 {
        self.field.eval(self.base_mesh, self.parent_of[element], x)
    }
}

impl<T: VectorField> VectorField for Transferred<'_, T> {
    fn eval(&self, _mesh: &Mesh, element: usize, x: Point2<f64>) -> Vector2<f64> {
        self.field.eval(self.base_mesh, self.parent_of[element], x)
    }
}

/// Composition of child-to-parent maps across two successive refinements:
/// `result[e] = coarse_of_mid[mid_of_fine[e]]`.
pub fn compose_parent_maps(coarse_of_mid: &[usize], mid_of_fine: &[usize]) -> Vec<usize> {
    mid_of_fine.iter().map(|&m| coarse_of_mid[m]).collect()
}
