//! Polynomial spaces on triangles: quadrature, orthonormal scalar bases,
//! Raviart–Thomas–Nédélec flux bases with moment degrees of freedom, the
//! coefficient field types built on them, and the projections between
//! pointwise data and those fields.
//!
//! Conventions shared by the whole module:
//!
//! * the reference triangle has vertices `(0,0)`, `(1,0)`, `(0,1)`, and edge
//!   `i` is opposite vertex `i`, traversed counterclockwise;
//! * scalar bases are L²-orthonormal on the reference triangle and mapped to
//!   physical elements with a `1/√(det B)` factor, staying orthonormal;
//! * flux bases are mapped with the contravariant Piola transform and a
//!   per-element scaling that identifies face coefficients with global-
//!   orientation normal-trace moments (see [`rtn::RTNBasis`]).

pub mod fields;
pub(crate) mod jacobi;
pub mod project;
pub mod quadrature;
pub mod rtn;
pub mod scalar;
pub mod sources;

pub use fields::{AffineMap, PiecewisePoly, PiecewiseVector, RTNField};
pub use jacobi::{gauss_legendre_01, shifted_legendre_orthonormal};
pub use project::{
    element_flux_gram, element_flux_moments, normal_trace_sup_bound, project_rtn,
    project_rtn_element, project_scalar, project_vector, tabulate_flux, tabulate_scalar,
    FluxTabulation, ScalarTabulation,
};
pub use quadrature::{edge_rule, triangle_rule, QuadRule};
pub use rtn::{rtn_dim, RTNBasis, RtnError, MAX_DEGREE};
pub use scalar::{scalar_dim, ScalarBasis};
pub use sources::{
    compose_parent_maps, FluxField, MeshFn, PointFn, ScalarField, Transferred, VectorField,
};
