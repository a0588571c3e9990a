//! Equilibrated flux reconstruction and polynomial-degree-robust discrete
//! H(div) liftings on 2D triangular meshes.
//!
//! The crate solves the model elliptic problem `-Δu = f + ∇·ξ` with mixed
//! Dirichlet/Neumann boundary conditions by conforming Lagrange finite
//! elements, then post-processes the discrete solution into an equilibrated
//! flux: an H(div)-conforming Raviart–Thomas–Nédélec field `σ_h` whose
//! divergence reproduces the (projected) source exactly and whose normal trace
//! vanishes on the Neumann boundary. The flux drives a guaranteed —
//! constant-free — upper bound on the energy error, and the same patch-wise
//! machinery yields discrete right-inverses of the divergence ("liftings")
//! whose stability is robust in the polynomial degree.
//!
//! Module map:
//!
//! * [`mesh`] — conforming triangulations, boundary markers, vertex patches,
//!   hat functions, uniform refinement, generators, plain-text I/O;
//! * [`polyspace`] — scalar and Raviart–Thomas–Nédélec bases on triangles,
//!   quadrature, elementwise L² projections, divergence and normal traces;
//! * [`linsolve`] — dense symmetric-indefinite KKT solver for patch problems
//!   and a sparse SPD solver for global stiffness systems;
//! * [`primal`] — the H¹-conforming Lagrange solve producing `u_h`;
//! * [`equilibration`] — patch-wise constrained minimizations and the global
//!   flux assembly, with machine-precision verification of the equilibration
//!   properties;
//! * [`estimator`] — guaranteed error bound, data oscillation, efficiency
//!   indices;
//! * [`lifting`] — the two constructive liftings (plain and hat-weighted)
//!   with stability-ratio diagnostics;
//! * [`harness`] — manufactured problems, independent oracles, experiment
//!   configs, CSV/JSON reports, and the CLI driver.

pub mod equilibration;
pub mod estimator;
pub mod lifting;
pub mod linsolve;
pub mod mesh;
pub mod polyspace;
pub mod primal;
