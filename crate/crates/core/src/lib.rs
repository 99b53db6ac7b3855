//! `pqlab`: a numerical laboratory for autonomous convex variational integrals
//! `∫ F(Dv)` whose integrands have `(p,q)` growth.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: lattices, node and cell fields, forward differences, local norms.
//! - [`integrands`]: the integrand catalog, the auxiliary `V` function and
//!   randomized hypothesis checks.
//! - [`legendre`]: discrete Legendre–Fenchel transforms and polar integrands.
//! - [`approximation`]: the ladder of regularized integrands `F_k`.
//! - [`solver`]: discrete Dirichlet minimization and ladder solves.
//! - [`duality`]: dual fields, solenoidal residuals and duality certificates.
//! - [`regularity`]: exponent calculus, Besov–Nikolskii estimation,
//!   integrability scans, the higher-order penalty solver and mollification.
//! - [`experiment`]: config-driven runs producing reproducible artifacts.
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example` lists them.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod approximation;
pub mod duality;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod integrands;
pub mod legendre;
pub mod numeric;
pub mod regularity;
pub mod solver;

pub use error::{LabError, Result};
