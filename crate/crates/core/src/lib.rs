//! Numerical laboratory for the scaled diffusion-approximation model of
//! radiation hydrodynamics in the low Mach number regime.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: closed-form algebra (parameters, equations of state, the
//!   radiation source and every nonlinear remainder term) as pure point
//!   evaluators.
//! - [`spectral`]: periodic grids, Fourier transforms, exact derivatives,
//!   discrete Sobolev norms, Leray projection and diagonal Helmholtz solves.
//! - [`compressible`]: IMEX time integration of the scaled compressible
//!   system in primitive or perturbation form.
//! - [`incompressible`]: projection solver for the incompressible
//!   Navier–Stokes limit.
//! - [`init`]: reproducible well-prepared initial data.
//! - [`diagnostics`]: scaled norm bundles, energy functionals, dissipation
//!   integrals and the lemma probes.
//! - [`linearized`]: frozen-coefficient linearized problem and its uniform
//!   estimate probe.

pub mod compressible;
pub mod diagnostics;
pub mod error;
pub mod incompressible;
pub mod init;
pub mod linalg;
pub mod linearized;
pub mod model;
pub mod spectral;

pub use error::{Error, Result};
