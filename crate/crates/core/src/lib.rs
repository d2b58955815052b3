//! Linear response of uniformly hyperbolic maps by adjoint shadowing, and
//! the optimal perturbation in a Sobolev space of vector fields.
//!
//! The [`engine::ResponseEngine`] generates one long orbit, its unstable
//! frames and the two adjoint shadowing covector paths, then evaluates the
//! response of any number of perturbations against that shared data.
//! [`optimal`] turns the responses of an orthonormal Fourier basis into the
//! optimal perturbation, and [`verify`] checks predictions against
//! finite differences of long-orbit averages.

pub mod cli;
pub mod config;
pub mod diag;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod field;
pub mod fourier;
pub mod frames;
pub mod io;
pub mod optimal;
pub mod response;
pub mod shadowing;
pub mod stats;
pub mod verify;

pub use engine::{EngineParams, ResponseEngine};
pub use error::{Error, Result};
pub use field::VectorField;
