//! Numerical laboratory for the transverse Chern-Ricci flow on model
//! transversely Hermitian foliations: flat torus transverse spaces with
//! finite holonomy, evolved through the scalar parabolic complex
//! Monge-Ampere reduction of the flow.

pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod fft;
pub mod forms;
pub mod holonomy;
pub mod matrix;
pub mod max_time;
pub mod model;
pub mod spectral;
pub mod symbol;

pub use error::{Error, Result};
