//! Topology optimization of natural-convection heat sinks with a reduced-order
//! potential-flow model.
//!
//! The fluid velocity is eliminated in favour of a modified pressure, so each
//! forward solve is a coupled pressure/temperature problem on one bilinear mesh.
//! Around it sit a damped Newton solver, discrete adjoint sensitivities, a density
//! filter, MMA updates and the continuation schedule. A conduction-plus-sink
//! surrogate and a calibration tool for the fluid resistance are included for
//! comparison.

pub mod adjoint;
pub mod boundary;
pub mod calibration;
pub mod config;
pub mod element;
pub mod error;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod mma;
pub mod newton;
pub mod physics;
pub mod simplified;
pub mod topopt;

pub use error::{Error, Result};
