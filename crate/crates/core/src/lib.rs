//! Variational data assimilation with a reduced-order twist: a parametrized
//! elliptic model on the unit square is corrected through an inflow boundary
//! term, fitted to noisy pointwise sensor data, and accelerated by certified
//! reduced-basis spaces so that state and parameter estimation run online in
//! milliseconds with rigorous error bounds.

pub mod error;
pub mod la;

pub mod mesh_fem;
pub mod model;

pub mod assimilate;
pub mod stability;

pub mod rb;

pub mod estimate;

pub mod config;
pub mod io;
pub mod pipeline;

pub use error::{Error, Result};
