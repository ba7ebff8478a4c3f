pub mod action;
pub mod continuum;
pub mod error;
pub mod io;
pub mod measure;
pub mod model;
pub mod noether;
pub mod numeric;
pub mod optimizer;
pub mod quadrature;
pub mod spectral;

pub use error::{CfsError, Result};
