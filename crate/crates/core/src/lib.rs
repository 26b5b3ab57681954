//! Opinion sub-graph fusion for sequence classifiers.

pub mod autodiff;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod param;
pub mod sweep;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
