//! Network coding propagation.
//!
//! Architecture search by gradient descent on architecture codes through a
//! frozen neural predictor. The crate provides the multi-resolution coding
//! space ([`coding`]), an analytic FLOPs model ([`netmodel`]), the predictor
//! ([`predictor`]), the propagation engine ([`propagation`]), reference
//! search baselines ([`baselines`]) and benchmark utilities, including a
//! synthetic oracle for desk-scale experiments ([`benchio`]).

pub mod baselines;
pub mod benchio;
pub mod cli;
pub mod coding;
pub mod error;
pub mod eval;
pub mod loss;
pub mod netmodel;
pub mod predictor;
pub mod propagation;

pub use coding::{ArchCode, Head, InputGeometry, NetworkSpec, RawCode, CODE_DIM};
pub use error::{Error, Result};
pub use netmodel::{CostReport, FlopsTable};
pub use predictor::{MetricSet, Predictor};
