//! Differentiable simulation and co-design of minimalist cameras built from
//! freeform pixels.

pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod net;
pub mod prune;
pub mod rng;
pub mod scene;
pub mod sensor;
pub mod train;

pub use error::{Error, Result};
