//! Learned key-point planning for a land-air robot: the prediction network,
//! spline densification, the differentiable training objective, the
//! training/evaluation loop and the closed-loop two-stage navigator.

pub mod error;
pub mod gkpn;
pub mod gradcheck;
pub mod loss;
pub mod modes;
pub mod navigator;
pub mod plan;
pub mod refine;
pub mod spline;
pub mod trainer;

pub use error::{CoreError, Result};
