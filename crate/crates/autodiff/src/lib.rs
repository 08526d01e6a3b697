//! Tape-based reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Values live on a [`Tape`]; every operator appends one node holding its
//! output and whatever forward context its backward rule needs. A single
//! [`Tape::backward`] call from a scalar fills gradients for every tracked
//! ancestor. Tapes are meant to be built per forward pass and dropped after
//! the backward sweep.
//!
//! FLOP counting convention used by [`Tape::flops`]:
//! - `matmul` `m×k · k×n`: `2·m·k·n`; `linear` `in → out`: `2·in·out` per row
//!   (bias adds are not counted)
//! - `conv2d`: `2·kh·kw·Cin` per output element
//! - elementwise ops and reductions: one per element; `softmax`: three per element
//! - `maxpool2d`: `window²` per output element
//! - `reshape`, `concat`, slicing: free

mod error;
pub mod gradcheck;
mod kernels;
mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use kernels::SOBEL_X;
pub use ops::concat;
pub use optim::Adam;
pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Number of scalar parameters in `params`.
pub fn count_params(params: &ParamSet) -> usize {
    params.count()
}

/// FLOPs recorded while running `forward` on a fresh tape.
pub fn count_flops<F>(forward: F) -> Result<u64>
where
    F: for<'t> FnOnce(&'t Tape) -> Result<()>,
{
    let tape = Tape::new();
    forward(&tape)?;
    Ok(tape.flops())
}
