//! Primitive differentiable ops, implemented as methods on [`Tape`].
//!
//! Each op computes its forward value eagerly and registers a backward
//! function mapping the output gradient to one gradient per input. Reductions
//! keep a fixed, ascending element order so results are bit-reproducible
//! across runs and thread counts.

mod attention;
mod conv;
mod linear;
mod norm;
mod pointwise;
mod reduce;
mod resize;

pub use attention::attention_probs;
pub use conv::conv2d_reference;

use crate::tensor::tape::Tape;
use crate::tensor::Float;

/// Normalization epsilon used by every norm in the crate.
pub const NORM_EPS: f64 = 1e-5;

impl<E: Float> Tape<E> {
    pub(crate) fn eps() -> E {
        E::from_f64(NORM_EPS)
    }
}
