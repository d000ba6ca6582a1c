//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every forward operation appends one record to a [`Tape`]; calling
//! [`Tape::backward`] replays the records in reverse and accumulates
//! adjoints. The walk is strictly sequential and allocation patterns are
//! fixed by the recorded order, so gradients are bitwise reproducible
//! across runs for identical inputs.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, ValueId};
pub use tensor::Tensor;
