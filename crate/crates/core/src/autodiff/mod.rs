//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] borrows a [`ParamStore`], records primitive applications as
//! they are evaluated, and [`Tape::backward`] replays them in reverse to
//! produce a [`Gradients`] entry for every parameter in the store.

mod array;
mod gradcheck;
mod tape;

pub use array::Array;
pub use gradcheck::{check_unary, finite_diff_check, relative_error, GradCheckReport};
pub use tape::{Gradients, Op, ParamId, ParamStore, Tape, Var, ACOS_CLAMP_EPS};
