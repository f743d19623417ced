//! Topic-compositional neural language model.
//!
//! A Gaussian neural topic model infers a document topic mixture `t` from
//! the bag-of-words of a paragraph; `t` then composes the weights of a
//! factored LSTM language model, `W(t) = W_a · diag(W_b t) · W_c`. Both are
//! trained jointly on a variational lower bound plus a topic diversity
//! term.

pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod corpus;
pub mod ntm;
pub mod nlm;
pub mod model;
pub mod eval;
pub mod trainer;
pub mod synthetic;
pub mod dataset;
pub mod config;
pub mod generator;
pub mod compare;
pub mod cli;

mod init;
