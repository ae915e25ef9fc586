//! Fine-grained unlearning for small recurrent language models: synthetic
//! two-domain corpora, gradient probing, parameter localization, masked
//! ascent/descent and the baselines it is compared against.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod localize;
pub mod mask;
pub mod model;
pub mod probe;
pub mod unlearn;

pub use error::{Error, Result};
