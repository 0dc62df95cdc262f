//! Diversity-driven and orthogonal LSTM attention classifiers, plus the
//! faithfulness battery used to judge their attention distributions.

// `!(x > 0.0)` is used on purpose to reject NaN; tape ops return `Result`
// and so cannot implement the std operator traits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod attention;
pub mod encoders;
pub mod error;
pub mod faithfulness;
pub mod geometry;
pub mod gradcheck;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
