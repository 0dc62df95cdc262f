//! Faithfulness and plausibility analyses over a frozen model.

pub mod attribution;
pub mod erasure;
pub mod metrics;
pub mod permutation;
pub mod pos;
pub mod rationale;
pub mod report;
