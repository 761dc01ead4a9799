//! Multinomial multiple correspondence analysis (MMCA).
//!
//! A low-rank multinomial logit model for tables of categorical variables,
//! fitted by a majorization algorithm with guaranteed descent and a
//! nuclear-norm penalty on the interaction. Classical MCA is included as a
//! baseline, together with rank selection by a quantile universal threshold,
//! cell-wise cross-validation of the penalty, and biplot export.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod mca;
pub mod mmca;
pub mod selection;

pub use error::{Error, Result};
