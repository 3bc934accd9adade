//! Causal adjustment formulas, attention-as-optimum oracles and sliding
//! memory-bank estimators, each checked against exact brute-force oracles
//! on small discrete structural causal models.

pub mod backdoor;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod frontdoor;
pub mod membank;
pub mod numeric;
pub mod qp;
pub mod rng;
pub mod scm;

pub use error::{CeresError, Result};
pub use numeric::{Matrix, SimplexWeights, Vector};
