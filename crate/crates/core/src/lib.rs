//! Multi-agent spatial transformer: a translation-invariant attention policy
//! for decentralized multi-robot control, with the environments, experts and
//! imitation-learning loop used to train it.

// `!(x > 0.0)` is how parameter checks reject NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod checks;
pub mod comm;
pub mod coverage;
pub mod dan;
pub mod error;
pub mod imitation;
pub mod kernel;
pub mod lsap;
pub mod net;
pub mod posenc;
pub mod rollout;
pub mod weights;

pub use error::{MastError, Result};
