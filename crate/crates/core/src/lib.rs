//! Probabilistic partial label learning.
//!
//! Each instance carries a candidate set `S` of labels, exactly one of which
//! is correct. The network emits one logit per class, each read as an
//! independent Bernoulli probability `p_i = σ(r_i)`, and training maximizes
//! the probability of the event "at least one class inside `S` fires and no
//! class outside `S` fires".
//!
//! Modules:
//!
//! - [`loss`]: probabilities, costs and gradients of that event, including the
//!   numerically stable logit-space evaluation.
//! - [`oracles`]: brute-force enumeration, finite differences and a
//!   double-double reference cost used to check [`loss`].
//! - [`gumbel`]: Gumbel-difference logit noise and its annealing schedule.
//! - [`nn`]: a small dense network with batch normalization and SGD.
//! - [`datasets`]: IDX and PLL-CSV I/O plus candidate-set corruption.
//! - [`metrics`]: accuracy, confusion matrices and per-class sensitivity.
//! - [`gradcheck`]: the oracle suites bundled as runnable reports.

pub mod datasets;
pub mod gradcheck;
pub mod gumbel;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod oracles;

pub use loss::{CandidateSet, LogitVector, ProbabilityVector, StableConstants};
