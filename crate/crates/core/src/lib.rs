//! Multi-class Condorcet jury analysis for majority-vote ensembles.
//!
//! The crate computes how often a plurality (or score-threshold) vote over
//! `n` classifiers recovers the true label when every classifier is uniformly
//! biased towards the correct alternative, both exactly and by seeded Monte
//! Carlo, and uses that prediction to test whether a real ensemble behaves as
//! if its members were independent.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
    }};
}

pub mod cli;
pub mod diagnose;
pub mod error;
pub mod exact;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod vote;

pub use error::{Error, Result};
pub use model::{AdvantageSequence, LabelSpace, UbtcaPmf};
pub use vote::{TiePolicy, VoteOutcome, VoteProfile};
