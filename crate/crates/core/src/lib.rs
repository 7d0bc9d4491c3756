//! Discrete-event simulation of cooperative content caching at ground anchors
//! served by a fleet of message ferries.
//!
//! Anchors learn what to cache with a multi-armed bandit, federate their
//! learning through knowledge carried by the ferries, and are compared
//! against a benchmark with full knowledge of demand.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod demand;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod federation;
pub mod ferry;
pub mod metrics;
pub mod oracle;
pub mod sim;

pub use error::{Error, Result};

use demand::ContentId;

/// Sorts ids by descending score, breaking ties by ascending id.
pub(crate) fn sort_by_score_desc(ids: &mut [ContentId], score: impl Fn(ContentId) -> f64) {
    ids.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
}
