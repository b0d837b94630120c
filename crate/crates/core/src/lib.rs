//! Two-stage cold-start retrieval for social video platforms.
//!
//! A freshly uploaded item is first pushed to the followers of its creator
//! ([`ripple::stage1_targets`]). Once early engagements arrive, a requesting
//! user's nearest neighbours in a learned user-embedding space
//! ([`annindex::UserIndex`]) are looked up and the cold items they engaged
//! with recently ([`engagement::EngagementBuffer`]) are scored and returned
//! ([`ripple::stage2_candidates`]).
//!
//! The crate also carries the two-tower trainer that produces the user
//! embeddings, the comparison retrievers, a synthetic world generator and the
//! offline recall harness.

pub mod annindex;
pub mod baselines;
pub mod catalog;
pub mod embedfile;
pub mod engagement;
pub mod error;
pub mod evalharness;
pub mod ids;
pub mod ripple;
pub mod simgen;
pub mod snapshot;
pub mod socialgraph;
pub mod twotower;

pub use error::{Error, Result};
pub use ids::{ItemId, Timestamp, UserId, HOUR};
