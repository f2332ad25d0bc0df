//! Approximate aggregate queries (COUNT, SUM, AVG, MAX, MIN) over knowledge
//! graphs, answered by semantic random-walk sampling instead of exhaustive
//! matching.
//!
//! ## Pipeline
//!
//! 1. [`graph`] loads the TSV-encoded graph and cuts the n-bounded region
//!    around the query's specific node.
//! 2. [`semantics`] scores how well an edge path matches the query predicate
//!    (geometric mean of predicate similarities).
//! 3. [`sampler`] builds a similarity-weighted transition model over the
//!    region, finds its stationary distribution by power iteration, and draws
//!    candidate answers with known inclusion probabilities.
//! 4. [`estimate`] validates sampled answers by greedy path search and forms
//!    inverse-probability point estimates.
//! 5. [`accuracy`] bootstraps a margin of error over little samples, grows
//!    the sample until the requested relative error bound is met, and
//!    supports interactive tightening of that bound.
//!
//! [`oracle`] is the exact enumeration baseline used for ground truth in
//! tests and for the `exact` CLI subcommand; [`synth`] generates seeded
//! synthetic graphs with planted, oracle-free ground truth.

pub mod accuracy;
pub mod error;
pub mod estimate;
pub mod graph;
pub mod oracle;
pub mod query;
pub mod rng;
pub mod sampler;
pub mod semantics;
pub mod synth;

pub use error::{Error, Result};
