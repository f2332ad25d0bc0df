//! Aggregate-query model and JSON parsing.
//!
//! A query names one specific node (resolved by name + type), a hop sequence
//! whose final hop carries the target types, and an aggregate function.
//! Composite shapes (star, cycle, flower) are written as explicit sets of
//! simple or chain subqueries sharing the target type set; the engine
//! evaluates them by decomposition and sample intersection.
//!
//! Parsing is two-phase: serde handles the schema (unknown or mistyped fields
//! are schema errors) and `validate` enforces the semantic invariants.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Simple,
    Chain,
    Star,
    Cycle,
    Flower,
}

impl Shape {
    pub fn is_composite(self) -> bool {
        matches!(self, Shape::Star | Shape::Cycle | Shape::Flower)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateFunc {
    Count,
    Sum,
    Avg,
    Max,
    Min,
}

impl AggregateFunc {
    pub fn needs_attr(self) -> bool {
        !matches!(self, AggregateFunc::Count)
    }

    /// MAX/MIN get best-effort extremes, no confidence interval.
    pub fn is_extreme(self) -> bool {
        matches!(self, AggregateFunc::Max | AggregateFunc::Min)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecificNode {
    pub name: String,
    pub types: BTreeSet<String>,
}

/// One hop: the types of the node it lands on and the predicate that the
/// query edge carries. The final hop's types are the target types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hop {
    pub types: BTreeSet<String>,
    pub predicate: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryGraph {
    pub specific: SpecificNode,
    pub hops: Vec<Hop>,
}

impl QueryGraph {
    pub fn is_simple(&self) -> bool {
        self.hops.len() == 1
    }

    pub fn target_types(&self) -> &BTreeSet<String> {
        &self.hops.last().expect("validated: hops non-empty").types
    }

    /// The single query predicate; meaningful for one-hop queries.
    pub fn predicate(&self) -> &str {
        &self.hops.last().expect("validated: hops non-empty").predicate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub attr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl FilterSpec {
    /// A missing attribute never satisfies a filter.
    pub fn accepts(&self, value: Option<f64>) -> bool {
        match value {
            None => false,
            Some(v) => {
                v >= self.lower.unwrap_or(f64::NEG_INFINITY)
                    && v <= self.upper.unwrap_or(f64::INFINITY)
            }
        }
    }
}

/// Grouping on the target node's attribute: categorical when `buckets` is
/// absent, otherwise bucketed by the ascending edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub attr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerBackend {
    Categorical,
    Walk,
}

/// Engine tuning knobs; every field has a default so query documents only
/// override what they need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Relative error bound e_b.
    pub e_b: f64,
    /// 1 − confidence level.
    pub alpha: f64,
    /// Similarity threshold τ.
    pub tau: f64,
    /// Hop bound for the n-bounded region.
    pub n: usize,
    /// Repeat factor: distinct paths examined per validated answer.
    pub r: usize,
    /// Desired sample ratio: N = λ·|A|.
    pub lambda: f64,
    /// Small-sample count.
    pub t: usize,
    /// Small-sample scale factor: |S_i| = ⌈N^m⌉.
    pub m: f64,
    /// Bootstrap resamples per small sample.
    #[serde(rename = "B")]
    pub bootstrap_resamples: usize,
    /// Synthetic anchor self-loop weight, pre-normalization.
    pub p_ss: f64,
    /// Similarity clamp floor.
    pub eps_sim: f64,
    /// Power-iteration L1 convergence tolerance.
    pub pi_tol: f64,
    /// Power-iteration step cap.
    pub max_walk_steps: usize,
    /// Sampling-loop round cap.
    pub max_iterations: usize,
    pub seed: u64,
    /// Per-round growth for MAX/MIN, as a fraction of |A|.
    pub extreme_sample_ratio: f64,
    pub sampler_backend: SamplerBackend,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            e_b: 0.01,
            alpha: 0.05,
            tau: 0.85,
            n: 3,
            r: 3,
            lambda: 0.3,
            t: 3,
            m: 0.6,
            bootstrap_resamples: 100,
            p_ss: 0.001,
            eps_sim: 1e-4,
            pi_tol: 1e-6,
            max_walk_steps: 500,
            max_iterations: 10,
            seed: 0,
            extreme_sample_ratio: 0.05,
            sampler_backend: SamplerBackend::Categorical,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvariantViolation(msg));
        if !(self.e_b > 0.0) {
            return fail(format!("e_b must be > 0, got {}", self.e_b));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if !(self.m >= 0.5 && self.m <= 1.0) {
            return fail(format!("m must be in [0.5, 1], got {}", self.m));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return fail(format!("lambda must be in (0, 1], got {}", self.lambda));
        }
        if self.t < 1 {
            return fail("t must be >= 1".into());
        }
        if self.bootstrap_resamples < 2 {
            return fail("B must be >= 2".into());
        }
        if self.n < 1 {
            return fail("n must be >= 1".into());
        }
        if self.r < 1 {
            return fail("r must be >= 1".into());
        }
        if !(self.p_ss > 0.0) {
            return fail(format!("p_ss must be > 0, got {}", self.p_ss));
        }
        if !(self.eps_sim > 0.0 && self.eps_sim <= 1.0) {
            return fail(format!("eps_sim must be in (0, 1], got {}", self.eps_sim));
        }
        if !(self.pi_tol > 0.0) {
            return fail(format!("pi_tol must be > 0, got {}", self.pi_tol));
        }
        if self.max_walk_steps < 1 {
            return fail("max_walk_steps must be >= 1".into());
        }
        if self.max_iterations < 1 {
            return fail("max_iterations must be >= 1".into());
        }
        if !(self.extreme_sample_ratio > 0.0) {
            return fail("extreme_sample_ratio must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateQuery {
    pub shape: Shape,
    pub subqueries: Vec<QueryGraph>,
    pub func: AggregateFunc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attr: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filters: Vec<FilterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_by: Option<GroupSpec>,
    #[serde(default)]
    pub config: EngineConfig,
}

impl AggregateQuery {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvariantViolation(msg));
        self.config.validate()?;

        if self.subqueries.is_empty() {
            return fail("query needs at least one subquery".into());
        }
        match self.shape {
            Shape::Simple => {
                if self.subqueries.len() != 1 || !self.subqueries[0].is_simple() {
                    return fail("simple shape requires exactly one single-hop subquery".into());
                }
            }
            Shape::Chain => {
                if self.subqueries.len() != 1 {
                    return fail("chain shape requires exactly one subquery".into());
                }
            }
            _ => {
                if self.subqueries.len() < 2 {
                    return fail(format!(
                        "{:?} shape requires at least two subqueries",
                        self.shape
                    ));
                }
            }
        }
        for (i, sub) in self.subqueries.iter().enumerate() {
            if sub.specific.name.is_empty() {
                return fail(format!("subquery {i}: specific node name is empty"));
            }
            if sub.specific.types.is_empty() {
                return fail(format!("subquery {i}: specific node has no types"));
            }
            if sub.hops.is_empty() {
                return fail(format!("subquery {i}: no hops"));
            }
            for (h, hop) in sub.hops.iter().enumerate() {
                if hop.types.is_empty() {
                    return fail(format!("subquery {i} hop {h}: empty type set"));
                }
                if hop.predicate.is_empty() {
                    return fail(format!("subquery {i} hop {h}: empty predicate"));
                }
            }
        }
        let target = self.subqueries[0].target_types();
        for (i, sub) in self.subqueries.iter().enumerate().skip(1) {
            if sub.target_types() != target {
                return fail(format!(
                    "subquery {i} target types {:?} differ from {:?}; all subqueries must share one target",
                    sub.target_types(),
                    target
                ));
            }
        }

        if self.func.needs_attr() && self.attr.is_none() {
            return fail(format!("{:?} requires an attr", self.func));
        }
        for f in &self.filters {
            if f.attr.is_empty() {
                return fail("filter attr is empty".into());
            }
            if let (Some(lo), Some(hi)) = (f.lower, f.upper) {
                if lo > hi {
                    return fail(format!("filter on `{}`: lower {lo} > upper {hi}", f.attr));
                }
            }
        }
        if let Some(group) = &self.group_by {
            if group.attr.is_empty() {
                return fail("group_by attr is empty".into());
            }
            if let Some(edges) = &group.buckets {
                if edges.len() < 2 {
                    return fail("bucketed group_by needs at least two edges".into());
                }
                if edges.windows(2).any(|w| w[0] >= w[1]) {
                    return fail("bucket edges must be strictly ascending".into());
                }
            }
        }
        Ok(())
    }
}

/// Group key for an attribute value: its exact printed value when
/// categorical, the bucket label when bucketed. Buckets are half-open
/// `[lo, hi)` except the last, which also takes its upper edge; values
/// outside every bucket get no key.
pub fn group_key(spec: &GroupSpec, value: f64) -> Option<String> {
    match &spec.buckets {
        None => Some(format!("{value}")),
        Some(edges) => {
            let last = edges.len() - 2;
            for (i, w) in edges.windows(2).enumerate() {
                let in_bucket = value >= w[0] && (value < w[1] || (i == last && value == w[1]));
                if in_bucket {
                    return Some(format!("{}-{}", w[0], w[1]));
                }
            }
            None
        }
    }
}

/// Parses and validates a query document.
pub fn parse_query(json_text: &str) -> Result<AggregateQuery> {
    let query: AggregateQuery =
        serde_json::from_str(json_text).map_err(|e| Error::SchemaError(e.to_string()))?;
    query.validate()?;
    Ok(query)
}

/// Splits a composite query into independently runnable subqueries;
/// identity for simple and chain shapes.
pub fn decompose(q: &AggregateQuery) -> Vec<QueryGraph> {
    q.subqueries.clone()
}
