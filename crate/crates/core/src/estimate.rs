//! Sample validation and inverse-probability point estimation.
//!
//! Sampling alone cannot tell a correct answer from a well-connected
//! impostor, so every drawn answer is checked by a greedy best-first path
//! search before it enters an estimate. The search expands partial paths in
//! order of the head node's stationary probability and records distinct
//! simple paths to the answer until `r` are found or the frontier runs out;
//! the answer is accepted iff the best found path scores at least τ. A found
//! path is a real path, so its score never exceeds the true similarity:
//! acceptance implies true similarity ≥ τ and false positives are
//! impossible. False negatives shrink as `r` grows.
//!
//! Point estimates divide inverse-probability sums by the full drawn size,
//! not the accepted count: a rejected draw contributes zero, which is what
//! keeps COUNT and SUM unbiased for the correct-answer totals when some
//! candidates are incorrect.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::graph::{BoundedRegion, EdgeId, KnowledgeGraph, NodeId};
use crate::query::{AggregateFunc, EngineConfig, FilterSpec, GroupSpec};
use crate::sampler::{Sample, StationaryDistribution};
use crate::semantics::{SimCache, SimilarityProvider};

/// One accepted draw: the answer, its inclusion probability, the similarity
/// the validator established, and the node's attribute values.
#[derive(Debug, Clone)]
pub struct ValidatedEntry {
    pub answer: NodeId,
    pub prob: f64,
    pub similarity: f64,
    pub attrs: BTreeMap<String, f64>,
}

/// The surviving part of a sample, plus rejection diagnostics.
#[derive(Debug, Clone, Default)]
pub struct ValidatedSample {
    pub accepted: Vec<ValidatedEntry>,
    /// Draws rejected for similarity below τ or a failed filter.
    pub rejected_count: usize,
    /// Paths to queried answers the validator recorded.
    pub validation_paths_examined: usize,
}

impl ValidatedSample {
    /// Size of the originating sample; the estimator divisor.
    pub fn drawn_size(&self) -> usize {
        self.accepted.len() + self.rejected_count
    }
}

/// A partial path in the best-first frontier. Higher priority = higher head
/// π, then lexicographically smaller head id, then smaller edge sequence.
struct Pending<'a> {
    pi: f64,
    head_id: &'a str,
    head: NodeId,
    nodes: Vec<NodeId>,
    edges: Vec<EdgeId>,
    log_sum: f64,
}

impl PartialEq for Pending<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending<'_> {}
impl PartialOrd for Pending<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.pi
            .total_cmp(&other.pi)
            .then_with(|| other.head_id.cmp(self.head_id))
            .then_with(|| other.edges.cmp(&self.edges))
    }
}

/// Greedy path validator for one anchor/predicate context, memoized per
/// distinct answer so duplicate draws share a single search. Owns its region
/// and stationary snapshot so it can live beside the sampler that built them.
pub struct Validator<'a> {
    g: &'a KnowledgeGraph,
    region: BoundedRegion,
    sd: StationaryDistribution,
    cache: SimCache<'a>,
    tau: f64,
    r: usize,
    hop_limit: usize,
    memo: HashMap<NodeId, (bool, f64)>,
    paths_examined: usize,
}

impl<'a> Validator<'a> {
    pub fn new(
        g: &'a KnowledgeGraph,
        p: &'a SimilarityProvider,
        region: &BoundedRegion,
        sd: &StationaryDistribution,
        query_predicate: &str,
        cfg: &EngineConfig,
    ) -> Self {
        Validator {
            g,
            region: region.clone(),
            sd: sd.clone(),
            cache: SimCache::new(p, query_predicate, cfg.eps_sim),
            tau: cfg.tau,
            r: cfg.r,
            hop_limit: cfg.n,
            memo: HashMap::new(),
            paths_examined: 0,
        }
    }

    pub fn paths_examined(&self) -> usize {
        self.paths_examined
    }

    /// Returns (accepted, best similarity found). Memoized.
    pub fn validate(&mut self, answer: NodeId) -> Result<(bool, f64)> {
        if let Some(&hit) = self.memo.get(&answer) {
            return Ok(hit);
        }
        let result = self.search(answer)?;
        self.memo.insert(answer, result);
        Ok(result)
    }

    fn search(&mut self, answer: NodeId) -> Result<(bool, f64)> {
        let anchor = self.region.anchor;
        if answer == anchor || !self.region.contains(answer) {
            return Ok((false, 0.0));
        }

        let mut frontier = BinaryHeap::new();
        frontier.push(Pending {
            pi: self.sd.pi_of(anchor),
            head_id: &self.g.node(anchor).id,
            head: anchor,
            nodes: vec![anchor],
            edges: Vec::new(),
            log_sum: 0.0,
        });

        let mut found = 0usize;
        let mut best = 0.0f64;
        while let Some(path) = frontier.pop() {
            if path.head == answer {
                // A complete path to the answer. Extensions can never
                // revisit it, so the path is recorded and dropped.
                found += 1;
                self.paths_examined += 1;
                let score = (path.log_sum / path.edges.len() as f64).exp();
                best = best.max(score);
                if found >= self.r {
                    break;
                }
                continue;
            }
            if path.edges.len() >= self.hop_limit {
                continue;
            }
            for &(e, v) in self.g.neighbors(path.head) {
                if !self.region.contains(v) || path.nodes.contains(&v) {
                    continue;
                }
                let sim = self.cache.similarity_to_query(&self.g.edge(e).predicate)?;
                let mut nodes = path.nodes.clone();
                nodes.push(v);
                let mut edges = path.edges.clone();
                edges.push(e);
                frontier.push(Pending {
                    pi: self.sd.pi_of(v),
                    head_id: &self.g.node(v).id,
                    head: v,
                    nodes,
                    edges,
                    log_sum: path.log_sum + sim.ln(),
                });
            }
        }

        Ok((best >= self.tau, best))
    }
}

/// One-shot validation of a single answer.
pub fn validate_answer(
    g: &KnowledgeGraph,
    p: &SimilarityProvider,
    region: &BoundedRegion,
    query_predicate: &str,
    anchor: NodeId,
    answer: NodeId,
    sd: &StationaryDistribution,
    cfg: &EngineConfig,
) -> Result<(bool, f64)> {
    debug_assert_eq!(anchor, region.anchor);
    Validator::new(g, p, region, sd, query_predicate, cfg).validate(answer)
}

/// Validates every draw in a sample: path check first, then attribute
/// filters. Duplicates of an accepted answer all survive with their probs.
pub fn validate_sample(
    s: &Sample,
    filters: &[FilterSpec],
    g: &KnowledgeGraph,
    validator: &mut Validator<'_>,
) -> Result<ValidatedSample> {
    let before = validator.paths_examined();
    let mut accepted = Vec::new();
    let mut rejected_count = 0usize;
    for entry in &s.entries {
        let (ok, similarity) = validator.validate(entry.answer)?;
        let node = g.node(entry.answer);
        let passes = ok
            && filters
                .iter()
                .all(|f| f.accepts(node.attrs.get(&f.attr).copied()));
        if passes {
            accepted.push(ValidatedEntry {
                answer: entry.answer,
                prob: entry.prob,
                similarity,
                attrs: node.attrs.clone(),
            });
        } else {
            rejected_count += 1;
        }
    }
    Ok(ValidatedSample {
        accepted,
        rejected_count,
        validation_paths_examined: validator.paths_examined() - before,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GroupEstimate {
    pub value: f64,
    pub basis_size: usize,
}

/// An inverse-probability point estimate.
#[derive(Debug, Clone)]
pub struct PointEstimate {
    pub func: AggregateFunc,
    pub value: f64,
    /// Entries that fed the estimator: accepted draws for COUNT, accepted
    /// draws carrying the attribute for the rest.
    pub basis_size: usize,
    /// Accepted draws skipped because the aggregate attribute was absent.
    pub missing_attr_count: usize,
    pub per_group: Option<BTreeMap<String, GroupEstimate>>,
}

fn estimate_slice(
    entries: &[&ValidatedEntry],
    drawn_size: usize,
    func: AggregateFunc,
    attr: Option<&str>,
) -> Result<(f64, usize, usize)> {
    if func.needs_attr() && attr.is_none() {
        return Err(Error::InvariantViolation(format!(
            "{func:?} requires an aggregate attribute"
        )));
    }
    match func {
        AggregateFunc::Count => {
            let sum: f64 = entries.iter().map(|e| 1.0 / e.prob).sum();
            Ok((sum / drawn_size as f64, entries.len(), 0))
        }
        AggregateFunc::Sum | AggregateFunc::Avg | AggregateFunc::Max | AggregateFunc::Min => {
            let attr = attr.unwrap();
            let basis: Vec<(&&ValidatedEntry, f64)> = entries
                .iter()
                .filter_map(|e| e.attrs.get(attr).map(|&v| (e, v)))
                .collect();
            let missing = entries.len() - basis.len();
            match func {
                AggregateFunc::Sum => {
                    let sum: f64 = basis.iter().map(|(e, v)| v / e.prob).sum();
                    Ok((sum / drawn_size as f64, basis.len(), missing))
                }
                AggregateFunc::Avg => {
                    if basis.is_empty() {
                        return Err(Error::EmptyValidatedSample(
                            "AVG needs at least one accepted answer with the attribute".into(),
                        ));
                    }
                    let num: f64 = basis.iter().map(|(e, v)| v / e.prob).sum();
                    let den: f64 = basis.iter().map(|(e, _)| 1.0 / e.prob).sum();
                    Ok((num / den, basis.len(), missing))
                }
                AggregateFunc::Max | AggregateFunc::Min => {
                    if basis.is_empty() {
                        return Err(Error::EmptyValidatedSample(
                            "MAX/MIN need at least one accepted answer with the attribute".into(),
                        ));
                    }
                    let value = basis
                        .iter()
                        .map(|(_, v)| *v)
                        .fold(if func == AggregateFunc::Max {
                            f64::NEG_INFINITY
                        } else {
                            f64::INFINITY
                        }, |a, b| if func == AggregateFunc::Max { a.max(b) } else { a.min(b) });
                    Ok((value, basis.len(), missing))
                }
                AggregateFunc::Count => unreachable!(),
            }
        }
    }
}

/// Point estimate over the validated sample. COUNT and SUM divide by the
/// full drawn size; AVG is the self-normalizing ratio; MAX/MIN report the
/// extreme seen, with no unbiasedness claim.
pub fn estimate(vs: &ValidatedSample, func: AggregateFunc, attr: Option<&str>) -> Result<PointEstimate> {
    let entries: Vec<&ValidatedEntry> = vs.accepted.iter().collect();
    let (value, basis_size, missing_attr_count) =
        estimate_slice(&entries, vs.drawn_size(), func, attr)?;
    Ok(PointEstimate {
        func,
        value,
        basis_size,
        missing_attr_count,
        per_group: None,
    })
}

/// Grouped estimation: partitions accepted entries by the group key and
/// estimates each partition with the shared full-sample divisor, so
/// per-group COUNT and SUM estimates add up to the ungrouped ones. Entries
/// without the grouping attribute (or outside every bucket) are skipped;
/// groups whose estimate is undefined (empty AVG basis) are omitted.
pub fn estimate_grouped(
    vs: &ValidatedSample,
    func: AggregateFunc,
    attr: Option<&str>,
    gs: &GroupSpec,
) -> Result<PointEstimate> {
    let mut partitions: BTreeMap<String, Vec<&ValidatedEntry>> = BTreeMap::new();
    for e in &vs.accepted {
        let Some(&group_value) = e.attrs.get(&gs.attr) else {
            continue;
        };
        let Some(key) = crate::query::group_key(gs, group_value) else {
            continue;
        };
        partitions.entry(key).or_default().push(e);
    }

    let drawn = vs.drawn_size();
    let mut per_group = BTreeMap::new();
    for (key, entries) in &partitions {
        match estimate_slice(entries, drawn, func, attr) {
            Ok((value, basis_size, _)) => {
                per_group.insert(key.clone(), GroupEstimate { value, basis_size });
            }
            Err(Error::EmptyValidatedSample(_)) => continue,
            Err(e) => return Err(e),
        }
    }

    let mut overall = estimate(vs, func, attr)?;
    overall.per_group = Some(per_group);
    Ok(overall)
}
