//! Exact enumeration baseline.
//!
//! Deliberately exponential: every simple path of length ≤ n from the
//! mapping node is enumerated, each candidate keeps its true maximum score,
//! and the aggregate is computed over the exact correct-answer set. This is
//! the ground truth the sampling pipeline is measured against, and the
//! engine behind the `exact` CLI subcommand. Desk scale only (n ≤ 3,
//! graphs up to ~10⁴ nodes).
//!
//! Chains compose stages: a target is correct when some intermediate chain
//! reaches it with every stage score ≥ τ, so a chain answer's recorded
//! similarity is the max-over-routes of the minimum stage score. Composite
//! shapes intersect the per-subquery answer sets the same way.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{bounded_region, resolve_specific_node, BoundedRegion, KnowledgeGraph, NodeId};
use crate::query::{
    decompose, group_key, AggregateFunc, AggregateQuery, EngineConfig, FilterSpec, GroupSpec,
    QueryGraph,
};
use crate::semantics::{better_witness, MatchPath, ScoredAnswer, SimCache, SimilarityProvider};

/// All candidates of one query with exact similarities.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub region: BoundedRegion,
    /// Every candidate answer, ascending by node id, with its true maximum
    /// similarity over all simple paths of length ≤ n.
    pub scored: Vec<ScoredAnswer>,
    /// The subset with similarity ≥ τ, same order.
    pub correct: Vec<ScoredAnswer>,
    /// Threshold the correct set was cut at.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupAggregate {
    pub value: f64,
    pub count: usize,
}

/// Exact aggregate V = f_a(A⁺).
#[derive(Debug, Clone, Serialize)]
pub struct ExactResult {
    pub value: f64,
    pub answer_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_group: Option<BTreeMap<String, GroupAggregate>>,
}

/// Enumerates every simple path of length ≤ cfg.n from `start`, keeping per
/// candidate the best (score, then shorter, then lexicographic edge ids)
/// witness. Paths of length ≤ n cannot leave the n-bounded region.
fn enumerate_from(
    g: &KnowledgeGraph,
    p: &SimilarityProvider,
    start: NodeId,
    predicate: &str,
    target_types: &std::collections::BTreeSet<String>,
    cfg: &EngineConfig,
) -> Result<CandidateSet> {
    let region = bounded_region(g, start, cfg.n, target_types)?;
    let mut cache = SimCache::new(p, predicate, cfg.eps_sim);
    let mut best: BTreeMap<NodeId, MatchPath> = BTreeMap::new();

    let mut on_path = vec![start];
    let mut edge_path = Vec::new();
    dfs(
        g,
        &mut cache,
        start,
        cfg.n,
        0.0,
        &mut on_path,
        &mut edge_path,
        target_types,
        start,
        &mut best,
    )?;

    let scored: Vec<ScoredAnswer> = best
        .into_iter()
        .map(|(answer, path)| ScoredAnswer {
            answer,
            similarity: path.score,
            best_path: path,
        })
        .collect();
    let correct = scored
        .iter()
        .filter(|sa| sa.similarity >= cfg.tau)
        .cloned()
        .collect();
    Ok(CandidateSet {
        region,
        scored,
        correct,
        tau: cfg.tau,
    })
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    g: &KnowledgeGraph,
    cache: &mut SimCache,
    u: NodeId,
    depth_left: usize,
    log_sum: f64,
    on_path: &mut Vec<NodeId>,
    edge_path: &mut Vec<crate::graph::EdgeId>,
    target_types: &std::collections::BTreeSet<String>,
    anchor: NodeId,
    best: &mut BTreeMap<NodeId, MatchPath>,
) -> Result<()> {
    if depth_left == 0 {
        return Ok(());
    }
    for &(e, v) in g.neighbors(u) {
        if on_path.contains(&v) {
            continue;
        }
        let log_sim = cache.similarity_to_query(&g.edge(e).predicate)?.ln();
        let next_log_sum = log_sum + log_sim;
        edge_path.push(e);
        on_path.push(v);

        if v != anchor && !g.node(v).types.is_disjoint(target_types) {
            let score = (next_log_sum / edge_path.len() as f64).exp();
            let candidate = MatchPath {
                answer: v,
                edge_ids: edge_path.clone(),
                score,
            };
            match best.get(&v) {
                Some(current) if !better_witness(&candidate, current) => {}
                _ => {
                    best.insert(v, candidate);
                }
            }
        }

        dfs(
            g,
            cache,
            v,
            depth_left - 1,
            next_log_sum,
            on_path,
            edge_path,
            target_types,
            anchor,
            best,
        )?;
        on_path.pop();
        edge_path.pop();
    }
    Ok(())
}

/// Exact candidate scoring for a simple (single-hop) query.
pub fn enumerate_exact(
    g: &KnowledgeGraph,
    p: &SimilarityProvider,
    q: &QueryGraph,
    cfg: &EngineConfig,
) -> Result<CandidateSet> {
    if !q.is_simple() {
        return Err(Error::InvariantViolation(
            "enumerate_exact requires a single-hop query; use exact_candidates for chains".into(),
        ));
    }
    let anchor = resolve_specific_node(g, &q.specific.name, &q.specific.types)?;
    enumerate_from(g, p, anchor, q.predicate(), q.target_types(), cfg)
}

/// Exact candidate scoring for one subquery of any hop count.
pub fn exact_candidates(
    g: &KnowledgeGraph,
    p: &SimilarityProvider,
    q: &QueryGraph,
    cfg: &EngineConfig,
) -> Result<CandidateSet> {
    let anchor = resolve_specific_node(g, &q.specific.name, &q.specific.types)?;
    if q.is_simple() {
        return enumerate_from(g, p, anchor, q.predicate(), q.target_types(), cfg);
    }

    // Stage DP: frontier holds per node the best composed (min over stages)
    // score and the stitched witness. Stage 1's region is the one reported.
    let mut first_region = None;
    let mut frontier: BTreeMap<NodeId, (f64, Vec<crate::graph::EdgeId>)> = BTreeMap::new();
    frontier.insert(anchor, (f64::INFINITY, Vec::new()));

    for (k, hop) in q.hops.iter().enumerate() {
        let mut next: BTreeMap<NodeId, (f64, Vec<crate::graph::EdgeId>)> = BTreeMap::new();
        for (&u, &(score_u, ref path_u)) in &frontier {
            let stage = enumerate_from(g, p, u, &hop.predicate, &hop.types, cfg)?;
            if first_region.is_none() {
                first_region = Some(stage.region.clone());
            }
            for sa in &stage.scored {
                if sa.answer == anchor {
                    continue;
                }
                let composed = score_u.min(sa.similarity);
                let mut stitched = path_u.clone();
                stitched.extend_from_slice(&sa.best_path.edge_ids);
                let replace = match next.get(&sa.answer) {
                    None => true,
                    Some((cur_score, cur_path)) => {
                        composed > *cur_score
                            || (composed == *cur_score
                                && (stitched.len() < cur_path.len()
                                    || (stitched.len() == cur_path.len() && stitched < *cur_path)))
                    }
                };
                if replace {
                    next.insert(sa.answer, (composed, stitched));
                }
            }
        }
        frontier = next;
        if frontier.is_empty() && k + 1 < q.hops.len() {
            break;
        }
    }

    let scored: Vec<ScoredAnswer> = frontier
        .into_iter()
        .map(|(answer, (score, edge_ids))| ScoredAnswer {
            answer,
            similarity: score,
            best_path: MatchPath {
                answer,
                edge_ids,
                score,
            },
        })
        .collect();
    let correct = scored
        .iter()
        .filter(|sa| sa.similarity >= cfg.tau)
        .cloned()
        .collect();
    Ok(CandidateSet {
        region: match first_region {
            Some(r) => r,
            None => bounded_region(g, anchor, cfg.n, &q.hops[0].types)?,
        },
        scored,
        correct,
        tau: cfg.tau,
    })
}

/// Exact candidates for a whole query: subqueries are intersected, an
/// answer's similarity being the minimum over subqueries.
pub fn exact_candidates_for_query(
    g: &KnowledgeGraph,
    p: &SimilarityProvider,
    aq: &AggregateQuery,
) -> Result<CandidateSet> {
    let parts = decompose(aq);
    let mut sets: Vec<CandidateSet> = parts
        .iter()
        .map(|q| exact_candidates(g, p, q, &aq.config))
        .collect::<Result<_>>()?;
    if sets.len() == 1 {
        return Ok(sets.pop().unwrap());
    }

    let (first, rest) = sets.split_first().unwrap();
    let mut scored = Vec::new();
    'answers: for sa in &first.scored {
        let mut best = sa.clone();
        for other in rest {
            match other.scored.iter().find(|o| o.answer == sa.answer) {
                None => continue 'answers,
                Some(o) => {
                    if o.similarity < best.similarity {
                        best = o.clone();
                    }
                }
            }
        }
        scored.push(best);
    }
    let correct = scored
        .iter()
        .filter(|sa| sa.similarity >= aq.config.tau)
        .cloned()
        .collect();
    Ok(CandidateSet {
        region: sets[0].region.clone(),
        scored,
        correct,
        tau: aq.config.tau,
    })
}

fn attr_value(g: &KnowledgeGraph, id: NodeId, attr: &str) -> Option<f64> {
    g.node(id).attrs.get(attr).copied()
}

fn passes_filters(g: &KnowledgeGraph, id: NodeId, filters: &[FilterSpec]) -> bool {
    filters.iter().all(|f| f.accepts(attr_value(g, id, &f.attr)))
}

fn aggregate_values(func: AggregateFunc, values: &[f64], count_all: usize) -> Result<f64> {
    match func {
        AggregateFunc::Count => Ok(count_all as f64),
        AggregateFunc::Sum => Ok(values.iter().sum()),
        AggregateFunc::Avg | AggregateFunc::Max | AggregateFunc::Min => {
            if values.is_empty() {
                return Err(Error::EmptyAnswerSet(format!("{func:?}")));
            }
            Ok(match func {
                AggregateFunc::Avg => values.iter().sum::<f64>() / values.len() as f64,
                AggregateFunc::Max => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                _ => values.iter().cloned().fold(f64::INFINITY, f64::min),
            })
        }
    }
}

/// Applies filters then the aggregate over the correct set; grouped when a
/// group spec is given. Answers missing the aggregate attribute are dropped
/// from the SUM/AVG/MAX/MIN basis; COUNT keeps them.
pub fn exact_aggregate(
    g: &KnowledgeGraph,
    c: &CandidateSet,
    func: AggregateFunc,
    attr: Option<&str>,
    filters: &[FilterSpec],
    group_by: Option<&GroupSpec>,
) -> Result<ExactResult> {
    if func.needs_attr() && attr.is_none() {
        return Err(Error::InvariantViolation(format!("{func:?} requires an attr")));
    }
    let answers: Vec<NodeId> = c
        .correct
        .iter()
        .map(|sa| sa.answer)
        .filter(|&id| passes_filters(g, id, filters))
        .collect();

    let basis = |ids: &[NodeId]| -> Vec<f64> {
        match attr {
            None => Vec::new(),
            Some(a) => ids.iter().filter_map(|&id| attr_value(g, id, a)).collect(),
        }
    };

    let value = aggregate_values(func, &basis(&answers), answers.len())?;

    let per_group = match group_by {
        None => None,
        Some(spec) => {
            let mut groups: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
            for &id in &answers {
                let Some(v) = attr_value(g, id, &spec.attr) else {
                    continue;
                };
                let Some(key) = group_key(spec, v) else {
                    continue;
                };
                groups.entry(key).or_default().push(id);
            }
            let mut out = BTreeMap::new();
            for (key, members) in groups {
                let values = basis(&members);
                // A group whose members all miss the aggregate attribute has
                // no defined AVG/MAX/MIN; it is omitted rather than fatal.
                match aggregate_values(func, &values, members.len()) {
                    Ok(v) => {
                        out.insert(
                            key,
                            GroupAggregate {
                                value: v,
                                count: members.len(),
                            },
                        );
                    }
                    Err(Error::EmptyAnswerSet(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Some(out)
        }
    };

    Ok(ExactResult {
        value,
        answer_count: answers.len(),
        per_group,
    })
}
