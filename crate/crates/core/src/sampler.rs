//! Semantic random-walk sampling.
//!
//! The walk lives on the n-bounded region around the mapping node. Each
//! node's outgoing probabilities are proportional to the similarity between
//! the edge predicate and the query predicate (Eq-style row normalization),
//! so the walker drifts toward semantically relevant neighborhoods. The
//! mapping node gets one synthetic self-loop of weight `p_ss` before
//! normalization: with every probability strictly positive inside the region,
//! the chain is irreducible, and the self-loop makes it aperiodic, so a
//! unique stationary distribution exists.
//!
//! The stationary distribution is found by power iteration. The update is
//! half-lazy, `π ← (π + πP)/2`, which has the same fixed point but also
//! converges on near-periodic chains (a two-node region oscillates for ~10⁴
//! plain steps before the 0.001 self-loop dampens it; the lazy form settles
//! in a handful). Convergence is still judged against the true model:
//! `‖πP − π‖₁ ≤ pi_tol`.
//!
//! Two draw backends exist. `categorical` draws i.i.d. directly from the
//! candidate distribution π′ and is the default: estimator guarantees assume
//! i.i.d. entries. `walk` simulates the walking-with-rejection policy and
//! collects candidate visits, whose step-to-step Markov correlation is the
//! documented deviation of that backend.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{bounded_region, resolve_specific_node, BoundedRegion, EdgeId, KnowledgeGraph, NodeId};
use crate::query::{EngineConfig, QueryGraph, SamplerBackend};
use crate::semantics::{SimCache, SimilarityProvider};

/// One outgoing transition. `edge` is `None` only for the synthetic anchor
/// self-loop, which exists in the model, never in the graph.
#[derive(Debug, Clone, Copy)]
pub struct TransitionEntry {
    pub neighbor: NodeId,
    pub edge: Option<EdgeId>,
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct TransitionModel {
    pub region: BoundedRegion,
    /// Row per non-isolated member; probabilities sum to 1 within 1e-12.
    pub rows: BTreeMap<NodeId, Vec<TransitionEntry>>,
    pub self_loop_at_anchor: bool,
    /// Members with no in-region edges, excluded from rows. Cannot occur for
    /// BFS-built regions except pathologically; kept as a guarded warning.
    pub isolated: Vec<NodeId>,
}

impl TransitionModel {
    pub fn row(&self, id: NodeId) -> Option<&[TransitionEntry]> {
        self.rows.get(&id).map(Vec::as_slice)
    }
}

/// Builds the per-row transition probabilities over the region.
pub fn build_transition_model(
    g: &KnowledgeGraph,
    p: &SimilarityProvider,
    region: &BoundedRegion,
    query_predicate: &str,
    cfg: &EngineConfig,
) -> Result<TransitionModel> {
    let mut cache = SimCache::new(p, query_predicate, cfg.eps_sim);
    let mut rows = BTreeMap::new();
    let mut isolated = Vec::new();

    for &u in &region.members {
        let mut weights: Vec<(NodeId, Option<EdgeId>, f64)> = Vec::new();
        for &(e, v) in g.neighbors(u) {
            if !region.contains(v) {
                continue;
            }
            let sim = cache.similarity_to_query(&g.edge(e).predicate)?;
            weights.push((v, Some(e), sim));
        }
        if u == region.anchor {
            weights.push((u, None, cfg.p_ss));
        }
        if weights.is_empty() {
            isolated.push(u);
            continue;
        }
        let z: f64 = weights.iter().map(|(_, _, w)| w).sum();
        let entries: Vec<TransitionEntry> = weights
            .into_iter()
            .map(|(neighbor, edge, w)| TransitionEntry {
                neighbor,
                edge,
                prob: w / z,
            })
            .collect();
        debug_assert!(entries.iter().all(|e| e.prob > 0.0));
        debug_assert!((entries.iter().map(|e| e.prob).sum::<f64>() - 1.0).abs() <= 1e-12);
        rows.insert(u, entries);
    }

    Ok(TransitionModel {
        region: region.clone(),
        rows,
        self_loop_at_anchor: true,
        isolated,
    })
}

/// Stationary distribution over region members, with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    /// Region members in ascending id order; parallel to `pi`.
    pub nodes: Vec<NodeId>,
    pub pi: Vec<f64>,
    /// Final `‖πP − π‖₁` against the undamped model.
    pub residual: f64,
    pub steps: usize,
    pub converged: bool,
    index: HashMap<NodeId, usize>,
}

impl StationaryDistribution {
    pub fn pi_of(&self, id: NodeId) -> f64 {
        self.index.get(&id).map_or(0.0, |&i| self.pi[i])
    }
}

/// Power iteration from the anchor-concentrated start vector until
/// `‖πP − π‖₁ ≤ pi_tol` or the step cap. Isolated members keep π = 0.
pub fn stationary_distribution(tm: &TransitionModel, cfg: &EngineConfig) -> StationaryDistribution {
    let nodes: Vec<NodeId> = tm.region.members.iter().copied().collect();
    let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    // Index-compiled rows: (source, targets[(index, prob)]).
    let compiled: Vec<(usize, Vec<(usize, f64)>)> = tm
        .rows
        .iter()
        .map(|(&u, entries)| {
            (
                index[&u],
                entries.iter().map(|e| (index[&e.neighbor], e.prob)).collect(),
            )
        })
        .collect();

    let mut pi = vec![0.0; nodes.len()];
    pi[index[&tm.region.anchor]] = 1.0;

    let mut residual = f64::INFINITY;
    let mut steps = 0;
    let mut converged = false;
    let mut propagated = vec![0.0; nodes.len()];
    while steps < cfg.max_walk_steps {
        propagated.iter_mut().for_each(|x| *x = 0.0);
        for (i, targets) in &compiled {
            let mass = pi[*i];
            if mass == 0.0 {
                continue;
            }
            for &(j, p) in targets {
                propagated[j] += mass * p;
            }
        }
        steps += 1;
        residual = pi
            .iter()
            .zip(&propagated)
            .map(|(a, b)| (a - b).abs())
            .sum();
        if residual <= cfg.pi_tol {
            converged = true;
            break;
        }
        // Half-lazy update: identical fixed point, no period-2 oscillation.
        for (x, y) in pi.iter_mut().zip(&propagated) {
            *x = 0.5 * (*x + *y);
        }
    }

    StationaryDistribution {
        nodes,
        pi,
        residual,
        steps,
        converged,
        index,
    }
}

/// π restricted to the candidate answers and renormalized.
#[derive(Debug, Clone)]
pub struct AnswerDistribution {
    /// Ascending by node id; parallel to `probs`.
    pub answers: Vec<NodeId>,
    pub probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl AnswerDistribution {
    /// Builds from parallel vectors, normalizing `weights` to sum 1.
    pub fn from_weights(answers: Vec<NodeId>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if answers.is_empty() || total <= 0.0 {
            return Err(Error::NoCandidates(
                "no candidate carries positive probability".into(),
            ));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        Ok(AnswerDistribution {
            answers,
            probs,
            cumulative,
        })
    }

    pub fn prob_of(&self, id: NodeId) -> Option<f64> {
        self.answers
            .binary_search(&id)
            .ok()
            .map(|i| self.probs[i])
    }

    fn draw_index(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.answers.len() - 1)
    }
}

/// Restricts π to type-matching candidates (anchor excluded), renormalized.
pub fn extract_answer_distribution(
    sd: &StationaryDistribution,
    region: &BoundedRegion,
    target_types: &std::collections::BTreeSet<String>,
    g: &KnowledgeGraph,
) -> Result<AnswerDistribution> {
    let answers: Vec<NodeId> = region
        .members
        .iter()
        .copied()
        .filter(|&u| u != region.anchor && !g.node(u).types.is_disjoint(target_types))
        .collect();
    if answers.is_empty() {
        return Err(Error::NoCandidates(format!(
            "no member of the region around {} matches the target types",
            g.node(region.anchor).name
        )));
    }
    let weights: Vec<f64> = answers.iter().map(|&u| sd.pi_of(u)).collect();
    AnswerDistribution::from_weights(answers, weights)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleEntry {
    pub answer: NodeId,
    /// The generating distribution's π′ for this answer.
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct StageInfo {
    /// Source nodes expanded at this stage.
    pub expanded: usize,
    /// Sources skipped for lack of stage candidates.
    pub skipped: usize,
}

/// A multiset of drawn answers with their inclusion probabilities.
#[derive(Debug, Clone, Default)]
pub struct Sample {
    pub entries: Vec<SampleEntry>,
    /// Present for chain samples.
    pub stage_breakdown: Option<Vec<StageInfo>>,
    /// Walk-backend diagnostics; zero under `categorical`.
    pub walk_proposals: usize,
    pub walk_rejections: usize,
}

/// `size` i.i.d. draws from π′ (the `categorical` backend).
pub fn draw_sample(ad: &AnswerDistribution, size: usize, rng: &mut impl Rng) -> Sample {
    assert!(size >= 1, "draw_sample needs size >= 1");
    let entries = (0..size)
        .map(|_| {
            let i = ad.draw_index(rng);
            SampleEntry {
                answer: ad.answers[i],
                prob: ad.probs[i],
            }
        })
        .collect();
    Sample {
        entries,
        ..Sample::default()
    }
}

/// The `walk` backend. Each entry is produced by an independent attempt:
/// start from a fresh π draw, advance the chain a fixed number of steps
/// (the start is already stationary, so any horizon preserves π), and keep
/// the endpoint only if it is a candidate. Discarded attempts restart from
/// scratch, so recorded entries are i.i.d. from π restricted to candidates,
/// which is what the inverse-probability estimators and the bootstrap
/// margin assume. Recording every candidate visit of one continuous walk
/// would have the same marginal but Markov-clumped entries, silently
/// shrinking the bootstrap margin and stopping the session far too early.
pub fn draw_sample_walk(
    tm: &TransitionModel,
    sd: &StationaryDistribution,
    ad: &AnswerDistribution,
    size: usize,
    rng: &mut impl Rng,
) -> Result<Sample> {
    assert!(size >= 1, "draw_sample_walk needs size >= 1");
    const PROPOSAL_BUDGET: usize = 50_000_000;
    const WALK_SPACING: usize = 8;

    let prob_index: HashMap<NodeId, f64> = ad
        .answers
        .iter()
        .zip(&ad.probs)
        .map(|(&a, &p)| (a, p))
        .collect();

    // One draw from π over the whole region, given a uniform variate.
    let total_pi: f64 = sd.pi.iter().sum();
    let draw_start = |u: f64| {
        let target = u * total_pi;
        let mut acc = 0.0;
        let mut chosen = sd.nodes[0];
        for (node, &mass) in sd.nodes.iter().zip(&sd.pi) {
            chosen = *node;
            acc += mass;
            if acc > target {
                break;
            }
        }
        chosen
    };

    let mut entries = Vec::with_capacity(size);
    let mut proposals = 0usize;
    // Counts both per-step proposal rejections and whole discarded attempts.
    let mut rejections = 0usize;
    while entries.len() < size {
        let mut current = draw_start(rng.gen::<f64>());
        for _ in 0..WALK_SPACING {
            let row = tm.row(current).ok_or_else(|| {
                Error::NoCandidates(format!("walk stranded on isolated node {current}"))
            })?;
            // Uniform proposal, accept with probability p_ij: the accepted
            // neighbor is distributed exactly by the row.
            current = loop {
                proposals += 1;
                if proposals > PROPOSAL_BUDGET {
                    return Err(Error::DomainError(
                        "walk sampler exceeded its proposal budget".into(),
                    ));
                }
                let entry = row[rng.gen_range(0..row.len())];
                if rng.gen::<f64>() < entry.prob {
                    break entry.neighbor;
                }
                rejections += 1;
            };
        }
        if let Some(&prob) = prob_index.get(&current) {
            entries.push(SampleEntry {
                answer: current,
                prob,
            });
        } else {
            rejections += 1;
        }
    }

    Ok(Sample {
        entries,
        stage_breakdown: None,
        walk_proposals: proposals,
        walk_rejections: rejections,
    })
}

/// Per-anchor sampling pipeline for one single-hop subquery.
#[derive(Debug, Clone)]
pub struct AnchorSampler {
    pub model: TransitionModel,
    pub stationary: StationaryDistribution,
    pub distribution: AnswerDistribution,
}

impl AnchorSampler {
    pub fn build(
        g: &KnowledgeGraph,
        p: &SimilarityProvider,
        anchor: NodeId,
        query_predicate: &str,
        target_types: &std::collections::BTreeSet<String>,
        cfg: &EngineConfig,
    ) -> Result<Self> {
        let region = bounded_region(g, anchor, cfg.n, target_types)?;
        let model = build_transition_model(g, p, &region, query_predicate, cfg)?;
        let stationary = stationary_distribution(&model, cfg);
        let distribution = extract_answer_distribution(&stationary, &region, target_types, g)?;
        Ok(AnchorSampler {
            model,
            stationary,
            distribution,
        })
    }

    pub fn draw(&self, size: usize, rng: &mut impl Rng, backend: SamplerBackend) -> Result<Sample> {
        match backend {
            SamplerBackend::Categorical => Ok(draw_sample(&self.distribution, size, rng)),
            SamplerBackend::Walk => {
                draw_sample_walk(&self.model, &self.stationary, &self.distribution, size, rng)
            }
        }
    }
}

/// Chain sampling: the final-answer distribution is the product marginal
/// accumulated over every stage path, π′(j) = Σ_i π′_i · π′_{j|i}, so
/// duplicate answers reached through different intermediates pool their
/// probability. Draws are then i.i.d. from that marginal under either
/// backend (a chain has no single walk to resume).
#[derive(Debug, Clone)]
pub struct ChainSampler {
    pub distribution: AnswerDistribution,
    pub stages: Vec<StageInfo>,
    /// Product-space mass before renormalization; 1 when no intermediate was
    /// skipped for lack of candidates.
    pub raw_mass: f64,
    /// (steps, residual, converged) for every stage stationary solve.
    pub stage_convergence: Vec<(usize, f64, bool)>,
}

impl ChainSampler {
    pub fn build(
        g: &KnowledgeGraph,
        p: &SimilarityProvider,
        q: &QueryGraph,
        cfg: &EngineConfig,
    ) -> Result<Self> {
        if q.hops.len() < 2 {
            return Err(Error::InvariantViolation(
                "chain sampling requires at least 2 hops".into(),
            ));
        }
        let anchor = resolve_specific_node(g, &q.specific.name, &q.specific.types)?;
        let mut layer: BTreeMap<NodeId, f64> = BTreeMap::new();
        layer.insert(anchor, 1.0);
        let mut stages = Vec::with_capacity(q.hops.len());
        let mut stage_convergence = Vec::new();

        for (k, hop) in q.hops.iter().enumerate() {
            let mut next: BTreeMap<NodeId, f64> = BTreeMap::new();
            let mut info = StageInfo::default();
            for (&source, &mass) in &layer {
                let stage =
                    match AnchorSampler::build(g, p, source, &hop.predicate, &hop.types, cfg) {
                        Ok(s) => s,
                        Err(Error::NoCandidates(_)) => {
                            info.skipped += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                info.expanded += 1;
                stage_convergence.push((
                    stage.stationary.steps,
                    stage.stationary.residual,
                    stage.stationary.converged,
                ));
                for (&ans, &prob) in stage
                    .distribution
                    .answers
                    .iter()
                    .zip(&stage.distribution.probs)
                {
                    if ans == anchor {
                        continue;
                    }
                    *next.entry(ans).or_insert(0.0) += mass * prob;
                }
            }
            stages.push(info);
            if next.is_empty() {
                return Err(Error::NoCandidates(format!(
                    "every stage-{} expansion came up empty",
                    k + 1
                )));
            }
            layer = next;
        }

        let raw_mass: f64 = layer.values().sum();
        let (answers, weights): (Vec<NodeId>, Vec<f64>) = layer.into_iter().unzip();
        Ok(ChainSampler {
            distribution: AnswerDistribution::from_weights(answers, weights)?,
            stages,
            raw_mass,
            stage_convergence,
        })
    }

    pub fn draw(&self, size: usize, rng: &mut impl Rng) -> Sample {
        let mut sample = draw_sample(&self.distribution, size, rng);
        sample.stage_breakdown = Some(self.stages.clone());
        sample
    }
}

/// Two-stage (or longer) chain sampling in one call.
pub fn chain_sample(
    g: &KnowledgeGraph,
    p: &SimilarityProvider,
    q: &QueryGraph,
    size: usize,
    cfg: &EngineConfig,
    rng: &mut impl Rng,
) -> Result<Sample> {
    Ok(ChainSampler::build(g, p, q, cfg)?.draw(size, rng))
}

/// Intersection sampling for composite shapes: answers present in every
/// input survive with the normalized product of their per-subquery
/// probabilities, one entry per distinct answer.
pub fn intersect_samples(samples: &[Sample]) -> Result<Sample> {
    if samples.len() < 2 {
        return Err(Error::DomainError(
            "intersect_samples needs at least two samples".into(),
        ));
    }
    let mut product: BTreeMap<NodeId, f64> = BTreeMap::new();
    for entry in &samples[0].entries {
        product.entry(entry.answer).or_insert(entry.prob);
    }
    for sample in &samples[1..] {
        let mut seen: BTreeMap<NodeId, f64> = BTreeMap::new();
        for entry in &sample.entries {
            seen.entry(entry.answer).or_insert(entry.prob);
        }
        product.retain(|answer, _| seen.contains_key(answer));
        for (answer, prob) in product.iter_mut() {
            *prob *= seen[answer];
        }
    }
    if product.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let total: f64 = product.values().sum();
    let entries = product
        .into_iter()
        .map(|(answer, prob)| SampleEntry {
            answer,
            prob: prob / total,
        })
        .collect();
    Ok(Sample {
        entries,
        ..Sample::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_graph_from_readers;
    use crate::semantics::load_simtable_from_reader;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::collections::BTreeSet;
    use std::io::Cursor;

    fn load(nodes: &str, edges: &str, simtable: &str) -> (KnowledgeGraph, SimilarityProvider) {
        let g = load_graph_from_readers(
            Cursor::new(nodes),
            "nodes.tsv",
            Cursor::new(edges),
            "edges.tsv",
            Cursor::new(""),
            "attrs.tsv",
        )
        .unwrap();
        let p = load_simtable_from_reader(Cursor::new(simtable), "simtable.tsv").unwrap();
        (g, p)
    }

    fn fig3() -> (KnowledgeGraph, SimilarityProvider) {
        load(
            "u_1\tGermany\tCountry\nu_2\tVolkswagen\tCompany\nu_3\tAudi_TT\tAutomobile\n\
             u_4\tBMW_320\tAutomobile\nu_5\tBMW\tCompany\nu_6\tBMW_X6\tAutomobile\n\
             u_7\tAngela_Merkel\tPerson\nu_8\tCET\tTimeZone\n",
            "u_2\tcountry\tu_1\nu_4\tassembly\tu_1\nu_5\theadquarter\tu_1\n\
             u_7\tleader\tu_1\nu_8\ttimezone\tu_1\nu_3\tassembly\tu_2\nu_6\tassembly\tu_5\n",
            "country\tproduct\t0.81\nassembly\tproduct\t0.98\nheadquarter\tproduct\t0.79\n\
             leader\tproduct\t0.14\ntimezone\tproduct\t0.12\n",
        )
    }

    fn target(types: &[&str]) -> BTreeSet<String> {
        types.iter().map(|s| s.to_string()).collect()
    }

    fn fig3_sampler(cfg: &EngineConfig) -> (KnowledgeGraph, AnchorSampler) {
        let (g, p) = fig3();
        let anchor = g.node_by_source_id("u_1").unwrap();
        let sampler =
            AnchorSampler::build(&g, &p, anchor, "product", &target(&["Automobile"]), cfg).unwrap();
        (g, sampler)
    }

    fn cfg_n(n: usize) -> EngineConfig {
        EngineConfig {
            n,
            ..EngineConfig::default()
        }
    }

    #[test]
    fn fig3_anchor_row_reproduces_hand_probability() {
        let (g, sampler) = fig3_sampler(&cfg_n(2));
        let anchor = g.node_by_source_id("u_1").unwrap();
        let u4 = g.node_by_source_id("u_4").unwrap();
        let row = sampler.model.row(anchor).unwrap();
        assert_eq!(row.len(), 6);

        let p14 = row
            .iter()
            .find(|e| e.neighbor == u4 && e.edge.is_some())
            .unwrap()
            .prob;
        assert!((p14 - 0.345).abs() < 0.0005, "p14 = {p14}");

        let self_loop = row.iter().find(|e| e.edge.is_none()).unwrap();
        assert_eq!(self_loop.neighbor, anchor);
        assert!((self_loop.prob - 0.001 / 2.841).abs() < 1e-12);
    }

    #[test]
    fn every_row_is_a_positive_distribution() {
        let (_, sampler) = fig3_sampler(&cfg_n(2));
        for (node, entries) in &sampler.model.rows {
            let sum: f64 = entries.iter().map(|e| e.prob).sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {node} sums to {sum}");
            assert!(entries.iter().all(|e| e.prob > 0.0), "row {node}");
        }
        assert!(sampler.model.isolated.is_empty());
    }

    #[test]
    fn equal_similarity_edges_split_evenly() {
        let (g, p) = load(
            "x\tX\tA\ny\tY\tB\nz\tZ\tB\n",
            "x\trel\ty\nx\trel\tz\n",
            "rel\tq\t0.7\n",
        );
        let x = g.node_by_source_id("x").unwrap();
        let region = bounded_region(&g, x, 1, &target(&["B"])).unwrap();
        let tm = build_transition_model(&g, &p, &region, "q", &cfg_n(1)).unwrap();
        let row = tm.row(x).unwrap();
        assert_eq!(row.len(), 3); // two edges plus the anchor self-loop
        let edge_probs: Vec<f64> = row
            .iter()
            .filter(|e| e.edge.is_some())
            .map(|e| e.prob)
            .collect();
        assert!((edge_probs[0] - edge_probs[1]).abs() < 1e-15);
    }

    #[test]
    fn two_node_chain_matches_hand_solved_balance() {
        let (g, p) = load("a\tA\tS\nb\tB\tT\n", "a\trel\tb\n", "rel\tq\t0.999\n");
        let anchor = g.node_by_source_id("a").unwrap();
        let cfg = cfg_n(1);
        let region = bounded_region(&g, anchor, 1, &target(&["T"])).unwrap();
        let tm = build_transition_model(&g, &p, &region, "q", &cfg).unwrap();
        let sd = stationary_distribution(&tm, &cfg);
        assert!(sd.converged, "residual {}", sd.residual);
        let pi_a = sd.pi_of(anchor);
        assert!((pi_a - 1.0 / 1.999).abs() < 1e-5, "pi_a = {pi_a}");
        assert!((sd.pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    /// ‖πP − π‖₁ computed against the undamped model.
    fn true_residual(tm: &TransitionModel, sd: &StationaryDistribution) -> f64 {
        let mut next: BTreeMap<NodeId, f64> = sd.nodes.iter().map(|&n| (n, 0.0)).collect();
        for (&u, entries) in &tm.rows {
            let mass = sd.pi_of(u);
            for e in entries {
                *next.get_mut(&e.neighbor).unwrap() += mass * e.prob;
            }
        }
        sd.nodes
            .iter()
            .map(|&n| (next[&n] - sd.pi_of(n)).abs())
            .sum()
    }

    #[test]
    fn converged_distributions_satisfy_the_balance_equation() {
        let (_, sampler) = fig3_sampler(&cfg_n(2));
        assert!(sampler.stationary.converged);
        let resid = true_residual(&sampler.model, &sampler.stationary);
        assert!(resid <= 1e-6, "residual {resid}");
    }

    #[test]
    fn fig3_candidate_masses_tie_by_reversibility() {
        // The walk has symmetric edge weights, so it is reversible and
        // π_i is proportional to the sum of weights incident to i. Each
        // automobile carries exactly one 0.98 edge, so the three candidates
        // tie exactly in the limit; u_4 is a maximum but not a strict one.
        let (g, sampler) = fig3_sampler(&cfg_n(2));
        let pi = |id: &str| sampler.stationary.pi_of(g.node_by_source_id(id).unwrap());
        assert!((pi("u_4") - pi("u_3")).abs() < 1e-5);
        assert!((pi("u_4") - pi("u_6")).abs() < 1e-5);

        let ids: Vec<&str> = sampler
            .distribution
            .answers
            .iter()
            .map(|&a| g.node(a).id.as_str())
            .collect();
        assert_eq!(ids, ["u_3", "u_4", "u_6"]);
        let max = sampler
            .distribution
            .probs
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let p4 = sampler
            .distribution
            .prob_of(g.node_by_source_id("u_4").unwrap())
            .unwrap();
        assert!(p4 >= max - 1e-5, "p4 = {p4}, max = {max}");
        assert!((p4 - 1.0 / 3.0).abs() < 1e-5);
        let total: f64 = sampler.distribution.probs.iter().sum();
        assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn higher_similarity_paths_earn_strictly_larger_mass() {
        // Unlike fig3's exact tie, here the premise holds: b's only path
        // uses a strictly higher-similarity predicate than c's.
        let (g, p) = load(
            "a\tA\tS\nb\tB\tT\nc\tC\tT\n",
            "a\thot\tb\na\tcold\tc\n",
            "hot\tq\t0.9\ncold\tq\t0.5\n",
        );
        let anchor = g.node_by_source_id("a").unwrap();
        let sampler =
            AnchorSampler::build(&g, &p, anchor, "q", &target(&["T"]), &cfg_n(1)).unwrap();
        let b = sampler
            .distribution
            .prob_of(g.node_by_source_id("b").unwrap())
            .unwrap();
        let c = sampler
            .distribution
            .prob_of(g.node_by_source_id("c").unwrap())
            .unwrap();
        assert!(b > c, "b = {b}, c = {c}");
        assert!((b - 0.9 / 1.4).abs() < 1e-6);
    }

    #[test]
    fn extraction_preserves_proportions() {
        let (g, p) = load(
            "a\tA\tS\nb\tB\tT\nc\tC\tT\nd\tD\tU\n",
            "a\thot\tb\na\tcold\tc\na\thot\td\n",
            "hot\tq\t0.8\ncold\tq\t0.4\n",
        );
        let anchor = g.node_by_source_id("a").unwrap();
        let cfg = cfg_n(1);
        let region = bounded_region(&g, anchor, 1, &target(&["T"])).unwrap();
        let tm = build_transition_model(&g, &p, &region, "q", &cfg).unwrap();
        let sd = stationary_distribution(&tm, &cfg);
        let ad = extract_answer_distribution(&sd, &region, &target(&["T"]), &g).unwrap();
        // b and c have stationary mass in ratio 0.8 : 0.4.
        assert_eq!(ad.answers.len(), 2);
        assert!((ad.probs[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((ad.probs[1] - 1.0 / 3.0).abs() < 1e-9);

        let singleton = extract_answer_distribution(&sd, &region, &target(&["U"]), &g).unwrap();
        assert_eq!(singleton.probs, vec![1.0]);

        let err = extract_answer_distribution(&sd, &region, &target(&["Zed"]), &g).unwrap_err();
        assert!(matches!(err, Error::NoCandidates(_)));
    }

    #[test]
    fn categorical_draws_are_deterministic_and_exhaustive() {
        let (_, sampler) = fig3_sampler(&cfg_n(2));
        let mut rng_a = ChaCha12Rng::seed_from_u64(42);
        let mut rng_b = ChaCha12Rng::seed_from_u64(42);
        let a = draw_sample(&sampler.distribution, 100, &mut rng_a);
        let b = draw_sample(&sampler.distribution, 100, &mut rng_b);
        assert_eq!(a.entries, b.entries);
        for e in &a.entries {
            assert_eq!(sampler.distribution.prob_of(e.answer).unwrap(), e.prob);
        }
    }

    #[test]
    fn degenerate_distribution_always_draws_its_answer() {
        let ad = AnswerDistribution::from_weights(vec![NodeId(7)], vec![0.3]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let s = draw_sample(&ad, 50, &mut rng);
        assert!(s.entries.iter().all(|e| e.answer == NodeId(7) && e.prob == 1.0));
    }

    #[test]
    fn even_distribution_draws_evenly() {
        let ad =
            AnswerDistribution::from_weights(vec![NodeId(0), NodeId(1)], vec![1.0, 1.0]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let s = draw_sample(&ad, 10_000, &mut rng);
        let ones = s.entries.iter().filter(|e| e.answer == NodeId(1)).count();
        let freq = ones as f64 / 10_000.0;
        // 4 sigma of a fair binomial at n = 10^4 is 0.02.
        assert!((freq - 0.5).abs() < 0.02, "freq = {freq}");
    }

    #[test]
    fn walk_backend_visits_candidates_at_stationary_rates() {
        let (g, sampler) = fig3_sampler(&cfg_n(2));
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let s = draw_sample_walk(
            &sampler.model,
            &sampler.stationary,
            &sampler.distribution,
            20_000,
            &mut rng,
        )
        .unwrap();
        assert!(s.walk_proposals > 0 && s.walk_rejections > 0);
        for (i, &ans) in sampler.distribution.answers.iter().enumerate() {
            let freq = s.entries.iter().filter(|e| e.answer == ans).count() as f64 / 20_000.0;
            let expect = sampler.distribution.probs[i];
            assert!(
                (freq - expect).abs() < 0.03,
                "{}: freq {freq} vs pi' {expect}",
                g.node(ans).id
            );
        }

        let mut rng_a = ChaCha12Rng::seed_from_u64(3);
        let mut rng_b = ChaCha12Rng::seed_from_u64(3);
        let a = draw_sample_walk(&sampler.model, &sampler.stationary, &sampler.distribution, 64, &mut rng_a).unwrap();
        let b = draw_sample_walk(&sampler.model, &sampler.stationary, &sampler.distribution, 64, &mut rng_b).unwrap();
        assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn walk_entries_are_independent_across_draws() {
        // Continuous-visit recording would clump consecutive entries (the
        // lag-1 repeat rate of the fig3 chain is well above 0.5); restarted
        // attempts must match the i.i.d. repeat rate Σ π′².
        let (_, sampler) = fig3_sampler(&cfg_n(2));
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 20_000;
        let s = draw_sample_walk(
            &sampler.model,
            &sampler.stationary,
            &sampler.distribution,
            n,
            &mut rng,
        )
        .unwrap();
        let repeats = s
            .entries
            .windows(2)
            .filter(|w| w[0].answer == w[1].answer)
            .count() as f64
            / (n - 1) as f64;
        let iid_rate: f64 = sampler.distribution.probs.iter().map(|p| p * p).sum();
        assert!(
            (repeats - iid_rate).abs() < 0.02,
            "lag-1 repeat rate {repeats} vs i.i.d. rate {iid_rate}"
        );
    }

    fn chain_fixture() -> (KnowledgeGraph, SimilarityProvider) {
        // A fans out to intermediates m1 (weight 0.6) and m2 (0.4); each
        // intermediate reaches T plus one private answer with equal weight.
        load(
            "a\tAnchor\tS\nm1\tM1\tM\nm2\tM2\tM\nt\tT\tE\nx\tX\tE\ny\tY\tE\n",
            "a\tp6\tm1\na\tp4\tm2\nm1\tq5\tt\nm1\tq5\tx\nm2\tq5\tt\nm2\tq5\ty\n",
            "p6\trel1\t0.6\np4\trel1\t0.4\nq5\trel2\t0.9\np6\trel2\t0.0\np4\trel2\t0.0\nq5\trel1\t0.0\n",
        )
    }

    fn chain_query() -> QueryGraph {
        // n = 1 keeps each stage region to immediate neighbors, so the
        // hand-computed stage probabilities below are exact.
        crate::query::parse_query(
            r#"{"shape":"chain","subqueries":[{"specific":{"name":"Anchor","types":["S"]},
                "hops":[{"types":["M"],"predicate":"rel1"},{"types":["E"],"predicate":"rel2"}]}],
                "func":"count","config":{"n":1}}"#,
        )
        .unwrap()
        .subqueries[0]
            .clone()
    }

    #[test]
    fn chain_marginal_accumulates_products_over_intermediates() {
        let (g, p) = chain_fixture();
        let cfg = cfg_n(1);
        let chain = ChainSampler::build(&g, &p, &chain_query(), &cfg).unwrap();
        assert!((chain.raw_mass - 1.0).abs() <= 1e-9, "mass {}", chain.raw_mass);

        let prob = |id: &str| {
            chain
                .distribution
                .prob_of(g.node_by_source_id(id).unwrap())
                .unwrap()
        };
        // t: 0.6*0.5 + 0.4*0.5, x: 0.6*0.5, y: 0.4*0.5. The shared answer is
        // exact by cancellation; the private ones carry stage-1 convergence
        // error of order pi_tol.
        assert!((prob("t") - 0.5).abs() < 1e-9, "t = {}", prob("t"));
        assert!((prob("x") - 0.3).abs() < 1e-5);
        assert!((prob("y") - 0.2).abs() < 1e-5);

        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let s = chain.draw(10, &mut rng);
        assert_eq!(s.entries.len(), 10);
        assert_eq!(s.stage_breakdown.as_ref().unwrap().len(), 2);
        let types_ok = s
            .entries
            .iter()
            .all(|e| g.node(e.answer).types.contains("E"));
        assert!(types_ok);
    }

    #[test]
    fn chain_with_singleton_stage_reduces_to_simple_sampling() {
        let (g, p) = load(
            "a\tAnchor\tS\nm\tM\tM\nt1\tT1\tE\nt2\tT2\tE\n",
            "a\tp6\tm\nm\thot\tt1\nm\tcold\tt2\n",
            "p6\trel1\t0.6\nhot\trel2\t0.8\ncold\trel2\t0.4\np6\trel2\t0.0\nhot\trel1\t0.0\ncold\trel1\t0.0\n",
        );
        let cfg = cfg_n(2);
        let q = chain_query();
        let chain = ChainSampler::build(&g, &p, &q, &cfg).unwrap();

        let m = g.node_by_source_id("m").unwrap();
        let simple =
            AnchorSampler::build(&g, &p, m, "rel2", &target(&["E"]), &cfg).unwrap();
        for (&ans, &prob) in chain
            .distribution
            .answers
            .iter()
            .zip(&chain.distribution.probs)
        {
            let direct = simple.distribution.prob_of(ans).unwrap();
            assert!((prob - direct).abs() < 1e-9, "{}", g.node(ans).id);
        }
    }

    #[test]
    fn chain_errors_when_no_stage_produces_candidates() {
        let (g, p) = load(
            "a\tAnchor\tS\nm\tM\tM\n",
            "a\tp6\tm\n",
            "p6\trel1\t0.6\np6\trel2\t0.0\n",
        );
        let err = ChainSampler::build(&g, &p, &chain_query(), &cfg_n(2)).unwrap_err();
        assert!(matches!(err, Error::NoCandidates(_)));
    }

    fn sample_of(entries: &[(u32, f64)]) -> Sample {
        Sample {
            entries: entries
                .iter()
                .map(|&(id, prob)| SampleEntry {
                    answer: NodeId(id),
                    prob,
                })
                .collect(),
            ..Sample::default()
        }
    }

    #[test]
    fn intersection_keeps_common_answers_with_product_probability() {
        let a = sample_of(&[(1, 0.5), (2, 0.5)]);
        let b = sample_of(&[(1, 1.0)]);
        let out = intersect_samples(&[a, b]).unwrap();
        assert_eq!(out.entries.len(), 1);
        assert_eq!(out.entries[0].answer, NodeId(1));
        assert!((out.entries[0].prob - 1.0).abs() < 1e-12);

        let a = sample_of(&[(1, 0.5), (1, 0.5), (2, 0.5)]);
        let b = sample_of(&[(1, 0.25), (2, 0.75)]);
        let out = intersect_samples(&[a, b]).unwrap();
        // products: 1 -> 0.125, 2 -> 0.375; normalized 0.25 / 0.75.
        assert_eq!(out.entries.len(), 2);
        assert!((out.entries[0].prob - 0.25).abs() < 1e-12);
        assert!((out.entries[1].prob - 0.75).abs() < 1e-12);
    }

    #[test]
    fn disjoint_samples_fail_to_intersect() {
        let a = sample_of(&[(1, 1.0)]);
        let b = sample_of(&[(2, 1.0)]);
        assert!(matches!(
            intersect_samples(&[a, b]),
            Err(Error::EmptyIntersection)
        ));
    }
}
