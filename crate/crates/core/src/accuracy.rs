//! Iterative accuracy control: bootstrap confidence intervals, the
//! termination test, sample-growth sizing, and the query driver.
//!
//! A round estimates the aggregate from the pooled sample, bootstraps a
//! margin of error ε over t little samples, and stops once
//! `ε ≤ V̂·e_b/(1+e_b)`; that threshold makes the relative error of the
//! reported estimate at most `e_b` with probability 1−α whenever the CI
//! covers the truth. If the bound is missed, the deficit `(ε/threshold)^{2m}`
//! prices how many additional draws close it, exploiting that ε shrinks
//! roughly as `size^{-m}` under the little-bootstrap sizing.
//!
//! Little samples keep bootstrap cost sublinear: each of the t small samples
//! is resampled at the pooled size, so every ε_i estimates the error of the
//! full-size estimator and their mean is the round's ε. Resampling at the
//! small size instead would overstate ε by roughly √t and the loop would
//! oversample past the requested bound.
//!
//! Sessions retain samples, validations, and distributions, so tightening
//! `e_b` after a result resumes the loop instead of starting over.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{estimate, ValidatedEntry, ValidatedSample, Validator};
use crate::graph::{bounded_region, resolve_specific_node, KnowledgeGraph, NodeId};
use crate::query::{AggregateFunc, AggregateQuery, EngineConfig, FilterSpec, GroupSpec, QueryGraph};
use crate::rng::stream;
use crate::sampler::{
    build_transition_model, intersect_samples, stationary_distribution, AnchorSampler,
    ChainSampler, Sample, StageInfo,
};
use crate::semantics::SimilarityProvider;

/// Upper α/2 critical value of the standard normal, via the rational
/// inverse-CDF approximation (relative error below 1.2e-9).
pub fn normal_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!(
            "confidence parameter must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(-inverse_normal_cdf(alpha / 2.0))
}

fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inverse_normal_cdf(1.0 - p)
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapStats {
    pub resample_estimates: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

/// One resample estimate: `resample_size` uniform slot draws from the
/// validated sample's accepted-plus-rejected slots. Rejected slots
/// contribute zero, mirroring the point estimator's divisor convention.
fn resample_estimate(
    vs: &ValidatedSample,
    func: AggregateFunc,
    attr: Option<&str>,
    resample_size: usize,
    fallback: f64,
    rng: &mut ChaCha12Rng,
) -> f64 {
    let drawn = vs.drawn_size();
    let accepted = vs.accepted.len();
    match func {
        AggregateFunc::Count => {
            let mut sum = 0.0;
            for _ in 0..resample_size {
                let slot = rng.gen_range(0..drawn);
                if slot < accepted {
                    sum += 1.0 / vs.accepted[slot].prob;
                }
            }
            sum / resample_size as f64
        }
        AggregateFunc::Sum => {
            let attr = attr.expect("SUM bootstrap needs an attribute");
            let mut sum = 0.0;
            for _ in 0..resample_size {
                let slot = rng.gen_range(0..drawn);
                if slot < accepted {
                    if let Some(v) = vs.accepted[slot].attrs.get(attr) {
                        sum += v / vs.accepted[slot].prob;
                    }
                }
            }
            sum / resample_size as f64
        }
        AggregateFunc::Avg => {
            let attr = attr.expect("AVG bootstrap needs an attribute");
            let mut num = 0.0;
            let mut den = 0.0;
            for _ in 0..resample_size {
                let slot = rng.gen_range(0..drawn);
                if slot < accepted {
                    if let Some(v) = vs.accepted[slot].attrs.get(attr) {
                        num += v / vs.accepted[slot].prob;
                        den += 1.0 / vs.accepted[slot].prob;
                    }
                }
            }
            // A resample can miss every attribute-bearing entry; its ratio
            // is undefined, so it contributes the sample's own estimate.
            if den > 0.0 {
                num / den
            } else {
                fallback
            }
        }
        AggregateFunc::Max | AggregateFunc::Min => {
            unreachable!("extreme aggregates carry no confidence interval")
        }
    }
}

fn bootstrap_fallback(vs: &ValidatedSample, func: AggregateFunc, attr: Option<&str>) -> Result<f64> {
    match func {
        AggregateFunc::Avg => Ok(estimate(vs, func, attr)?.value),
        _ => Ok(0.0),
    }
}

/// Bootstrap spread of the estimator with explicit resample size.
pub fn bootstrap_sigma_with_size(
    vs: &ValidatedSample,
    func: AggregateFunc,
    attr: Option<&str>,
    b: usize,
    resample_size: usize,
    rng: &mut ChaCha12Rng,
) -> Result<BootstrapStats> {
    if vs.drawn_size() == 0 {
        return Err(Error::EmptyValidatedSample(
            "cannot bootstrap an empty sample".into(),
        ));
    }
    if b < 2 {
        return Err(Error::DomainError(format!(
            "bootstrap needs at least 2 resamples, got {b}"
        )));
    }
    let fallback = bootstrap_fallback(vs, func, attr)?;
    let resample_estimates: Vec<f64> = (0..b)
        .map(|_| resample_estimate(vs, func, attr, resample_size, fallback, rng))
        .collect();
    let mu = resample_estimates.iter().sum::<f64>() / b as f64;
    let var = resample_estimates
        .iter()
        .map(|v| (v - mu).powi(2))
        .sum::<f64>()
        / (b - 1) as f64;
    Ok(BootstrapStats {
        resample_estimates,
        mu,
        sigma: var.sqrt(),
    })
}

/// Bootstrap spread with resamples at the sample's own size.
pub fn bootstrap_sigma(
    vs: &ValidatedSample,
    func: AggregateFunc,
    attr: Option<&str>,
    b: usize,
    rng: &mut ChaCha12Rng,
) -> Result<BootstrapStats> {
    let size = vs.drawn_size();
    bootstrap_sigma_with_size(vs, func, attr, b, size, rng)
}

/// Margin of error over the little samples: each is resampled at the pooled
/// size, ε_i = z_{α/2}·σ_i, and the result is the mean of the ε_i.
pub fn blb_moe(
    small_samples: &[ValidatedSample],
    func: AggregateFunc,
    attr: Option<&str>,
    alpha: f64,
    b: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, Vec<f64>)> {
    if small_samples.is_empty() {
        return Err(Error::DomainError("need at least one small sample".into()));
    }
    let z = normal_critical(alpha)?;
    let pooled_size: usize = small_samples.iter().map(ValidatedSample::drawn_size).sum();
    let mut per_sample = Vec::with_capacity(small_samples.len());
    for (i, vs) in small_samples.iter().enumerate() {
        let stats = bootstrap_sigma_with_size(vs, func, attr, b, pooled_size, rng)
            .map_err(|e| match e {
                Error::EmptyValidatedSample(msg) => {
                    Error::EmptyValidatedSample(format!("small sample {i}: {msg}"))
                }
                other => other,
            })?;
        per_sample.push(z * stats.sigma);
    }
    let epsilon = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((epsilon, per_sample))
}

/// The stopping test: ε small enough that the relative error of the
/// estimate is bounded by e_b (with the CI's confidence).
pub fn termination_met(v_hat: f64, epsilon: f64, e_b: f64) -> bool {
    epsilon <= v_hat * e_b / (1.0 + e_b)
}

/// Additional draws needed to close the gap between ε and the termination
/// threshold, assuming ε ~ size^(-m). Floor, minimum 1; a non-positive
/// estimate has no usable threshold, so the sample is doubled.
pub fn configure_delta(v_hat: f64, epsilon: f64, e_b: f64, m: f64, current_size: usize) -> usize {
    let threshold = v_hat * e_b / (1.0 + e_b);
    if !(threshold > 0.0) {
        return current_size.max(1);
    }
    let ratio = epsilon / threshold;
    let raw = current_size as f64 * (ratio.powf(2.0 * m) - 1.0);
    if !raw.is_finite() {
        return current_size.max(1);
    }
    (raw.floor() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TerminatedBy {
    #[serde(rename = "bound-met")]
    BoundMet,
    #[serde(rename = "iteration-cap")]
    IterationCap,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub estimate: f64,
    pub moe: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub basis_size: usize,
    /// Too few accepted draws to bootstrap a trustworthy interval.
    pub low_support: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PiDiagnostics {
    pub steps: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub pi: Vec<PiDiagnostics>,
    pub validation_paths: usize,
    pub rejected_draws: usize,
    pub missing_attr: usize,
    pub walk_proposals: usize,
    pub walk_rejections: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_breakdown: Option<Vec<StageInfo>>,
    pub moe_history: Vec<f64>,
}

/// Final answer of a query run: point estimate, confidence interval, and
/// the loop's accounting.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub moe: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub confidence: f64,
    pub iterations: usize,
    pub sample_size: usize,
    pub validated_size: usize,
    pub delta_history: Vec<usize>,
    pub terminated_by: TerminatedBy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<BTreeMap<String, GroupReport>>,
    pub diagnostics: Diagnostics,
}

/// One subquery's sampling and validation context.
trait Lane {
    fn candidate_count(&self) -> usize;
    fn draw(&mut self, size: usize, rng: &mut ChaCha12Rng) -> Result<Sample>;
    fn validate(&mut self, answer: NodeId) -> Result<(bool, f64)>;
    fn convergence(&self) -> Vec<PiDiagnostics>;
    fn stage_breakdown(&self) -> Option<Vec<StageInfo>>;
    fn paths_examined(&self) -> usize;
}

struct SimpleLane<'a> {
    sampler: AnchorSampler,
    validator: Validator<'a>,
    backend: crate::query::SamplerBackend,
}

impl<'a> SimpleLane<'a> {
    fn build(
        g: &'a KnowledgeGraph,
        p: &'a SimilarityProvider,
        q: &QueryGraph,
        cfg: &EngineConfig,
    ) -> Result<Self> {
        let anchor = resolve_specific_node(g, &q.specific.name, &q.specific.types)?;
        let hop = &q.hops[0];
        let sampler = AnchorSampler::build(g, p, anchor, &hop.predicate, &hop.types, cfg)?;
        let validator = Validator::new(
            g,
            p,
            &sampler.model.region,
            &sampler.stationary,
            &hop.predicate,
            cfg,
        );
        Ok(SimpleLane {
            sampler,
            validator,
            backend: cfg.sampler_backend,
        })
    }
}

impl Lane for SimpleLane<'_> {
    fn candidate_count(&self) -> usize {
        self.sampler.distribution.answers.len()
    }
    fn draw(&mut self, size: usize, rng: &mut ChaCha12Rng) -> Result<Sample> {
        self.sampler.draw(size, rng, self.backend)
    }
    fn validate(&mut self, answer: NodeId) -> Result<(bool, f64)> {
        self.validator.validate(answer)
    }
    fn convergence(&self) -> Vec<PiDiagnostics> {
        vec![PiDiagnostics {
            steps: self.sampler.stationary.steps,
            residual: self.sampler.stationary.residual,
            converged: self.sampler.stationary.converged,
        }]
    }
    fn stage_breakdown(&self) -> Option<Vec<StageInfo>> {
        None
    }
    fn paths_examined(&self) -> usize {
        self.validator.paths_examined()
    }
}

struct ChainLane {
    sampler: ChainSampler,
    /// Best stage-wise min-composed similarity per final candidate, from
    /// greedy per-stage path searches; acceptance is composed ≥ τ, which
    /// holds exactly when every stage's path clears τ.
    composed: BTreeMap<NodeId, f64>,
    tau: f64,
    paths: usize,
}

impl ChainLane {
    fn build(
        g: &KnowledgeGraph,
        p: &SimilarityProvider,
        q: &QueryGraph,
        cfg: &EngineConfig,
    ) -> Result<Self> {
        let sampler = ChainSampler::build(g, p, q, cfg)?;
        let anchor = resolve_specific_node(g, &q.specific.name, &q.specific.types)?;

        let mut layer: BTreeMap<NodeId, f64> = BTreeMap::new();
        layer.insert(anchor, f64::INFINITY);
        let mut paths = 0usize;
        for hop in &q.hops {
            let mut next: BTreeMap<NodeId, f64> = BTreeMap::new();
            for (&source, &upstream) in &layer {
                let region = bounded_region(g, source, cfg.n, &hop.types)?;
                if region.candidates.is_empty() {
                    continue;
                }
                let tm = build_transition_model(g, p, &region, &hop.predicate, cfg)?;
                let sd = stationary_distribution(&tm, cfg);
                let mut v = Validator::new(g, p, &region, &sd, &hop.predicate, cfg);
                for &cand in &region.candidates {
                    if cand == anchor {
                        continue;
                    }
                    let (_, sim) = v.validate(cand)?;
                    if sim <= 0.0 {
                        continue;
                    }
                    let through = upstream.min(sim);
                    next.entry(cand)
                        .and_modify(|b| *b = b.max(through))
                        .or_insert(through);
                }
                paths += v.paths_examined();
            }
            layer = next;
            if layer.is_empty() {
                break;
            }
        }

        Ok(ChainLane {
            sampler,
            composed: layer,
            tau: cfg.tau,
            paths,
        })
    }
}

impl Lane for ChainLane {
    fn candidate_count(&self) -> usize {
        self.sampler.distribution.answers.len()
    }
    fn draw(&mut self, size: usize, rng: &mut ChaCha12Rng) -> Result<Sample> {
        Ok(self.sampler.draw(size, rng))
    }
    fn validate(&mut self, answer: NodeId) -> Result<(bool, f64)> {
        let sim = self.composed.get(&answer).copied().unwrap_or(0.0);
        Ok((sim >= self.tau, sim))
    }
    fn convergence(&self) -> Vec<PiDiagnostics> {
        self.sampler
            .stage_convergence
            .iter()
            .map(|&(steps, residual, converged)| PiDiagnostics {
                steps,
                residual,
                converged,
            })
            .collect()
    }
    fn stage_breakdown(&self) -> Option<Vec<StageInfo>> {
        Some(self.sampler.stages.clone())
    }
    fn paths_examined(&self) -> usize {
        self.paths
    }
}

/// Per-round evaluation snapshot the termination logic works from.
struct RoundStats {
    v_hat: Option<f64>,
    epsilon: f64,
    pooled: ValidatedSample,
    groups: Option<BTreeMap<String, GroupReport>>,
}

enum Samples {
    /// One small sample per BLB slot.
    Split(Vec<Sample>),
    /// One pooled sample per composite subquery.
    PerSub(Vec<Sample>),
}

/// A stateful query run that can be resumed with a tighter error bound.
pub struct QuerySession<'a> {
    g: &'a KnowledgeGraph,
    query: AggregateQuery,
    cfg: EngineConfig,
    e_b: f64,
    lanes: Vec<Box<dyn Lane + 'a>>,
    samples: Samples,
    targets: Vec<usize>,
    per_sub_target: usize,
    round: u64,
    evaluations: usize,
    delta_history: Vec<usize>,
    moe_history: Vec<f64>,
    last: Option<RoundStats>,
    walk_proposals: usize,
    walk_rejections: usize,
    report: Option<EstimateReport>,
}

fn pack(round: u64, idx: usize) -> u64 {
    (round << 20) | idx as u64
}

impl<'a> QuerySession<'a> {
    pub fn new(
        g: &'a KnowledgeGraph,
        p: &'a SimilarityProvider,
        query: &AggregateQuery,
        cfg: EngineConfig,
    ) -> Result<Self> {
        query.validate()?;
        cfg.validate()?;

        let mut lanes: Vec<Box<dyn Lane + 'a>> = Vec::new();
        for sub in &query.subqueries {
            if sub.hops.len() == 1 {
                lanes.push(Box::new(SimpleLane::build(g, p, sub, &cfg)?));
            } else {
                lanes.push(Box::new(ChainLane::build(g, p, sub, &cfg)?));
            }
        }

        let candidates = lanes
            .iter()
            .map(|l| l.candidate_count())
            .min()
            .unwrap_or(0);
        let n_target = cfg.lambda * candidates as f64;
        let small = (n_target.powf(cfg.m).ceil() as usize).max(1);

        let composite = query.shape.is_composite();
        let samples = if composite {
            Samples::PerSub(vec![Sample::default(); lanes.len()])
        } else {
            Samples::Split(vec![Sample::default(); cfg.t])
        };

        Ok(QuerySession {
            g,
            e_b: cfg.e_b,
            query: query.clone(),
            targets: vec![small; cfg.t],
            per_sub_target: cfg.t * small,
            cfg,
            lanes,
            samples,
            round: 0,
            evaluations: 0,
            delta_history: Vec::new(),
            moe_history: Vec::new(),
            last: None,
            walk_proposals: 0,
            walk_rejections: 0,
            report: None,
        })
    }

    /// Runs the accuracy loop to completion and returns the report.
    pub fn run(&mut self) -> Result<EstimateReport> {
        if let Some(report) = &self.report {
            return Ok(report.clone());
        }
        if self.query.func.is_extreme() {
            return self.drive_extreme();
        }
        self.drive(self.cfg.max_iterations)
    }

    /// Re-runs the termination test under a new error bound, resuming the
    /// loop (with all retained samples and validations) only if needed.
    pub fn refine_error_bound(&mut self, new_e_b: f64) -> Result<EstimateReport> {
        if !(new_e_b > 0.0) {
            return Err(Error::DomainError(format!(
                "error bound must be positive, got {new_e_b}"
            )));
        }
        let Some(report) = &self.report else {
            return Err(Error::SessionExpired);
        };
        if self.query.func.is_extreme() {
            // Extreme estimates carry no bound to refine.
            return Ok(report.clone());
        }
        self.e_b = new_e_b;
        if self.met_now() {
            return Ok(self.report.clone().unwrap());
        }
        self.report = None;
        self.drive(self.cfg.max_iterations)
    }

    fn met_now(&self) -> bool {
        let Some(stats) = &self.last else {
            return false;
        };
        match (&stats.groups, stats.v_hat) {
            (Some(groups), _) => {
                let testable: Vec<&GroupReport> =
                    groups.values().filter(|g| !g.low_support).collect();
                !testable.is_empty()
                    && testable.iter().all(|g| {
                        g.estimate > 0.0
                            && termination_met(g.estimate, g.moe.unwrap_or(f64::INFINITY), self.e_b)
                    })
            }
            (None, Some(v_hat)) => {
                v_hat > 0.0 && termination_met(v_hat, stats.epsilon, self.e_b)
            }
            (None, None) => false,
        }
    }

    fn drive(&mut self, budget: usize) -> Result<EstimateReport> {
        let mut evals_this_phase = 0usize;
        if self.last.is_none() {
            self.grow_and_draw(None)?;
            self.evaluate()?;
            evals_this_phase += 1;
        }
        loop {
            if self.met_now() {
                return self.finish(TerminatedBy::BoundMet);
            }
            if evals_this_phase >= budget {
                return self.finish(TerminatedBy::IterationCap);
            }
            let delta = self.next_delta();
            self.delta_history.push(delta);
            self.grow_and_draw(Some(delta))?;
            self.evaluate()?;
            evals_this_phase += 1;
        }
    }

    /// Growth from the last round's numbers; the worst failing group decides
    /// for grouped queries. Capped at 10x the current size per round: the
    /// ε ~ size^(-m) model only holds locally, and an aggressive bound would
    /// otherwise request hundreds of millions of draws in one step.
    fn next_delta(&self) -> usize {
        let stats = self.last.as_ref().expect("delta needs a completed round");
        let size = stats.pooled.drawn_size();
        let cap = size.saturating_mul(10).max(1);
        let raw = if let Some(groups) = &stats.groups {
            let mut worst = 0usize;
            for g in groups.values() {
                if g.low_support {
                    continue;
                }
                let moe = g.moe.unwrap_or(f64::INFINITY);
                if g.estimate > 0.0 && termination_met(g.estimate, moe, self.e_b) {
                    continue;
                }
                worst = worst.max(configure_delta(g.estimate, moe, self.e_b, self.cfg.m, size));
            }
            if worst == 0 {
                // Only low-support groups left: double to build support.
                worst = size.max(1);
            }
            worst
        } else {
            match stats.v_hat {
                Some(v) if v > 0.0 => {
                    configure_delta(v, stats.epsilon, self.e_b, self.cfg.m, size)
                }
                _ => size.max(1),
            }
        };
        raw.min(cap)
    }

    /// Tops every sample up to its target size. `delta` (when given) is
    /// distributed round-robin before drawing.
    fn grow_and_draw(&mut self, delta: Option<usize>) -> Result<()> {
        self.round += 1;
        let round = self.round;
        match &mut self.samples {
            Samples::Split(smalls) => {
                if let Some(d) = delta {
                    let t = self.targets.len();
                    for k in 0..d {
                        self.targets[k % t] += 1;
                    }
                }
                let lane = &mut self.lanes[0];
                for (i, s) in smalls.iter_mut().enumerate() {
                    let want = self.targets[i].saturating_sub(s.entries.len());
                    if want == 0 {
                        continue;
                    }
                    let mut rng = stream(self.cfg.seed, "draw", pack(round, i));
                    let fresh = lane.draw(want, &mut rng)?;
                    self.walk_proposals += fresh.walk_proposals;
                    self.walk_rejections += fresh.walk_rejections;
                    s.entries.extend(fresh.entries);
                }
            }
            Samples::PerSub(subs) => {
                if let Some(d) = delta {
                    // Scale every subquery's pool so the intersection is
                    // expected to grow by the requested amount.
                    let have = self
                        .last
                        .as_ref()
                        .map(|s| s.pooled.drawn_size())
                        .unwrap_or(0)
                        .max(1);
                    let factor = (have + d) as f64 / have as f64;
                    self.per_sub_target =
                        ((self.per_sub_target as f64 * factor).ceil() as usize)
                            .max(self.per_sub_target + 1);
                }
                for (i, (lane, s)) in self.lanes.iter_mut().zip(subs.iter_mut()).enumerate() {
                    let want = self.per_sub_target.saturating_sub(s.entries.len());
                    if want == 0 {
                        continue;
                    }
                    let mut rng = stream(self.cfg.seed, "draw-sub", pack(round, i));
                    let fresh = lane.draw(want, &mut rng)?;
                    self.walk_proposals += fresh.walk_proposals;
                    self.walk_rejections += fresh.walk_rejections;
                    s.entries.extend(fresh.entries);
                }
            }
        }
        Ok(())
    }

    /// Validates one raw sample through a lane (or all lanes for composite
    /// intersections) and applies the query's filters.
    fn validate_entries(
        g: &KnowledgeGraph,
        lanes: &mut [Box<dyn Lane + 'a>],
        filters: &[FilterSpec],
        s: &Sample,
    ) -> Result<ValidatedSample> {
        let mut accepted = Vec::new();
        let mut rejected = 0usize;
        for entry in &s.entries {
            let mut ok = true;
            let mut sim = f64::INFINITY;
            for lane in lanes.iter_mut() {
                let (lane_ok, lane_sim) = lane.validate(entry.answer)?;
                ok &= lane_ok;
                sim = sim.min(lane_sim);
                if !ok {
                    break;
                }
            }
            let node = g.node(entry.answer);
            let passes = ok
                && filters
                    .iter()
                    .all(|f| f.accepts(node.attrs.get(&f.attr).copied()));
            if passes {
                accepted.push(ValidatedEntry {
                    answer: entry.answer,
                    prob: entry.prob,
                    similarity: sim,
                    attrs: node.attrs.clone(),
                });
            } else {
                rejected += 1;
            }
        }
        Ok(ValidatedSample {
            accepted,
            rejected_count: rejected,
            validation_paths_examined: 0,
        })
    }

    /// Current little samples in validated form, plus the pooled sample.
    fn validated_state(&mut self) -> Result<(Vec<ValidatedSample>, ValidatedSample)> {
        let filters = self.query.filters.clone();
        match &self.samples {
            Samples::Split(smalls) => {
                let smalls = smalls.clone();
                let mut validated = Vec::with_capacity(smalls.len());
                for s in &smalls {
                    validated.push(Self::validate_entries(
                        self.g,
                        &mut self.lanes,
                        &filters,
                        s,
                    )?);
                }
                let pooled = merge_validated(&validated);
                Ok((validated, pooled))
            }
            Samples::PerSub(subs) => {
                let intersected = intersect_samples(subs)?;
                let vs =
                    Self::validate_entries(self.g, &mut self.lanes, &filters, &intersected)?;
                // The intersection collapses to distinct answers; split it
                // round-robin into pseudo little samples for the bootstrap.
                let t = self.cfg.t;
                let mut parts: Vec<ValidatedSample> = (0..t)
                    .map(|_| ValidatedSample::default())
                    .collect();
                for (k, e) in vs.accepted.iter().enumerate() {
                    parts[k % t].accepted.push(e.clone());
                }
                for k in 0..vs.rejected_count {
                    parts[(vs.accepted.len() + k) % t].rejected_count += 1;
                }
                parts.retain(|p| p.drawn_size() > 0);
                if parts.is_empty() {
                    parts.push(ValidatedSample::default());
                }
                Ok((parts, vs))
            }
        }
    }

    fn evaluate(&mut self) -> Result<()> {
        let (validated, pooled) = match self.validated_state() {
            Ok(v) => v,
            Err(Error::EmptyIntersection) => {
                // Not enough overlap yet; record a no-estimate round so the
                // driver grows the per-subquery pools.
                self.evaluations += 1;
                self.last = Some(RoundStats {
                    v_hat: None,
                    epsilon: f64::INFINITY,
                    pooled: ValidatedSample::default(),
                    groups: None,
                });
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        self.evaluations += 1;
        let func = self.query.func;
        let attr = self.query.attr.clone();

        let v_hat = match estimate(&pooled, func, attr.as_deref()) {
            Ok(pe) => Some(pe.value),
            Err(Error::EmptyValidatedSample(_)) => None,
            Err(e) => return Err(e),
        };

        let mut rng = stream(self.cfg.seed, "bootstrap", self.evaluations as u64);
        let epsilon = match blb_moe(
            &validated,
            func,
            attr.as_deref(),
            self.cfg.alpha,
            self.cfg.bootstrap_resamples,
            &mut rng,
        ) {
            Ok((eps, _)) => eps,
            Err(Error::EmptyValidatedSample(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        self.moe_history.push(epsilon);

        let groups = match &self.query.group_by {
            Some(gs) => Some(self.evaluate_groups(&validated, &pooled, gs)?),
            None => None,
        };

        self.last = Some(RoundStats {
            v_hat,
            epsilon,
            pooled,
            groups,
        });
        Ok(())
    }

    fn evaluate_groups(
        &self,
        validated: &[ValidatedSample],
        pooled: &ValidatedSample,
        gs: &GroupSpec,
    ) -> Result<BTreeMap<String, GroupReport>> {
        let func = self.query.func;
        let attr = self.query.attr.as_deref();
        let mut keys: Vec<String> = Vec::new();
        for e in &pooled.accepted {
            if let Some(&v) = e.attrs.get(&gs.attr) {
                if let Some(k) = crate::query::group_key(gs, v) {
                    if !keys.contains(&k) {
                        keys.push(k);
                    }
                }
            }
        }
        keys.sort();

        let mut out = BTreeMap::new();
        for (ordinal, key) in keys.iter().enumerate() {
            let pooled_g = restrict_to_group(pooled, gs, key);
            let pe = match estimate(&pooled_g, func, attr) {
                Ok(pe) => pe,
                Err(Error::EmptyValidatedSample(_)) => continue,
                Err(e) => return Err(e),
            };
            let low_support = pe.basis_size < 5;
            let (moe, ci) = if low_support || func.is_extreme() {
                (None, None)
            } else {
                let smalls_g: Vec<ValidatedSample> = validated
                    .iter()
                    .map(|vs| restrict_to_group(vs, gs, key))
                    .collect();
                let mut rng = stream(
                    self.cfg.seed,
                    "bootstrap-group",
                    (self.evaluations as u64) << 16 | ordinal as u64,
                );
                match blb_moe(
                    &smalls_g,
                    func,
                    attr,
                    self.cfg.alpha,
                    self.cfg.bootstrap_resamples,
                    &mut rng,
                ) {
                    Ok((eps, _)) => (Some(eps), Some([pe.value - eps, pe.value + eps])),
                    Err(Error::EmptyValidatedSample(_)) => (None, None),
                    Err(e) => return Err(e),
                }
            };
            out.insert(
                key.clone(),
                GroupReport {
                    estimate: pe.value,
                    moe,
                    ci,
                    basis_size: pe.basis_size,
                    low_support,
                },
            );
        }
        Ok(out)
    }

    /// MAX/MIN loop: fixed growth for a fixed number of rounds, reporting
    /// the extreme seen; no interval is attached.
    fn drive_extreme(&mut self) -> Result<EstimateReport> {
        const EXTREME_ROUNDS: usize = 8;
        let per_round = ((self.cfg.extreme_sample_ratio
            * self.lanes.iter().map(|l| l.candidate_count()).min().unwrap_or(0) as f64)
            .ceil() as usize)
            .max(1);

        let mut best: Option<f64> = None;
        let mut pooled_final = ValidatedSample::default();
        for round in 0..EXTREME_ROUNDS {
            let delta = if round == 0 { None } else { Some(per_round) };
            if let Some(d) = delta {
                self.delta_history.push(d);
            }
            self.grow_and_draw(delta)?;
            let (_, pooled) = match self.validated_state() {
                Ok(v) => v,
                Err(Error::EmptyIntersection) => continue,
                Err(e) => return Err(e),
            };
            self.evaluations += 1;
            match estimate(&pooled, self.query.func, self.query.attr.as_deref()) {
                Ok(pe) => {
                    best = Some(match (best, self.query.func) {
                        (None, _) => pe.value,
                        (Some(b), AggregateFunc::Max) => b.max(pe.value),
                        (Some(b), _) => b.min(pe.value),
                    });
                }
                Err(Error::EmptyValidatedSample(_)) => {}
                Err(e) => return Err(e),
            }
            pooled_final = pooled;
        }

        let Some(value) = best else {
            return Err(Error::EmptyValidatedSample(
                "no accepted answer carried the attribute in any round".into(),
            ));
        };
        let groups = match &self.query.group_by {
            Some(gs) => {
                let grouped = crate::estimate::estimate_grouped(
                    &pooled_final,
                    self.query.func,
                    self.query.attr.as_deref(),
                    gs,
                )?;
                grouped.per_group.map(|m| {
                    m.into_iter()
                        .map(|(k, g)| {
                            (
                                k,
                                GroupReport {
                                    estimate: g.value,
                                    moe: None,
                                    ci: None,
                                    basis_size: g.basis_size,
                                    low_support: g.basis_size < 5,
                                },
                            )
                        })
                        .collect()
                })
            }
            None => None,
        };
        let report = EstimateReport {
            estimate: value,
            moe: None,
            ci: None,
            confidence: 1.0 - self.cfg.alpha,
            iterations: EXTREME_ROUNDS,
            sample_size: pooled_final.drawn_size(),
            validated_size: pooled_final.accepted.len(),
            delta_history: self.delta_history.clone(),
            terminated_by: TerminatedBy::IterationCap,
            groups,
            diagnostics: self.diagnostics(),
        };
        self.report = Some(report.clone());
        Ok(report)
    }

    fn diagnostics(&self) -> Diagnostics {
        let mut pi = Vec::new();
        let mut stage_breakdown: Option<Vec<StageInfo>> = None;
        for lane in &self.lanes {
            pi.extend(lane.convergence());
            if let Some(stages) = lane.stage_breakdown() {
                stage_breakdown
                    .get_or_insert_with(Vec::new)
                    .extend(stages);
            }
        }
        let (rejected, missing) = self
            .last
            .as_ref()
            .map(|s| {
                let missing = match self.query.attr.as_deref() {
                    Some(a) => s
                        .pooled
                        .accepted
                        .iter()
                        .filter(|e| !e.attrs.contains_key(a))
                        .count(),
                    None => 0,
                };
                (s.pooled.rejected_count, missing)
            })
            .unwrap_or((0, 0));
        Diagnostics {
            pi,
            validation_paths: self.lanes.iter().map(|l| l.paths_examined()).sum(),
            rejected_draws: rejected,
            missing_attr: missing,
            walk_proposals: self.walk_proposals,
            walk_rejections: self.walk_rejections,
            stage_breakdown,
            moe_history: self.moe_history.clone(),
        }
    }

    fn finish(&mut self, terminated_by: TerminatedBy) -> Result<EstimateReport> {
        let stats = self.last.as_ref().expect("finish needs a completed round");
        if terminated_by == TerminatedBy::IterationCap {
            if let Samples::PerSub(_) = self.samples {
                if stats.v_hat.is_none() && stats.pooled.drawn_size() == 0 {
                    return Err(Error::EmptyIntersection);
                }
            }
        }
        let v_hat = match stats.v_hat {
            Some(v) => v,
            None => match estimate(&stats.pooled, self.query.func, self.query.attr.as_deref()) {
                Ok(pe) => pe.value,
                Err(e) => return Err(e),
            },
        };
        let epsilon = stats.epsilon;
        let report = EstimateReport {
            estimate: v_hat,
            moe: Some(epsilon),
            ci: Some([v_hat - epsilon, v_hat + epsilon]),
            confidence: 1.0 - self.cfg.alpha,
            iterations: self.evaluations,
            sample_size: stats.pooled.drawn_size(),
            validated_size: stats.pooled.accepted.len(),
            delta_history: self.delta_history.clone(),
            terminated_by,
            groups: stats.groups.clone(),
            diagnostics: self.diagnostics(),
        };
        self.report = Some(report.clone());
        Ok(report)
    }
}

fn merge_validated(parts: &[ValidatedSample]) -> ValidatedSample {
    let mut out = ValidatedSample::default();
    for p in parts {
        out.accepted.extend(p.accepted.iter().cloned());
        out.rejected_count += p.rejected_count;
        out.validation_paths_examined += p.validation_paths_examined;
    }
    out
}

fn restrict_to_group(vs: &ValidatedSample, gs: &GroupSpec, key: &str) -> ValidatedSample {
    let accepted: Vec<ValidatedEntry> = vs
        .accepted
        .iter()
        .filter(|e| {
            e.attrs
                .get(&gs.attr)
                .and_then(|&v| crate::query::group_key(gs, v))
                .is_some_and(|k| k == key)
        })
        .cloned()
        .collect();
    let rejected_count = vs.drawn_size() - accepted.len();
    ValidatedSample {
        accepted,
        rejected_count,
        validation_paths_examined: 0,
    }
}

/// End-to-end query evaluation with a fresh session.
pub fn run_query(
    g: &KnowledgeGraph,
    p: &SimilarityProvider,
    q: &AggregateQuery,
    cfg: &EngineConfig,
) -> Result<EstimateReport> {
    QuerySession::new(g, p, q, cfg.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_graph_from_readers;
    use crate::query::parse_query;
    use crate::semantics::load_simtable_from_reader;
    use rand::SeedableRng;
    use std::io::Cursor;

    #[test]
    fn critical_values_match_the_frozen_table() {
        assert!((normal_critical(0.05).unwrap() - 1.959964).abs() < 1e-6);
        assert!((normal_critical(0.10).unwrap() - 1.644854).abs() < 1e-6);
        assert!((normal_critical(0.01).unwrap() - 2.575829).abs() < 1e-6);
        assert!(normal_critical(0.0).is_err());
        assert!(normal_critical(1.0).is_err());
    }

    #[test]
    fn critical_values_match_an_independent_implementation() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        for i in 1..200 {
            let alpha = i as f64 / 200.0;
            let expected = normal.inverse_cdf(1.0 - alpha / 2.0);
            let got = normal_critical(alpha).unwrap();
            assert!((got - expected).abs() < 1e-7, "alpha = {alpha}");
        }
    }

    fn vs_of(entries: &[(f64, Option<f64>)]) -> ValidatedSample {
        ValidatedSample {
            accepted: entries
                .iter()
                .enumerate()
                .map(|(i, &(prob, attr))| ValidatedEntry {
                    answer: NodeId(i as u32),
                    prob,
                    similarity: 1.0,
                    attrs: attr
                        .map(|v| [("a".to_string(), v)].into())
                        .unwrap_or_default(),
                })
                .collect(),
            rejected_count: 0,
            validation_paths_examined: 0,
        }
    }

    #[test]
    fn identical_entries_bootstrap_to_zero_spread() {
        let vs = vs_of(&[(0.5, None), (0.5, None), (0.5, None)]);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let stats = bootstrap_sigma(&vs, AggregateFunc::Count, None, 50, &mut rng).unwrap();
        assert_eq!(stats.sigma, 0.0);
        assert!((stats.mu - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_entry_bootstrap_matches_the_analytic_spread() {
        // Resampling 2 slots from {1/0.5, 1/0.25}: estimates {2, 3, 4} with
        // probabilities {1/4, 1/2, 1/4}, so sigma = sqrt(1/2).
        let vs = vs_of(&[(0.5, None), (0.25, None)]);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let stats =
            bootstrap_sigma(&vs, AggregateFunc::Count, None, 10_000, &mut rng).unwrap();
        let analytic = 0.5f64.sqrt();
        assert!(
            (stats.sigma - analytic).abs() / analytic < 0.05,
            "sigma = {}",
            stats.sigma
        );
    }

    #[test]
    fn bootstrap_is_deterministic_per_seed() {
        let vs = vs_of(&[(0.5, Some(3.0)), (0.25, Some(5.0)), (0.2, Some(1.0))]);
        let mut a = ChaCha12Rng::seed_from_u64(9);
        let mut b = ChaCha12Rng::seed_from_u64(9);
        let ra = bootstrap_sigma(&vs, AggregateFunc::Sum, Some("a"), 100, &mut a).unwrap();
        let rb = bootstrap_sigma(&vs, AggregateFunc::Sum, Some("a"), 100, &mut b).unwrap();
        assert_eq!(ra.resample_estimates, rb.resample_estimates);
    }

    #[test]
    fn moe_over_one_small_sample_is_that_samples_moe() {
        let vs = vs_of(&[(0.5, None), (0.25, None), (0.5, None)]);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (eps, per) = blb_moe(
            std::slice::from_ref(&vs),
            AggregateFunc::Count,
            None,
            0.05,
            200,
            &mut rng,
        )
        .unwrap();
        assert_eq!(per.len(), 1);
        assert_eq!(eps, per[0]);
    }

    #[test]
    fn moe_is_the_mean_of_per_sample_moes() {
        let smalls = vec![
            vs_of(&[(0.5, None), (0.25, None)]),
            vs_of(&[(0.4, None), (0.3, None)]),
            vs_of(&[(0.6, None), (0.2, None)]),
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let (eps, per) =
            blb_moe(&smalls, AggregateFunc::Count, None, 0.05, 200, &mut rng).unwrap();
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        assert_eq!(eps, mean);
    }

    #[test]
    fn identical_small_samples_agree_within_bootstrap_noise() {
        let vs = vs_of(&[(0.5, None), (0.25, None), (0.4, None), (0.3, None)]);
        let smalls = vec![vs.clone(), vs.clone(), vs];
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let (eps, per) =
            blb_moe(&smalls, AggregateFunc::Count, None, 0.05, 5_000, &mut rng).unwrap();
        for e in &per {
            assert!((e - eps).abs() / eps < 0.02, "per = {per:?}");
        }
    }

    #[test]
    fn termination_threshold_is_exact_and_inclusive() {
        // threshold = 578 * 0.01 / 1.01 = 5.722772...
        let threshold = 578.0 * 0.01 / 1.01;
        assert!(termination_met(578.0, threshold, 0.01));
        assert!(termination_met(578.0, 5.7227, 0.01));
        assert!(!termination_met(578.0, 5.7229, 0.01));
        assert!(!termination_met(578.0, 6.5, 0.01));
        assert!(termination_met(100.0, 0.0, 0.01));
        assert!(!termination_met(0.0, 1.0, 0.01));
    }

    #[test]
    fn growth_sizing_reproduces_the_worked_example() {
        assert_eq!(configure_delta(578.0, 6.5, 0.01, 0.6, 100), 16);
    }

    #[test]
    fn growth_sizing_boundary_behavior() {
        // At the threshold the raw formula gives 0; the floor is 1.
        let threshold = 578.0 * 0.01 / 1.01;
        assert_eq!(configure_delta(578.0, threshold, 0.01, 0.6, 100), 1);
        // ratio 2 with m = 0.5 doubles the sample exactly.
        let eps = 2.0 * threshold;
        assert_eq!(configure_delta(578.0, eps, 0.01, 0.5, 100), 100);
        // A useless estimate doubles the sample.
        assert_eq!(configure_delta(0.0, 1.0, 0.01, 0.6, 64), 64);
    }

    fn fixture() -> (KnowledgeGraph, SimilarityProvider) {
        // Germany with four automobiles; KIA_K5's only path scores 0.82 and
        // fails τ = 0.85, so the correct COUNT is 3.
        let g = load_graph_from_readers(
            Cursor::new(
                "g\tGermany\tCountry\nx6\tBMW_X6\tAutomobile\nb320\tBMW_320\tAutomobile\n\
                 vw\tVolkswagen\tCompany\ntt\tAudi_TT\tAutomobile\n\
                 ps\tPeter_Schreyer\tPerson\nk5\tKIA_K5\tAutomobile\n",
            ),
            "nodes.tsv",
            Cursor::new(
                "x6\tproduct\tg\nb320\tassembly\tg\nvw\tcountry\tg\ntt\tassembly\tvw\n\
                 ps\tnationality\tg\nk5\tdesigner\tps\n",
            ),
            "edges.tsv",
            Cursor::new(
                "x6\tprice\t60000\nb320\tprice\t36000\ntt\tprice\t40000\nk5\tprice\t22000\n\
                 x6\tyear\t2020\nb320\tyear\t2020\ntt\tyear\t2010\n",
            ),
            "attrs.tsv",
        )
        .unwrap();
        let p = load_simtable_from_reader(
            Cursor::new(
                "product\tproduct\t1.0\nassembly\tproduct\t0.98\ncountry\tproduct\t0.81\n\
                 nationality\tproduct\t0.82\ndesigner\tproduct\t0.82\n",
            ),
            "simtable.tsv",
        )
        .unwrap();
        (g, p)
    }

    fn count_query(extra: &str) -> AggregateQuery {
        parse_query(&format!(
            r#"{{"shape":"simple","subqueries":[{{"specific":{{"name":"Germany","types":["Country"]}},
                "hops":[{{"types":["Automobile"],"predicate":"product"}}]}}],
                "func":"count"{extra}}}"#,
        ))
        .unwrap()
    }

    #[test]
    fn count_run_terminates_and_honors_the_threshold() {
        let (g, p) = fixture();
        let q = count_query(r#","config":{"n":2,"e_b":0.3,"lambda":1.0,"seed":5}"#);
        let report = run_query(&g, &p, &q, &q.config).unwrap();
        assert_eq!(report.terminated_by, TerminatedBy::BoundMet);
        let moe = report.moe.unwrap();
        assert!(moe <= report.estimate * 0.3 / 1.3 + 1e-12);
        let ci = report.ci.unwrap();
        assert!((ci[0] - (report.estimate - moe)).abs() < 1e-12);
        assert!((ci[1] - (report.estimate + moe)).abs() < 1e-12);
        assert!(report.estimate > 1.0 && report.estimate < 5.0);
        assert_eq!(report.confidence, 0.95);
        assert!(report.sample_size >= report.validated_size);
    }

    #[test]
    fn reports_are_reproducible_per_seed() {
        let (g, p) = fixture();
        let q = count_query(r#","config":{"n":2,"e_b":0.25,"lambda":1.0,"seed":42}"#);
        let a = run_query(&g, &p, &q, &q.config).unwrap();
        let b = run_query(&g, &p, &q, &q.config).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn tiny_bound_hits_the_iteration_cap() {
        let (g, p) = fixture();
        let q = count_query(
            r#","config":{"n":2,"e_b":1e-9,"lambda":1.0,"seed":1,"max_iterations":3}"#,
        );
        let report = run_query(&g, &p, &q, &q.config).unwrap();
        assert_eq!(report.terminated_by, TerminatedBy::IterationCap);
        assert_eq!(report.iterations, 3);
        assert_eq!(report.delta_history.len(), 2);
    }

    #[test]
    fn loosening_the_bound_changes_nothing() {
        let (g, p) = fixture();
        let q = count_query(r#","config":{"n":2,"e_b":0.3,"lambda":1.0,"seed":5}"#);
        let mut session = QuerySession::new(&g, &p, &q, q.config.clone()).unwrap();
        let first = session.run().unwrap();
        let relaxed = session.refine_error_bound(0.9).unwrap();
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&relaxed).unwrap()
        );
    }

    #[test]
    fn tightening_the_bound_grows_by_the_predicted_delta() {
        let (g, p) = fixture();
        let q = count_query(r#","config":{"n":2,"e_b":0.5,"lambda":1.0,"seed":6}"#);
        let mut session = QuerySession::new(&g, &p, &q, q.config.clone()).unwrap();
        let first = session.run().unwrap();
        assert_eq!(first.terminated_by, TerminatedBy::BoundMet);

        let paths_before = first.diagnostics.validation_paths;
        let new_eb = 0.05;
        let expected_delta = configure_delta(
            first.estimate,
            first.moe.unwrap(),
            new_eb,
            q.config.m,
            first.sample_size,
        );
        let second = session.refine_error_bound(new_eb).unwrap();
        assert_eq!(
            second.delta_history[first.delta_history.len()],
            expected_delta
        );
        // Every distinct answer was validated in phase one; resuming must
        // not search any new paths.
        assert_eq!(second.diagnostics.validation_paths, paths_before);
    }

    #[test]
    fn refine_without_a_run_is_an_expired_session() {
        let (g, p) = fixture();
        let q = count_query("");
        let mut session = QuerySession::new(&g, &p, &q, q.config.clone()).unwrap();
        assert!(matches!(
            session.refine_error_bound(0.5),
            Err(Error::SessionExpired)
        ));
    }

    #[test]
    fn absent_target_type_reports_no_candidates() {
        let (g, p) = fixture();
        let q = parse_query(
            r#"{"shape":"simple","subqueries":[{"specific":{"name":"Germany","types":["Country"]},
                "hops":[{"types":["Spaceship"],"predicate":"product"}]}],"func":"count"}"#,
        )
        .unwrap();
        assert!(matches!(
            run_query(&g, &p, &q, &q.config),
            Err(Error::NoCandidates(_))
        ));
    }

    #[test]
    fn grouped_run_reports_per_group_intervals() {
        let (g, p) = fixture();
        let q = parse_query(
            r#"{"shape":"simple","subqueries":[{"specific":{"name":"Germany","types":["Country"]},
                "hops":[{"types":["Automobile"],"predicate":"product"}]}],
                "func":"count","group_by":{"attr":"year"},
                "config":{"n":2,"e_b":0.4,"lambda":1.0,"seed":3,"max_iterations":6}}"#,
        )
        .unwrap();
        let report = run_query(&g, &p, &q, &q.config).unwrap();
        let groups = report.groups.as_ref().unwrap();
        // x6 and b320 are year 2020; tt is 2010; k5 never validates.
        assert!(groups.contains_key("2020"));
        assert!(groups.contains_key("2010"));
        for g in groups.values() {
            if !g.low_support {
                let moe = g.moe.unwrap();
                assert!(g.ci.unwrap()[0] <= g.estimate - moe + 1e-12);
            }
        }
        if report.terminated_by == TerminatedBy::BoundMet {
            for g in groups.values() {
                if !g.low_support {
                    assert!(termination_met(g.estimate, g.moe.unwrap(), 0.4));
                }
            }
        }
    }

    #[test]
    fn extreme_runs_report_no_interval_and_cap_out() {
        let (g, p) = fixture();
        let q = parse_query(
            r#"{"shape":"simple","subqueries":[{"specific":{"name":"Germany","types":["Country"]},
                "hops":[{"types":["Automobile"],"predicate":"product"}]}],
                "func":"max","attr":"price","config":{"n":2,"lambda":1.0,"seed":4}}"#,
        )
        .unwrap();
        let report = run_query(&g, &p, &q, &q.config).unwrap();
        assert!(report.moe.is_none());
        assert!(report.ci.is_none());
        assert_eq!(report.terminated_by, TerminatedBy::IterationCap);
        assert_eq!(report.iterations, 8);
        // Max price among validated automobiles (k5 is rejected): 60000.
        assert_eq!(report.estimate, 60000.0);
    }

    fn chain_fixture() -> (KnowledgeGraph, SimilarityProvider) {
        let g = load_graph_from_readers(
            Cursor::new(
                "a\tAnchor\tS\nm1\tM1\tM\nm2\tM2\tM\nt\tT\tE\nx\tX\tE\ny\tY\tE\n",
            ),
            "nodes.tsv",
            Cursor::new(
                "a\tp95\tm1\na\tp90\tm2\nm1\tq90\tt\nm1\tq90\tx\nm2\tq90\tt\nm2\tq90\ty\n",
            ),
            "edges.tsv",
            Cursor::new(""),
            "attrs.tsv",
        )
        .unwrap();
        let p = load_simtable_from_reader(
            Cursor::new(
                "p95\trel1\t0.95\np90\trel1\t0.9\nq90\trel2\t0.9\n\
                 p95\trel2\t0.0\np90\trel2\t0.0\nq90\trel1\t0.0\n",
            ),
            "simtable.tsv",
        )
        .unwrap();
        (g, p)
    }

    #[test]
    fn chain_count_run_estimates_the_reachable_answers() {
        let (g, p) = chain_fixture();
        let q = parse_query(
            r#"{"shape":"chain","subqueries":[{"specific":{"name":"Anchor","types":["S"]},
                "hops":[{"types":["M"],"predicate":"rel1"},{"types":["E"],"predicate":"rel2"}]}],
                "func":"count","config":{"n":1,"e_b":0.3,"lambda":1.0,"seed":8}}"#,
        )
        .unwrap();
        let report = run_query(&g, &p, &q, &q.config).unwrap();
        // All three final answers compose min(0.9..0.95, 0.9) = 0.9 ≥ τ.
        assert!(report.estimate > 1.5 && report.estimate < 4.5);
        assert!(report.diagnostics.stage_breakdown.is_some());
        assert!(report.diagnostics.pi.len() >= 3);
    }

    fn star_fixture() -> (KnowledgeGraph, SimilarityProvider) {
        // Two anchors sharing two automobiles; one automobile each besides.
        let g = load_graph_from_readers(
            Cursor::new(
                "g\tGermany\tCountry\nh\tHans\tPerson\nc1\tCar1\tAutomobile\n\
                 c2\tCar2\tAutomobile\nc3\tCar3\tAutomobile\nc4\tCar4\tAutomobile\n",
            ),
            "nodes.tsv",
            Cursor::new(
                "c1\tassembly\tg\nc2\tassembly\tg\nc3\tassembly\tg\n\
                 c1\tdesign\th\nc2\tdesign\th\nc4\tdesign\th\n",
            ),
            "edges.tsv",
            Cursor::new(""),
            "attrs.tsv",
        )
        .unwrap();
        let p = load_simtable_from_reader(
            Cursor::new("assembly\tproduct\t0.98\ndesign\tdesigner\t0.95\nassembly\tdesigner\t0.0\ndesign\tproduct\t0.0\n"),
            "simtable.tsv",
        )
        .unwrap();
        (g, p)
    }

    #[test]
    fn composite_run_estimates_the_intersection() {
        let (g, p) = star_fixture();
        let q = parse_query(
            r#"{"shape":"star","subqueries":[
                {"specific":{"name":"Germany","types":["Country"]},
                 "hops":[{"types":["Automobile"],"predicate":"product"}]},
                {"specific":{"name":"Hans","types":["Person"]},
                 "hops":[{"types":["Automobile"],"predicate":"designer"}]}],
                "func":"count","config":{"n":1,"e_b":0.45,"lambda":1.0,"seed":2,"max_iterations":8}}"#,
        )
        .unwrap();
        let report = run_query(&g, &p, &q, &q.config).unwrap();
        // Intersection is {c1, c2}.
        assert!(report.estimate > 0.5 && report.estimate < 3.5, "est = {}", report.estimate);
    }

    #[test]
    fn disjoint_composite_fails_with_empty_intersection() {
        let g = load_graph_from_readers(
            Cursor::new(
                "g\tGermany\tCountry\nh\tHans\tPerson\nc1\tCar1\tAutomobile\nc2\tCar2\tAutomobile\n",
            ),
            "nodes.tsv",
            Cursor::new("c1\tassembly\tg\nc2\tdesign\th\n"),
            "edges.tsv",
            Cursor::new(""),
            "attrs.tsv",
        )
        .unwrap();
        let p = load_simtable_from_reader(
            Cursor::new("assembly\tproduct\t0.98\ndesign\tdesigner\t0.95\nassembly\tdesigner\t0.0\ndesign\tproduct\t0.0\n"),
            "simtable.tsv",
        )
        .unwrap();
        let q = parse_query(
            r#"{"shape":"star","subqueries":[
                {"specific":{"name":"Germany","types":["Country"]},
                 "hops":[{"types":["Automobile"],"predicate":"product"}]},
                {"specific":{"name":"Hans","types":["Person"]},
                 "hops":[{"types":["Automobile"],"predicate":"designer"}]}],
                "func":"count","config":{"n":1,"seed":2,"max_iterations":3}}"#,
        )
        .unwrap();
        assert!(matches!(
            run_query(&g, &p, &q, &q.config),
            Err(Error::EmptyIntersection)
        ));
    }

    #[test]
    fn moe_shrinks_across_rounds_in_most_runs() {
        let (g, p) = fixture();
        let mut shrank = 0;
        let runs = 40;
        for seed in 0..runs {
            let q = count_query(&format!(
                r#","config":{{"n":2,"e_b":1e-6,"lambda":1.0,"seed":{seed},"max_iterations":4}}"#
            ));
            let report = run_query(&g, &p, &q, &q.config).unwrap();
            let h = &report.diagnostics.moe_history;
            if h.windows(2).all(|w| w[1] <= w[0] + 1e-12) {
                shrank += 1;
            }
        }
        assert!(shrank * 10 >= runs * 9, "{shrank}/{runs} runs shrank monotonically");
    }
}
