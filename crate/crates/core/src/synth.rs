//! Deterministic synthetic knowledge graphs for tests and benchmarks.
//!
//! A generator spec describes background nodes (count per type), a predicate
//! vocabulary, a random edge budget, and attribute ranges. It may also plant
//! a star: one anchor wired to `correct` candidates through a predicate of
//! known high similarity and `incorrect` candidates through one of known low
//! similarity. The planted component is kept disconnected from the random
//! background so its similarity structure, and therefore the exact answer
//! set, is known by construction and emitted as a ground-truth sidecar.
//!
//! Generation is reproducible: the same spec and seed produce byte-identical
//! TSV output.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_graph_from_readers, KnowledgeGraph};
use crate::rng::stream;
use crate::semantics::{load_simtable_from_reader, SimilarityProvider};

/// Parallel edges allowed between one node pair before a draw is rejected.
const PAIR_MULTIPLICITY_CAP: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttrRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// Fraction of nodes that carry the attribute.
    #[serde(default = "default_coverage")]
    pub coverage: f64,
}

fn default_coverage() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedSpec {
    #[serde(default = "default_anchor_name")]
    pub anchor_name: String,
    #[serde(default = "default_anchor_type")]
    pub anchor_type: String,
    pub target_type: String,
    /// Reference predicate the emitted similarity table is keyed against.
    pub query_predicate: String,
    pub correct: usize,
    pub incorrect: usize,
    #[serde(default = "default_correct_predicate")]
    pub correct_predicate: String,
    #[serde(default = "default_incorrect_predicate")]
    pub incorrect_predicate: String,
    #[serde(default = "default_correct_similarity")]
    pub correct_similarity: f64,
    #[serde(default = "default_incorrect_similarity")]
    pub incorrect_similarity: f64,
}

fn default_anchor_name() -> String {
    "Anchor".into()
}
fn default_anchor_type() -> String {
    "Anchor".into()
}
fn default_correct_predicate() -> String {
    "match_pred".into()
}
fn default_incorrect_predicate() -> String {
    "decoy_pred".into()
}
fn default_correct_similarity() -> f64 {
    1.0
}
fn default_incorrect_similarity() -> f64 {
    0.5
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Background node count per type.
    #[serde(default)]
    pub types: BTreeMap<String, usize>,
    /// Background predicate vocabulary.
    #[serde(default)]
    pub predicates: Vec<String>,
    /// Random edges among background nodes.
    #[serde(default)]
    pub edges: usize,
    #[serde(default)]
    pub attrs: Vec<AttrRange>,
    #[serde(default)]
    pub planted: Option<PlantedSpec>,
    /// Reference predicate for background-only specs; a planted spec's
    /// `query_predicate` takes precedence.
    #[serde(default)]
    pub query_predicate: Option<String>,
}

/// What is true of the planted star, independent of any estimator.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    pub anchor: String,
    pub anchor_type: String,
    pub target_type: String,
    pub query_predicate: String,
    /// Names of candidates whose only path scores `correct_similarity`.
    pub correct: Vec<String>,
    /// Names of candidates whose only path scores `incorrect_similarity`.
    pub incorrect: Vec<String>,
    pub correct_similarity: f64,
    pub incorrect_similarity: f64,
    /// Sum of each attribute over correct candidates that carry it.
    pub attr_sums: BTreeMap<String, f64>,
    /// How many correct candidates carry each attribute.
    pub attr_counts: BTreeMap<String, usize>,
}

/// A generated graph plus everything needed to query it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub graph: KnowledgeGraph,
    pub provider: SimilarityProvider,
    /// TSV sources; reloading them reproduces `graph` and `provider`.
    pub nodes_tsv: String,
    pub edges_tsv: String,
    pub attrs_tsv: String,
    pub simtable_tsv: String,
    pub truth: Option<GroundTruth>,
}

fn feasibility(spec: &GeneratorSpec) -> Result<usize> {
    let background: usize = spec.types.values().sum();
    if spec.edges > 0 {
        if spec.predicates.is_empty() {
            return Err(Error::InfeasibleSpec(
                "random edges requested but the predicate vocabulary is empty".into(),
            ));
        }
        if background < 2 {
            return Err(Error::InfeasibleSpec(format!(
                "{} random edges requested over {background} background nodes",
                spec.edges
            )));
        }
        let pairs = background * (background - 1) / 2;
        let max_edges = pairs * PAIR_MULTIPLICITY_CAP;
        if spec.edges > max_edges {
            return Err(Error::InfeasibleSpec(format!(
                "{} edges exceed {pairs} node pairs x multiplicity cap {PAIR_MULTIPLICITY_CAP}",
                spec.edges
            )));
        }
    }
    if let Some(p) = &spec.planted {
        if !(p.correct_similarity > 0.0 && p.correct_similarity <= 1.0)
            || !(p.incorrect_similarity > 0.0 && p.incorrect_similarity <= 1.0)
        {
            return Err(Error::InfeasibleSpec(
                "planted similarities must lie in (0, 1]".into(),
            ));
        }
    }
    for a in &spec.attrs {
        if !(a.min <= a.max) || !a.min.is_finite() || !a.max.is_finite() {
            return Err(Error::InfeasibleSpec(format!(
                "attribute `{}` has an empty or non-finite range",
                a.name
            )));
        }
        if !(0.0..=1.0).contains(&a.coverage) {
            return Err(Error::InfeasibleSpec(format!(
                "attribute `{}` coverage {} is outside [0, 1]",
                a.name, a.coverage
            )));
        }
    }
    Ok(background)
}

/// Generates a graph from the spec, deterministically in `seed`.
pub fn generate_synthetic_kg(spec: &GeneratorSpec, seed: u64) -> Result<Synthetic> {
    let background = feasibility(spec)?;

    // Background nodes first, in type order; ids index the emission order so
    // edge drawing can address them uniformly.
    let mut nodes = String::new();
    let mut ids: Vec<String> = Vec::with_capacity(background);
    for (ty, &count) in &spec.types {
        for k in 0..count {
            let id = format!("n_{ty}_{k}");
            nodes.push_str(&format!("{id}\tBg_{ty}_{k}\t{ty}\n"));
            ids.push(id);
        }
    }

    let mut truth = None;
    let mut planted_ids: Vec<String> = Vec::new();
    if let Some(p) = &spec.planted {
        nodes.push_str(&format!("anchor\t{}\t{}\n", p.anchor_name, p.anchor_type));
        let mut correct = Vec::with_capacity(p.correct);
        let mut incorrect = Vec::with_capacity(p.incorrect);
        for k in 0..p.correct {
            let id = format!("c_{k}");
            nodes.push_str(&format!("{id}\tHit_{k}\t{}\n", p.target_type));
            correct.push(format!("Hit_{k}"));
            planted_ids.push(id);
        }
        for k in 0..p.incorrect {
            let id = format!("w_{k}");
            nodes.push_str(&format!("{id}\tDecoy_{k}\t{}\n", p.target_type));
            incorrect.push(format!("Decoy_{k}"));
            planted_ids.push(id);
        }
        truth = Some(GroundTruth {
            anchor: p.anchor_name.clone(),
            anchor_type: p.anchor_type.clone(),
            target_type: p.target_type.clone(),
            query_predicate: p.query_predicate.clone(),
            correct,
            incorrect,
            correct_similarity: p.correct_similarity,
            incorrect_similarity: p.incorrect_similarity,
            attr_sums: BTreeMap::new(),
            attr_counts: BTreeMap::new(),
        });
    }

    // Random background edges; the planted star stays disconnected from the
    // background so every planted candidate keeps exactly one known path.
    let mut edges = String::new();
    if let Some(p) = &spec.planted {
        for k in 0..p.correct {
            edges.push_str(&format!("anchor\t{}\tc_{k}\n", p.correct_predicate));
        }
        for k in 0..p.incorrect {
            edges.push_str(&format!("anchor\t{}\tw_{k}\n", p.incorrect_predicate));
        }
    }
    {
        let mut rng = stream(seed, "synth-edges", 0);
        let mut pair_counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut drawn = 0usize;
        let mut attempts = 0usize;
        let budget = spec.edges.saturating_mul(50) + 1000;
        while drawn < spec.edges {
            attempts += 1;
            if attempts > budget {
                return Err(Error::InfeasibleSpec(format!(
                    "could not place {} edges under the multiplicity cap",
                    spec.edges
                )));
            }
            let a = rng.gen_range(0..background);
            let b = rng.gen_range(0..background);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            let count = pair_counts.entry(key).or_insert(0);
            if *count >= PAIR_MULTIPLICITY_CAP {
                continue;
            }
            *count += 1;
            let pred = &spec.predicates[rng.gen_range(0..spec.predicates.len())];
            edges.push_str(&format!("{}\t{pred}\t{}\n", ids[a], ids[b]));
            drawn += 1;
        }
    }

    // Attributes for every node, background and planted alike.
    let mut attrs = String::new();
    {
        let mut rng = stream(seed, "synth-attrs", 0);
        let all_ids = ids.iter().chain(planted_ids.iter());
        for id in all_ids {
            for a in &spec.attrs {
                if rng.gen::<f64>() >= a.coverage {
                    continue;
                }
                let value = a.min + rng.gen::<f64>() * (a.max - a.min);
                attrs.push_str(&format!("{id}\t{}\t{value}\n", a.name));
                if let Some(t) = truth.as_mut() {
                    if id.starts_with("c_") {
                        *t.attr_sums.entry(a.name.clone()).or_insert(0.0) += value;
                        *t.attr_counts.entry(a.name.clone()).or_insert(0) += 1;
                    }
                }
            }
        }
    }

    // Similarity rows against the single reference predicate. Background
    // predicates get reproducible random similarities; planted predicates
    // get exactly the spec'd values.
    let query_predicate = spec
        .planted
        .as_ref()
        .map(|p| p.query_predicate.clone())
        .or_else(|| spec.query_predicate.clone())
        .unwrap_or_else(|| "rel".to_string());
    let mut simtable = String::new();
    {
        let mut rng = stream(seed, "synth-sims", 0);
        let mut seen = BTreeSet::new();
        for pred in &spec.predicates {
            if !seen.insert(pred.clone()) {
                continue;
            }
            let drawn = 0.05 + rng.gen::<f64>() * 0.95;
            let sim = if *pred == query_predicate { 1.0 } else { drawn };
            simtable.push_str(&format!("{pred}\t{query_predicate}\t{sim}\n"));
        }
        if let Some(p) = &spec.planted {
            if seen.insert(p.correct_predicate.clone()) {
                simtable.push_str(&format!(
                    "{}\t{query_predicate}\t{}\n",
                    p.correct_predicate, p.correct_similarity
                ));
            }
            if seen.insert(p.incorrect_predicate.clone()) {
                simtable.push_str(&format!(
                    "{}\t{query_predicate}\t{}\n",
                    p.incorrect_predicate, p.incorrect_similarity
                ));
            }
        }
        if seen.is_empty() {
            // A provider with no rows rejects every lookup; key the reference
            // predicate to itself so trivial specs stay loadable.
            simtable.push_str(&format!("{query_predicate}\t{query_predicate}\t1\n"));
        }
    }

    let graph = load_graph_from_readers(
        Cursor::new(nodes.as_bytes()),
        "generated-nodes.tsv",
        Cursor::new(edges.as_bytes()),
        "generated-edges.tsv",
        Cursor::new(attrs.as_bytes()),
        "generated-attrs.tsv",
    )?;
    let provider = load_simtable_from_reader(
        Cursor::new(simtable.as_bytes()),
        "generated-simtable.tsv",
    )?;

    Ok(Synthetic {
        graph,
        provider,
        nodes_tsv: nodes,
        edges_tsv: edges,
        attrs_tsv: attrs,
        simtable_tsv: simtable,
        truth,
    })
}

/// Parses a generator spec from JSON.
pub fn parse_generator_spec(json_text: &str) -> Result<GeneratorSpec> {
    let spec: GeneratorSpec =
        serde_json::from_str(json_text).map_err(|e| Error::SchemaError(e.to_string()))?;
    feasibility(&spec)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> GeneratorSpec {
        GeneratorSpec {
            types: [("Person".to_string(), 120), ("City".to_string(), 80)].into(),
            predicates: vec!["knows".into(), "born_in".into(), "mayor_of".into()],
            edges: 800,
            attrs: vec![AttrRange {
                name: "age".into(),
                min: 18.0,
                max: 90.0,
                coverage: 0.9,
            }],
            planted: None,
            query_predicate: Some("knows".into()),
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = base_spec();
        let a = generate_synthetic_kg(&spec, 7).unwrap();
        let b = generate_synthetic_kg(&spec, 7).unwrap();
        assert_eq!(a.nodes_tsv, b.nodes_tsv);
        assert_eq!(a.edges_tsv, b.edges_tsv);
        assert_eq!(a.attrs_tsv, b.attrs_tsv);
        assert_eq!(a.simtable_tsv, b.simtable_tsv);
        assert_eq!(a.graph.node_count(), 200);
        assert_eq!(a.graph.edge_count(), 800);
    }

    #[test]
    fn different_seeds_give_different_edge_sets() {
        let spec = base_spec();
        let a = generate_synthetic_kg(&spec, 1).unwrap();
        let b = generate_synthetic_kg(&spec, 2).unwrap();
        assert_ne!(a.edges_tsv, b.edges_tsv);
    }

    #[test]
    fn zero_edges_yield_isolated_nodes() {
        let mut spec = base_spec();
        spec.edges = 0;
        let s = generate_synthetic_kg(&spec, 3).unwrap();
        assert_eq!(s.graph.edge_count(), 0);
        for id in s.graph.node_ids() {
            assert!(s.graph.neighbors(id).is_empty());
        }
    }

    #[test]
    fn oversubscribed_edge_budget_is_infeasible() {
        let mut spec = base_spec();
        spec.types = [("T".to_string(), 3)].into();
        // 3 pairs x cap 4 = 12 possible edges.
        spec.edges = 13;
        assert!(matches!(
            generate_synthetic_kg(&spec, 0),
            Err(Error::InfeasibleSpec(_))
        ));
        spec.edges = 12;
        let s = generate_synthetic_kg(&spec, 0).unwrap();
        assert_eq!(s.graph.edge_count(), 12);
    }

    #[test]
    fn edges_without_vocabulary_are_infeasible() {
        let mut spec = base_spec();
        spec.predicates.clear();
        assert!(matches!(
            generate_synthetic_kg(&spec, 0),
            Err(Error::InfeasibleSpec(_))
        ));
    }

    #[test]
    fn planted_star_is_disconnected_from_the_background() {
        let mut spec = base_spec();
        spec.planted = Some(PlantedSpec {
            anchor_name: default_anchor_name(),
            anchor_type: default_anchor_type(),
            target_type: "Item".into(),
            query_predicate: "wants".into(),
            correct: 10,
            incorrect: 5,
            correct_predicate: default_correct_predicate(),
            incorrect_predicate: default_incorrect_predicate(),
            correct_similarity: 1.0,
            incorrect_similarity: 0.5,
        });
        let s = generate_synthetic_kg(&spec, 11).unwrap();
        let truth = s.truth.as_ref().unwrap();
        assert_eq!(truth.correct.len(), 10);
        assert_eq!(truth.incorrect.len(), 5);

        let anchor = s.graph.node_by_source_id("anchor").unwrap();
        assert_eq!(s.graph.neighbors(anchor).len(), 15);
        // Every planted candidate touches only the anchor.
        for (_, nb) in s.graph.neighbors(anchor) {
            assert_eq!(s.graph.neighbors(*nb).len(), 1);
        }
        // Planted predicates carry the spec'd similarities.
        let sim = |a: &str| {
            crate::semantics::predicate_similarity(&s.provider, a, "wants", 1e-4).unwrap()
        };
        assert_eq!(sim("match_pred"), 1.0);
        assert_eq!(sim("decoy_pred"), 0.5);
    }

    #[test]
    fn ground_truth_attr_sums_match_the_emitted_attrs() {
        let mut spec = base_spec();
        spec.attrs = vec![AttrRange {
            name: "price".into(),
            min: 100.0,
            max: 200.0,
            coverage: 1.0,
        }];
        spec.planted = Some(PlantedSpec {
            anchor_name: default_anchor_name(),
            anchor_type: default_anchor_type(),
            target_type: "Item".into(),
            query_predicate: "wants".into(),
            correct: 7,
            incorrect: 3,
            correct_predicate: default_correct_predicate(),
            incorrect_predicate: default_incorrect_predicate(),
            correct_similarity: 1.0,
            incorrect_similarity: 0.5,
        });
        let s = generate_synthetic_kg(&spec, 5).unwrap();
        let truth = s.truth.unwrap();
        assert_eq!(truth.attr_counts["price"], 7);

        let mut sum = 0.0;
        for name in &truth.correct {
            let id = s
                .graph
                .node_ids()
                .find(|&i| &s.graph.node(i).name == name)
                .unwrap();
            sum += s.graph.node(id).attrs["price"];
        }
        assert!((sum - truth.attr_sums["price"]).abs() < 1e-9);
    }

    #[test]
    fn spec_json_round_trips_with_defaults() {
        let spec = parse_generator_spec(
            r#"{"types":{"A":4},"predicates":["p"],"edges":2,
                "planted":{"target_type":"A","query_predicate":"p","correct":2,"incorrect":1}}"#,
        )
        .unwrap();
        let p = spec.planted.as_ref().unwrap();
        assert_eq!(p.anchor_name, "Anchor");
        assert_eq!(p.correct_similarity, 1.0);
        assert_eq!(p.incorrect_similarity, 0.5);
        assert!(generate_synthetic_kg(&spec, 1).is_ok());
    }

    #[test]
    fn malformed_spec_json_is_a_schema_error() {
        assert!(matches!(
            parse_generator_spec("{\"types\": []}"),
            Err(Error::SchemaError(_))
        ));
        assert!(matches!(
            parse_generator_spec("not json"),
            Err(Error::SchemaError(_))
        ));
    }
}
