//! Predicate similarity and path/answer scoring.
//!
//! Similarity comes from one of two providers: cosine over predicate
//! embedding vectors, or an explicit symmetric table. Either way the emitted
//! value is clamped to `[eps_sim, 1]`: the walk's irreducibility argument
//! needs a nonzero similarity on every edge, and cosine can go nonpositive.
//!
//! A path is scored by the geometric mean of its per-edge similarities to the
//! query predicate, computed in log space so long low-similarity paths do not
//! underflow. An answer reachable by several paths takes the maximum path
//! score, with the witness path recorded.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{EdgeId, KnowledgeGraph, NodeId};

/// Source of predicate-to-predicate similarity.
#[derive(Debug, Clone)]
pub enum SimilarityProvider {
    /// `predicate -> d-dimensional vector`; similarity is cosine.
    Embeddings {
        vectors: HashMap<String, Vec<f64>>,
        dim: usize,
    },
    /// Symmetric table keyed by the ordered predicate pair. Missing pairs of
    /// known predicates default to the clamp floor; self-pairs are 1.0.
    Table {
        values: HashMap<(String, String), f64>,
        known: BTreeSet<String>,
    },
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn clamp(v: f64, eps_sim: f64) -> f64 {
    v.max(eps_sim).min(1.0)
}

impl SimilarityProvider {
    /// Builds the embedding provider from rows of `predicate, v1..vd`.
    pub fn from_embedding_rows(rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = 0usize;
        for (predicate, vector) in rows {
            if vector.is_empty() {
                return Err(Error::EmptyInput(format!(
                    "embedding for `{predicate}` has no components"
                )));
            }
            if dim == 0 {
                dim = vector.len();
            } else if vector.len() != dim {
                return Err(Error::DomainError(format!(
                    "embedding for `{predicate}` has dimension {} but expected {dim}",
                    vector.len()
                )));
            }
            if vector.iter().all(|v| *v == 0.0) {
                return Err(Error::DomainError(format!(
                    "embedding for `{predicate}` is the zero vector"
                )));
            }
            if vectors.insert(predicate.clone(), vector).is_some() {
                return Err(Error::DomainError(format!(
                    "predicate `{predicate}` has two embedding rows"
                )));
            }
        }
        Ok(SimilarityProvider::Embeddings { vectors, dim })
    }

    /// Builds the table provider from `(a, b, similarity)` rows.
    pub fn from_table_rows(rows: Vec<(String, String, f64)>) -> Result<Self> {
        let mut values = HashMap::new();
        let mut known = BTreeSet::new();
        for (a, b, sim) in rows {
            if !(0.0..=1.0).contains(&sim) {
                return Err(Error::DomainError(format!(
                    "similarity of (`{a}`, `{b}`) is {sim}, outside [0, 1]"
                )));
            }
            if a == b && sim != 1.0 {
                return Err(Error::DomainError(format!(
                    "self-similarity of `{a}` must be 1.0, got {sim}"
                )));
            }
            known.insert(a.clone());
            known.insert(b.clone());
            let key = pair_key(&a, &b);
            if let Some(old) = values.insert(key, sim) {
                if old != sim {
                    return Err(Error::DomainError(format!(
                        "conflicting similarities for (`{a}`, `{b}`): {old} vs {sim}"
                    )));
                }
            }
        }
        Ok(SimilarityProvider::Table { values, known })
    }

    pub fn knows(&self, predicate: &str) -> bool {
        match self {
            SimilarityProvider::Embeddings { vectors, .. } => vectors.contains_key(predicate),
            SimilarityProvider::Table { known, .. } => known.contains(predicate),
        }
    }
}

/// Loads `embeddings.tsv`: `predicate <TAB> v1 <TAB> ... <TAB> vd`.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<SimilarityProvider> {
    let path = path.as_ref();
    let label = path.display().to_string();
    let reader = File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(&label, e))?;
    load_embeddings_from_reader(reader, &label)
}

pub fn load_embeddings_from_reader(
    reader: impl BufRead,
    label: &str,
) -> Result<SimilarityProvider> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::io(label, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let predicate = fields.next().unwrap_or_default();
        if predicate.is_empty() {
            return Err(Error::MalformedLine {
                path: label.to_string(),
                line: row,
                reason: "empty predicate".into(),
            });
        }
        let mut vector = Vec::new();
        for field in fields {
            let v: f64 = field.parse().map_err(|_| Error::MalformedLine {
                path: label.to_string(),
                line: row,
                reason: format!("non-numeric component `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedLine {
                    path: label.to_string(),
                    line: row,
                    reason: format!("non-finite component `{field}`"),
                });
            }
            vector.push(v);
        }
        if vector.is_empty() {
            return Err(Error::MalformedLine {
                path: label.to_string(),
                line: row,
                reason: "no vector components".into(),
            });
        }
        rows.push((predicate.to_string(), vector));
    }
    SimilarityProvider::from_embedding_rows(rows)
}

/// Loads `simtable.tsv`: `predicate_a <TAB> predicate_b <TAB> similarity`.
pub fn load_simtable(path: impl AsRef<Path>) -> Result<SimilarityProvider> {
    let path = path.as_ref();
    let label = path.display().to_string();
    let reader = File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(&label, e))?;
    load_simtable_from_reader(reader, &label)
}

pub fn load_simtable_from_reader(reader: impl BufRead, label: &str) -> Result<SimilarityProvider> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::io(label, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (a, b, v) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(v), None) if !a.is_empty() && !b.is_empty() => (a, b, v),
            _ => {
                return Err(Error::MalformedLine {
                    path: label.to_string(),
                    line: row,
                    reason: "expected 3 tab-separated fields".into(),
                })
            }
        };
        let sim: f64 = v.parse().map_err(|_| Error::MalformedLine {
            path: label.to_string(),
            line: row,
            reason: format!("non-numeric similarity `{v}`"),
        })?;
        if !sim.is_finite() {
            return Err(Error::MalformedLine {
                path: label.to_string(),
                line: row,
                reason: format!("non-finite similarity `{v}`"),
            });
        }
        rows.push((a.to_string(), b.to_string(), sim));
    }
    SimilarityProvider::from_table_rows(rows)
}

/// Similarity of two predicates, clamped to `[eps_sim, 1]`. Symmetric.
pub fn predicate_similarity(
    p: &SimilarityProvider,
    a: &str,
    b: &str,
    eps_sim: f64,
) -> Result<f64> {
    if a == b {
        return Ok(1.0);
    }
    match p {
        SimilarityProvider::Embeddings { vectors, .. } => {
            let va = vectors
                .get(a)
                .ok_or_else(|| Error::UnknownPredicate(a.to_string()))?;
            let vb = vectors
                .get(b)
                .ok_or_else(|| Error::UnknownPredicate(b.to_string()))?;
            let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
            let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok(clamp(dot / (na * nb), eps_sim))
        }
        SimilarityProvider::Table { values, known } => {
            for predicate in [a, b] {
                if !known.contains(predicate) {
                    return Err(Error::UnknownPredicate(predicate.to_string()));
                }
            }
            let stored = values.get(&pair_key(a, b)).copied().unwrap_or(eps_sim);
            Ok(clamp(stored, eps_sim))
        }
    }
}

/// Geometric mean of per-edge similarities to the query predicate.
pub fn path_similarity(
    p: &SimilarityProvider,
    path_predicates: &[impl AsRef<str>],
    query_predicate: &str,
    eps_sim: f64,
) -> Result<f64> {
    if path_predicates.is_empty() {
        return Err(Error::EmptyPath);
    }
    let mut log_sum = 0.0;
    for predicate in path_predicates {
        let sim = predicate_similarity(p, predicate.as_ref(), query_predicate, eps_sim)?;
        log_sum += sim.ln();
    }
    Ok((log_sum / path_predicates.len() as f64).exp())
}

/// One subgraph match: a simple path from the mapping node to an answer.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPath {
    pub answer: NodeId,
    pub edge_ids: Vec<EdgeId>,
    pub score: f64,
}

impl MatchPath {
    pub fn length(&self) -> usize {
        self.edge_ids.len()
    }
}

/// An answer with its final similarity and the witnessing path.
#[derive(Debug, Clone)]
pub struct ScoredAnswer {
    pub answer: NodeId,
    pub similarity: f64,
    pub best_path: MatchPath,
}

/// True when `a` wins the witness tie-break against `b`: higher score, then
/// shorter path, then lexicographically smaller edge-id sequence.
pub(crate) fn better_witness(a: &MatchPath, b: &MatchPath) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.length() != b.length() {
        return a.length() < b.length();
    }
    a.edge_ids < b.edge_ids
}

/// Reduces all matches of one answer to its similarity (max score) plus the
/// winning witness.
pub fn answer_similarity(paths: &[MatchPath]) -> Result<ScoredAnswer> {
    let first = paths
        .first()
        .ok_or_else(|| Error::EmptyInput("answer_similarity needs at least one path".into()))?;
    let mut best = first;
    for path in &paths[1..] {
        if path.answer != first.answer {
            return Err(Error::MixedAnswers(
                first.answer.to_string(),
                path.answer.to_string(),
            ));
        }
        if better_witness(path, best) {
            best = path;
        }
    }
    Ok(ScoredAnswer {
        answer: best.answer,
        similarity: best.score,
        best_path: best.clone(),
    })
}

/// Scores a concrete edge path against the query predicate.
pub fn score_edge_path(
    g: &KnowledgeGraph,
    p: &SimilarityProvider,
    edge_ids: &[EdgeId],
    query_predicate: &str,
    eps_sim: f64,
) -> Result<f64> {
    let predicates: Vec<&str> = edge_ids
        .iter()
        .map(|&e| g.edge(e).predicate.as_str())
        .collect();
    path_similarity(p, &predicates, query_predicate, eps_sim)
}

/// Per-query memo of edge-predicate similarity to one query predicate.
/// Transition building, exact enumeration, and validation all hit the same
/// small predicate set repeatedly.
pub struct SimCache<'a> {
    provider: &'a SimilarityProvider,
    query_predicate: String,
    eps_sim: f64,
    memo: HashMap<String, f64>,
}

impl<'a> SimCache<'a> {
    pub fn new(provider: &'a SimilarityProvider, query_predicate: &str, eps_sim: f64) -> Self {
        SimCache {
            provider,
            query_predicate: query_predicate.to_string(),
            eps_sim,
            memo: HashMap::new(),
        }
    }

    pub fn eps_sim(&self) -> f64 {
        self.eps_sim
    }

    pub fn similarity_to_query(&mut self, predicate: &str) -> Result<f64> {
        if let Some(&sim) = self.memo.get(predicate) {
            return Ok(sim);
        }
        let sim = predicate_similarity(self.provider, predicate, &self.query_predicate, self.eps_sim)?;
        self.memo.insert(predicate.to_string(), sim);
        Ok(sim)
    }

    /// Geometric mean over a path of predicates, served from the memo.
    pub fn path_score(&mut self, predicates: &[impl AsRef<str>]) -> Result<f64> {
        if predicates.is_empty() {
            return Err(Error::EmptyPath);
        }
        let mut log_sum = 0.0;
        for predicate in predicates {
            log_sum += self.similarity_to_query(predicate.as_ref())?.ln();
        }
        Ok((log_sum / predicates.len() as f64).exp())
    }
}
