//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants carry enough
//! context (file, line number, offending identifier) to report a load or
//! query failure without re-reading the input.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: edge references unknown node `{node}`")]
    DanglingEdge {
        path: String,
        line: usize,
        node: String,
    },

    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),

    #[error("{path}:{line}: attribute `{attr}` has non-numeric value `{value}`")]
    NonNumericAttribute {
        path: String,
        line: usize,
        attr: String,
        value: String,
    },

    #[error("no node named `{name}` carries any of the requested types {types:?}")]
    NoMappingNode { name: String, types: Vec<String> },

    #[error("generator spec is infeasible: {0}")]
    InfeasibleSpec(String),

    #[error("predicate `{0}` is unknown to the similarity provider")]
    UnknownPredicate(String),

    #[error("path similarity is undefined for an empty edge sequence")]
    EmptyPath,

    #[error("answer similarity requires paths ending at one node; saw `{0}` and `{1}`")]
    MixedAnswers(String, String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("query does not match the schema: {0}")]
    SchemaError(String),

    #[error("query invariant violated: {0}")]
    InvariantViolation(String),

    #[error("no candidate answers: {0}")]
    NoCandidates(String),

    #[error("intersection of per-subquery samples is empty")]
    EmptyIntersection,

    #[error("exact answer set is empty; {0} is undefined")]
    EmptyAnswerSet(String),

    #[error("validated sample has no usable entries; {0} is undefined")]
    EmptyValidatedSample(String),

    #[error("parameter out of domain: {0}")]
    DomainError(String),

    #[error("query session has expired or none is active")]
    SessionExpired,

    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an io error with the path that produced it.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
