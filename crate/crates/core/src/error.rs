use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Sizing(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("rank deficient: {0}")]
    Rank(String),
    #[error("constraint error: {0}")]
    Constraint(String),
    #[error("inconsistent estimates: {0}")]
    Inconsistent(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("node {node}: {source}")]
    AtNode {
        node: String,
        #[source]
        source: Box<Error>,
    },
    #[error("pass {pass}: {source}")]
    AtPass {
        pass: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at_node(self, node: impl Into<String>) -> Self {
        Error::AtNode {
            node: node.into(),
            source: Box::new(self),
        }
    }

    pub fn at_pass(self, pass: usize) -> Self {
        Error::AtPass {
            pass,
            source: Box::new(self),
        }
    }

    /// The innermost error, with node and pass annotations stripped.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::AtNode { source, .. } | Error::AtPass { source, .. } => source.root_cause(),
            other => other,
        }
    }
}

pub(crate) fn sizing(msg: impl Into<String>) -> Error {
    Error::Sizing(msg.into())
}
