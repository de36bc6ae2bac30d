use thiserror::Error;

/// Errors produced anywhere in the discovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },

    #[error("unknown input `{0}`")]
    UnknownInput(String),

    #[error("input `{0}` declared in the graph but not bound")]
    UnboundInput(String),

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("expected a square matrix, got shape {0:?}")]
    NotSquare(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix is singular or near-singular (|det| = {det:e})")]
    Singular { det: f64 },

    #[error("zero-norm generator at index {0}")]
    ZeroNormGenerator(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unstable explicit stencil: alpha*dt/h^2 = {0} exceeds 1/4")]
    Unstable(f64),

    #[error("equivariance comparison fully masked; reduce the growth limit or group element scale")]
    FullyMasked,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(node: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            node: node.into(),
            detail: detail.into(),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Format(_)
            | Error::UnknownInput(_)
            | Error::UnboundInput(_)
            | Error::Unstable(_)
            | Error::Io(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
