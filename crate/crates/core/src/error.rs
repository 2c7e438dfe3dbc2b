use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate cluster: column {column} of the soft assignment sums to zero")]
    DegenerateCluster { column: usize },

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training aborted in round {round} on client {client}: {detail} (last losses: {losses})")]
    TrainingAborted {
        round: usize,
        client: usize,
        detail: String,
        losses: String,
    },

    #[error("round {round}, client {client}: {source}")]
    Client {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Load {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn load(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Attach the round and client a failure happened in.
    pub fn in_client(self, round: usize, client: usize) -> Self {
        match self {
            e @ (Error::Client { .. } | Error::TrainingAborted { .. }) => e,
            e => Error::Client {
                round,
                client,
                source: Box::new(e),
            },
        }
    }
}
