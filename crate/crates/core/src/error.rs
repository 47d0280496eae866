use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("sizing error: {what} needs {requested} elements, budget is {budget}")]
    Sizing {
        what: &'static str,
        requested: usize,
        budget: usize,
    },

    #[error("division by zero transmit symbol at subcarrier {subcarrier}, symbol {symbol}")]
    ZeroDivisor { subcarrier: usize, symbol: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch in {section} (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum {
        section: String,
        stored: u32,
        computed: u32,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("class {0} has no training samples")]
    MissingClass(usize),

    #[error("infeasible architecture: {0}")]
    Infeasible(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty test set")]
    EmptyTestSet,

    #[error("search failed: {0}")]
    SearchFailed(String),

    #[error(transparent)]
    Net(#[from] tensornet::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
