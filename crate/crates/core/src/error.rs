use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("infeasible domestic requirement: {0}")]
    Infeasible(String),

    #[error(
        "solver `{solver}` did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        /// Sup-norm residual per iteration, most recent last.
        history: Vec<f64>,
    },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("singular design: collinear block `{0}`")]
    SingularDesign(String),

    #[error("decile rate undefined: {0}")]
    EmptyDecile(String),

    #[error("decomposition row `{row}` failed: {source}")]
    Decomposition {
        row: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
