use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("range ambiguity: beat frequency {beat_hz:.1} Hz exceeds Nyquist {nyquist_hz:.1} Hz")]
    RangeAmbiguity { beat_hz: f64, nyquist_hz: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("empty field: no cell carries positive evidence")]
    EmptyField,

    #[error("unobservable position: EFIM is singular (condition number {0:.3e})")]
    Unobservable(f64),

    #[error("degenerate clustering: {0}")]
    DegenerateCluster(String),

    #[error("infeasible selection: best achievable MSE {best_mse:.6} m^2 with cap {cap:.6} m^2")]
    Infeasible { best_mse: f64, cap: f64 },

    #[error("environment failure: {0}")]
    Environment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
