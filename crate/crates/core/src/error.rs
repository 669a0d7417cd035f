use thiserror::Error;

/// Unified error type for the simulation library.
#[derive(Debug, Error)]
pub enum SsmtError {
    #[error("numeric integral did not converge: {0}")]
    DivergentIntegral(String),

    #[error("operation invalid in this regime: {0}")]
    InvalidRegime(String),

    #[error("no root of kappa found: {0}")]
    NoRoot(String),

    #[error("tilted swap mass {computed} differs from -psi(omega) = {expected} beyond tolerance")]
    MassMismatch { computed: f64, expected: f64 },

    #[error("unsupported combination of Levy-measure representations")]
    Unsupported,

    #[error("invalid jump cutoff: {0}")]
    InvalidCutoff(String),

    #[error("decoration hit zero before the recorded branch length")]
    ZeroDecoration,

    #[error("population budget exceeded ({0} individuals)")]
    BudgetExceeded(usize),

    #[error("barrier {barrier} is below the root type {root}")]
    BarrierBelowRoot { barrier: f64, root: f64 },

    #[error("degenerate scale list for box counting: {0}")]
    DegenerateScales(String),

    #[error("raw Levy path was not retained; drift coupling requires it")]
    MissingLevyPath,

    #[error("renewal table too coarse: grid step {step} exceeds {limit} for gamma-omega = {delta}")]
    TableTooCoarse { step: f64, limit: f64, delta: f64 },

    #[error("sample grown to depth {depth}, but {requested} generations requested")]
    ShallowSample { depth: usize, requested: usize },

    #[error(
        "conditioned spine stuck near the barrier: acceptance {rate:.2e} over the last \
         {window} proposals (gap {gap:.3e} at sim time {time:.3})"
    )]
    StuckNearBarrier {
        rate: f64,
        window: usize,
        gap: f64,
        time: f64,
    },

    #[error("the two K estimates disagree: ladder-epoch {k_hopf} vs constants-identity {k_identity}")]
    NormalizationInconsistent { k_hopf: f64, k_identity: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SsmtError>;
