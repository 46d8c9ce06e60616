use thiserror::Error;

/// The no-arbitrage bound an option price violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriceBound {
    /// Price at or below the intrinsic value `max(S0 - K, 0)`.
    Intrinsic(f64),
    /// Price at or above the spot.
    Spot(f64),
}

impl std::fmt::Display for PriceBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriceBound::Intrinsic(v) => write!(f, "must exceed intrinsic value {v}"),
            PriceBound::Spot(v) => write!(f, "must stay below spot {v}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension too large: d = {d}, m = {m}")]
    DimensionOverflow { d: usize, m: usize },

    #[error("letter {letter} outside the alphabet 1..={d}")]
    LetterOutOfRange { letter: usize, d: usize },

    #[error("word of length {len} exceeds truncation level {m}")]
    WordTooLong { len: usize, m: usize },

    #[error("functional of degree {degree} applied to a tensor truncated at level {m}")]
    TruncationMismatch { degree: usize, m: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("matrix not positive semidefinite: eigenvalue {eigenvalue:e} below tolerance {tolerance:e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("non-finite value on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("price {price} out of bounds: {bound}")]
    PriceOutOfBounds { price: f64, bound: PriceBound },

    #[error("root bracket [{lo}, {hi}] does not contain a solution")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("ODE step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("numerical rank is zero: both Gramians vanish at the requested tolerance")]
    ZeroRank,

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
