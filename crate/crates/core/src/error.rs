use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bandlimit {bandlimit} is below the first root of J0; the basis would be empty")]
    EmptyBasis { bandlimit: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coefficients violate the reality condition (max imaginary part {max_imag:e})")]
    RealityViolation { max_imag: f64 },

    #[error("basis design is rank deficient: numerical rank {rank} < {params} parameters")]
    RankDeficient { rank: usize, params: usize },

    #[error("placement saturated: placed {placed} of {requested} occurrences after {attempts} attempts")]
    PlacementInfeasible {
        requested: usize,
        placed: usize,
        attempts: usize,
    },

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("image has zero energy")]
    ZeroEnergy,

    #[error("moment window of side {window} does not fit a measurement of side {side}")]
    WindowTooLarge { window: usize, side: usize },

    #[error("CTF vanishes (|h| <= {threshold:e}) at {} frequencies, first {:?}", offending.len(), offending.first())]
    InadmissibleCtf {
        threshold: f64,
        offending: Vec<(usize, usize)>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::SizeMismatch(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::WindowTooLarge { .. }
            | Error::OutOfBounds(_)
            | Error::EmptyBasis { .. } => 2,
            _ => 3,
        }
    }
}
