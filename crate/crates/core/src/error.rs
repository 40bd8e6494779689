use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("point {index} has zero norm")]
    ZeroNormPoint { index: usize },

    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("imaginary residue {value:e} exceeds bound {bound:e}; harmonic conventions are inconsistent")]
    ImaginaryResidue { value: f64, bound: f64 },

    #[error("charge {0} is not in the vocabulary")]
    UnknownCharge(i32),

    #[error("sample {row}: {source}")]
    Sample {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("labels contain a single class ({0}); need at least two")]
    DegenerateLabels(i64),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("bundle format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("bundle checksum mismatch in block `{0}`")]
    Checksum(String),

    #[error("malformed bundle: {0}")]
    Bundle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_sample(self, row: usize) -> Error {
        Error::Sample {
            row,
            source: Box::new(self),
        }
    }
}
