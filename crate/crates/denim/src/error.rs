use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matmul shape mismatch: left is {0}x{1}, right is {2}x{3}")]
    MatmulShape(usize, usize, usize, usize),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("multiplication chain needs at least two matrices, got {0}")]
    ChainTooShort(usize),

    #[error("latent size k must be at least 3, got {0}")]
    LatentTooSmall(usize),

    #[error("unknown white-balance setting letter '{0}' (expected one of t,f,d,c,s)")]
    UnknownSetting(char),

    #[error("duplicate white-balance setting letter '{0}'")]
    DuplicateSetting(char),

    #[error("training dataset is empty")]
    EmptyDataset,

    #[error("parameter file {path}: {kind}")]
    ParamFile { path: PathBuf, kind: ParamFileError },

    #[error("ppm file {path}: {kind}")]
    Ppm { path: PathBuf, kind: PpmError },

    #[error("stack file {path}: {kind}")]
    StackFile { path: PathBuf, kind: ParamFileError },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Failure modes of the binary parameter / stack formats.
#[derive(Debug, thiserror::Error)]
pub enum ParamFileError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("truncated payload")]
    Truncated,
    #[error("inconsistent dimensions in header")]
    BadDims,
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Failure modes of the PPM reader.
#[derive(Debug, thiserror::Error)]
pub enum PpmError {
    #[error("not a P6 file (bad magic)")]
    BadMagic,
    #[error("malformed header")]
    MalformedHeader,
    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
