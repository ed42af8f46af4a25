use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("layer {index} ({kind}): expected input shape {expected:?}, got {actual:?}")]
    LayerShape {
        index: usize,
        kind: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("symbol {symbol:?} at position {position} is not in the lexicon")]
    UnknownSymbol { symbol: char, position: usize },

    #[error("invalid lexicon: {0}")]
    Lexicon(String),

    #[error("probability row {row} sums to {sum}, not 1")]
    Unnormalized { row: usize, sum: f64 },

    #[error("malformed probability sequence: {0}")]
    MalformedSequence(String),

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("image width {0} is not a positive multiple of 128")]
    BlockWidth(usize),

    #[error("invalid symbol count {0}; must be at least 1")]
    SymbolCount(usize),

    #[error("empty glyph bank")]
    EmptyGlyphBank,

    #[error("no glyph for symbol {symbol:?} from writer {writer}")]
    MissingGlyph { symbol: char, writer: u32 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
