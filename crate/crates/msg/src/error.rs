use thiserror::Error;

/// Errors shared across the library.
#[derive(Error, Debug)]
pub enum MsgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<MsgError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MsgError {
    pub fn at_layer(self, layer: usize) -> MsgError {
        MsgError::Layer {
            layer,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, MsgError>;
