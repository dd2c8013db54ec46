use thiserror::Error;

/// Errors produced by histogram construction, the testers and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("piece {piece}: {reason}")]
    InvalidRect { piece: usize, reason: String },

    #[error("piece {piece} has negative or non-finite density {density}")]
    NegativeDensity { piece: usize, density: f64 },

    #[error("pieces {first} and {second} overlap")]
    Overlap { first: usize, second: usize },

    #[error("piece volumes sum to {total}, leaving a gap in the domain")]
    VolumeGap { total: f64 },

    #[error("total mass is {total}, expected 1")]
    MassNotOne { total: f64 },

    #[error("piece {piece} boundary is not a multiple of 1/{side}")]
    GridMisaligned { piece: usize, side: u32 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("not a rectangle partition of the domain: {0}")]
    NotAPartition(String),

    #[error("reference density is not constant on the cell")]
    NotConstantOnCell,

    #[error("chi metric diverges: base density is zero where p*q > 0")]
    Divergence,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
