use thiserror::Error;

use crate::wkb::CausticReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("1/epsilon = {inverse} is not an integer cell count")]
    NonIntegerCellCount { inverse: f64 },
    #[error("cell resolution {0} must be a power of two and at least 4")]
    ResolutionTooSmall(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("x = {0} lies outside [0, 2π]")]
    OutOfDomain(f64),
    #[error("potential truncation {available} cannot supply a {requested}-mode Hamiltonian")]
    TruncationTooSmall { available: usize, requested: usize },
    #[error("dense Hermitian eigensolver did not converge at k = {k}")]
    EigensolverFailure { k: f64 },
    #[error("{bands} bands requested but truncation only holds {capacity}")]
    BandCountExceedsTruncation { bands: usize, capacity: usize },
    #[error("band index {index} out of range (table holds {available} bands)")]
    BandIndexOutOfRange { index: usize, available: usize },
    #[error("band {band} is not isolated at k = {k} (gap {gap:e})")]
    BandGapTooSmall { band: usize, k: f64, gap: f64 },
    #[error("band curvature {0:e} too small for an effective mass")]
    DegenerateCurvature(f64),
    #[error("band truncation {lambda} must exceed half the cell resolution {resolution}")]
    TruncationMismatch { lambda: usize, resolution: usize },
    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },
    #[error("time step {dt:e} violates the CFL bound {limit:e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("caustic reached at t ≈ {:.4}", .0.onset_time.unwrap_or(f64::NAN))]
    CausticReached(Box<CausticReport>),
    #[error("external potential has no classical force (non-smooth)")]
    NonSmoothForce,
    #[error("reference grid ({reference}) is not finer than the finest test grid ({finest})")]
    ReferenceTooCoarse { reference: usize, finest: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corrupted data: {0}")]
    Corrupted(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
