use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
///
/// Variants split into two families that the CLI maps onto exit codes:
/// input problems (bad files, bad arguments, shape mismatches) and
/// mathematical precondition failures (degenerate geometry, frame
/// violations, solver non-convergence).
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed line {line} in {path}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("empty input file {0}")]
    EmptyFile(PathBuf),

    #[error("missing OFF header in {0}")]
    MissingOffHeader(PathBuf),

    #[error("non-triangle face at line {line} in {path} ({verts} vertices)")]
    NonTriangleFace {
        path: PathBuf,
        line: usize,
        verts: usize,
    },

    #[error("vertex index {index} out of range (n = {n}) at line {line}")]
    VertexIndexOutOfRange { index: usize, n: usize, line: usize },

    #[error("invalid shape spec: {0}")]
    InvalidShapeSpec(String),

    #[error("all points coincident: normalization scale is zero")]
    ZeroScale,

    #[error("k = {k} must satisfy 1 <= k < n = {n}")]
    InvalidK { k: usize, n: usize },

    #[error("duplicate points: mean k-NN distance is zero, cannot derive sigma")]
    ZeroSigma,

    #[error("isolated vertex {0} has zero degree")]
    IsolatedVertex(usize),

    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e} > tol {tol:.3e})")]
    NotSymmetric { max_asym: f64, tol: f64 },

    #[error("adjacency has negative weight at ({i}, {j})")]
    NegativeWeight { i: usize, j: usize },

    #[error("adjacency has nonzero diagonal at {0}")]
    NonzeroDiagonal(usize),

    #[error("eigensolver failed to converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("frame violation: p({lambda}) = {p:.3e} <= 1e-12")]
    FrameViolation { lambda: f64, p: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("vertex index {index} out of range for graph of size {n}")]
    VertexOutOfRange { index: usize, n: usize },

    #[error("q is not a unit vector (|norm - 1| = {0:.3e})")]
    NonUnitVector(f64),

    #[error("degenerate direction: q is within 1e-6 of +/- e1, Eq-denominator vanishes")]
    DegenerateDirection,

    #[error("basis first column is not constant (spread {0:.3e} > 1e-10)")]
    NonConstantFirstColumn(f64),

    #[error("expected a learned basis, got a computed one")]
    NotLearnedBasis,

    #[error("non-finite value produced by op `{op}` at epoch {epoch}, batch {batch}")]
    NanLoss {
        op: String,
        epoch: usize,
        batch: usize,
    },

    #[error("invalid training setup: {0}")]
    InvalidTraining(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a mathematical precondition, as opposed to bad input.
    /// The CLI maps these to exit code 3 and everything else to 2.
    pub fn is_math_failure(&self) -> bool {
        matches!(
            self,
            Error::ZeroScale
                | Error::ZeroSigma
                | Error::IsolatedVertex(_)
                | Error::NotSymmetric { .. }
                | Error::NoConvergence(_)
                | Error::FrameViolation { .. }
                | Error::NonUnitVector(_)
                | Error::DegenerateDirection
                | Error::NonConstantFirstColumn(_)
                | Error::NanLoss { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
