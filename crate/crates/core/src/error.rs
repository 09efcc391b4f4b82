use thiserror::Error;

/// Errors raised by the pose pipeline core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point lies behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("object model has no surface points")]
    EmptyModel,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("rotation is not orthonormal with det +1 (orthogonality error {orthogonality}, det {det})")]
    InvalidRotation { orthogonality: f64, det: f64 },
    #[error("invalid object model: {0}")]
    InvalidModel(&'static str),
    #[error("diameter mismatch: stored {stored}, recomputed {computed}")]
    DiameterMismatch { stored: f64, computed: f64 },
    #[error("unknown object model id {0}")]
    UnknownModel(usize),
    #[error("scene instance {0} violates the frustum invariant")]
    OutsideFrustum(usize),
    #[error("invalid grid spec: {0}")]
    InvalidGridSpec(&'static str),
    #[error("cell ({row}, {col}) out of range for a {size}x{size} grid")]
    OutOfRange { row: usize, col: usize, size: usize },
    #[error("grid specs or shapes do not match")]
    SpecMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("class counts are all zero")]
    AllZero,
    #[error("class probabilities do not lie on the simplex (cell {cell}, sum {sum})")]
    NotOnSimplex { cell: usize, sum: f64 },
    #[error("non-finite value encountered (coordinate {coordinate:?})")]
    NonFinite { coordinate: Option<usize> },
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("need at least {needed} correspondences, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("3D points are degenerate (collinear or coincident)")]
    Degenerate,
    #[error("no pose candidate places all points in front of the camera")]
    CheiralityFailure,
    #[error("best consensus has {inliers} inliers, need {needed}")]
    NoConsensus { inliers: usize, needed: usize },
    #[error("pose sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
