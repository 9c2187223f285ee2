use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // geometry
    #[error("degenerate intrinsics")]
    DegenerateIntrinsics,
    #[error("distortion inversion diverged")]
    DistortionDiverged,
    #[error("pixel ray parallel to plane")]
    RayParallelToPlane,
    #[error("point at infinity")]
    PointAtInfinity,
    #[error("ray misses sphere")]
    RayMissesSphere,
    #[error("degenerate bearing")]
    DegenerateBearing,
    #[error("highlight at ball center")]
    HighlightAtBallCenter,
    #[error("no highlight found")]
    NoHighlightFound,

    // events and observation maps
    #[error("event outside period: t = {t} not in [0, {period})")]
    EventOutsidePeriod { t: f64, period: f64 },
    #[error("light not normalized: |l| = {norm}")]
    LightNotNormalized { norm: f64 },
    #[error("intensity out of range: {0}")]
    IntensityOutOfRange(f64),
    #[error("empty observation map")]
    EmptyObservationMap,

    // tensors and networks
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("batch too small for batch statistics")]
    BatchTooSmall,
    #[error("resolution incompatible with two down blocks: m = {0}")]
    IncompatibleResolution(usize),
    #[error("degenerate normal prediction")]
    DegenerateNormal,
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty mask")]
    EmptyMask,
    #[error("vectors must be unit length (|a| = {a}, |b| = {b})")]
    NotUnit { a: f64, b: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
