use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient vertices for a closed surface: got {0}, need at least 4")]
    InsufficientVertices(usize),

    #[error("no canonical direction set for {0} rays (supported: 4, 6, 12); use fibonacci_directions instead")]
    UnsupportedCanonical(usize),

    #[error("degenerate direction set: {0}")]
    DegenerateDirections(String),

    #[error("degenerate radial direction: sample {index} coincides with the voxel")]
    DegenerateRadialDirection { index: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("volume shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),

    #[error("voxel {voxel:?} does not belong to instance {instance}")]
    NotInInstance { voxel: [usize; 3], instance: u32 },

    #[error("voxel {0:?} lies outside the volume")]
    OutOfBounds([usize; 3]),

    #[error("malformed volume header: {0}")]
    MalformedHeader(String),

    #[error("payload size mismatch: header implies {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),

    #[error("label {label} exceeds dtype {dtype}")]
    LabelExceedsDtype { label: u32, dtype: &'static str },

    #[error("empty volume")]
    EmptyVolume,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
