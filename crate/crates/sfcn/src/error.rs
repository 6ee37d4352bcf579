//! Crate-wide error type.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensors, the network, data handling and training.
#[derive(Debug)]
pub enum Error {
    /// A constructor received data whose length does not match the shape.
    DataLength { expected: usize, got: usize },
    /// An operation received a tensor of the wrong rank.
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// Channel counts disagree (e.g. conv input vs. spec, weight layout).
    ChannelMismatch {
        op: &'static str,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Two tensors that must share a shape do not.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A concatenation part disagrees with part 0 on batch or spatial extents.
    ConcatMismatch {
        part: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// Pooling requires even spatial extents; resize inputs first.
    OddSpatial { height: usize, width: usize },
    /// A convolution spec would produce an empty output plane.
    EmptyOutput {
        op: &'static str,
        height: isize,
        width: isize,
    },
    /// Transposed convolution spec does not double the resolution.
    NoDoubling {
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    /// `backward` was called on a non-scalar tensor.
    NotScalar { numel: usize },
    /// Eval-mode normalization asked for a domain with no recorded statistics.
    UnknownDomain { domain: u16 },
    /// Train-mode normalization needs at least two values per channel.
    BatchTooSmall { count: usize },
    /// A gradient became non-finite; the named parameter identifies the layer.
    NonFiniteGrad { param: String },
    /// Invalid run configuration (unknown key, missing value, bad literal).
    Config(String),
    /// Malformed PGM/PPM stream; `offset` is the byte position of the problem.
    Codec { message: String, offset: usize },
    /// Checkpoint file is corrupt or has the wrong magic/version.
    Checkpoint(String),
    /// Dataset-level problem (missing files, mismatched ids, empty set).
    Data(String),
    /// I/O failure with the path that caused it.
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    /// Internal failure surfaced to the CLI (exit code 1).
    Failure(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            Error::Rank { op, expected, got } => {
                write!(f, "{op}: expected rank-{expected} tensor, got rank {got}")
            }
            Error::ChannelMismatch {
                op,
                what,
                expected,
                got,
            } => write!(f, "{op}: {what} has {got} channels, expected {expected}"),
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shapes {left:?} and {right:?} do not match")
            }
            Error::ConcatMismatch {
                part,
                expected,
                got,
            } => write!(
                f,
                "concat_channels: part {part} has batch/spatial extents {got:?}, expected {expected:?}"
            ),
            Error::OddSpatial { height, width } => write!(
                f,
                "maxpool2d: spatial extents {height}x{width} are not divisible by 2; \
                 resize inputs to even extents first (see the data module's resize policy)"
            ),
            Error::EmptyOutput { op, height, width } => {
                write!(f, "{op}: spec yields empty output plane {height}x{width}")
            }
            Error::NoDoubling {
                kernel,
                stride,
                padding,
            } => write!(
                f,
                "deconv2d: kernel {kernel:?}, stride {stride:?}, padding {padding:?} \
                 does not double the resolution exactly"
            ),
            Error::NotScalar { numel } => {
                write!(f, "backward: root must be a scalar, got {numel} elements")
            }
            Error::UnknownDomain { domain } => write!(
                f,
                "normalization: no recorded statistics for domain {domain}; \
                 run at least one training batch for this domain first"
            ),
            Error::BatchTooSmall { count } => write!(
                f,
                "normalization: train mode needs at least 2 values per channel, got {count}"
            ),
            Error::NonFiniteGrad { param } => {
                write!(f, "non-finite gradient in parameter `{param}`; step aborted")
            }
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Codec { message, offset } => {
                write!(f, "codec error at byte {offset}: {message}")
            }
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
            Error::Failure(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    /// True for errors caused by how the program was invoked or configured,
    /// as opposed to internal failures. The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Data(_))
    }
}
