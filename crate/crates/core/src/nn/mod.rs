//! Dense tensors, a gradient tape, Adam, and the generator/discriminator
//! networks.

mod adam;
mod conv;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use layers::{DiscConfig, Discriminator, GenConfig, Generator};
pub use params::{read_checkpoint, write_checkpoint, ParamId, ParamStore, VCM_MAGIC, VCM_VERSION};
pub use tape::{Bound, Conv1dSpec, Conv2dSpec, Gradients, Tape, Var, INSTANCE_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("{got} gradients for {expected} parameters")]
    GradientCount { expected: usize, got: usize },
    #[error("sequence length {len} is not divisible by the downsample factor {factor}")]
    IndivisibleLength { len: usize, factor: usize },
    #[error("input {height}x{width} is smaller than the receptive field {min}x{min}")]
    ReceptiveField { height: usize, width: usize, min: usize },
    #[error("channel count {got} does not match the model's {expected}")]
    Channels { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
