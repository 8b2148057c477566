//! Minimal differentiable compute core and the edge-convolution encoder.

mod encoder;
mod params;
mod tape;
mod tensor;

pub use encoder::{
    edge_conv_layer, encode_angle, encode_angle_on, AngleRepresentation, EncoderConfig,
    EncoderParams, GraphInput, POINT_DIM,
};
pub use params::{Checkpoint, Linear, Mlp, ModelParameters, NamedTensor, ParamId, CHECKPOINT_VERSION};
pub use tape::{log_softmax, softmax, Gradients, Tape, Var};
pub use tensor::Tensor;
