//! Convolutional backbone: layer kernels, the encoder with its dense
//! (teacher) and sparse (student) passes, the predictor, the mask token, and
//! encoder checkpoints.

pub mod checkpoint;
pub mod encoder;
pub mod layers;
pub mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest};
pub use encoder::{
    global_average_pool, insert_mask_token, insert_mask_token_backward, Encoder, EncoderArch,
    MaskToken, Predictor, TeacherState,
};
pub use layers::{BatchNorm, Conv2d, DepthwiseConv, LayerMask, MaxPool, Param, PointwiseConv};
pub use network::{Layer, LayerKind, LayerSpec, Mode, Sequential, Tape};
