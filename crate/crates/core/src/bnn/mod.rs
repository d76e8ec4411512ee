//! Dense binary networks trained through latent continuous weights.
//!
//! Each binary layer keeps a real matrix `w_c ∈ [−1, 1]` and computes with
//! its signs. The backward pass treats weight binarization as the identity
//! and activation binarization as hard-tanh, so gradients land on `w_c`,
//! which SGD updates and clips.

mod arch;
mod checkpoint;
mod layers;
mod network;
mod train;

pub use arch::{ArchError, ArchSpec, LayerKind};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use layers::{
    binarize_activation, binarize_activation_backward, cross_entropy, softmax, Activation, BatchNorm,
    BatchNormCache, BinaryDense, ContinuousDense, Kernel, Layer, WeightSource, BN_EPSILON, BN_MOMENTUM,
};
pub use network::{
    accuracy, evaluate, evaluate_with, ForwardCache, ForwardConfig, Gradients, LatentLr, LatentLrScale, LayerGrad, Mode, Network,
    WeightMode,
};
pub use train::{train, train_step, EpochLog, StepStats, TrainConfig};
