//! Reference inference for the pruned ViT.
//!
//! Everything here is sequential and deterministic; the accelerator simulator
//! is checked bit-for-bit against these functions.

mod config;
mod model;
pub mod ops;
pub mod synth;
mod weights;

pub use config::ModelConfig;
pub use model::{
    classify, embed, encoder_forward, mlp_forward, model_forward, msa_forward, EncoderOutput, Forward, MsaOutput,
};
pub use weights::{
    DenseEncoder, DenseModel, EmbeddingWeights, EncoderBiases, EncoderLayout, EncoderWeights, Image, LayerNormParams,
    Model,
};
