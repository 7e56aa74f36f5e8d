//! Minimal Vision Transformer encoder with classification and hash heads.

mod config;
mod encoder;
mod image;
mod weights;

pub use config::ViTConfig;
pub use encoder::{
    encode, forward_layer, heads, mhsa, mlp_block, patch_embed, AttentionArtifacts, Encoding, TokenSequence,
};
pub use image::{
    load_image, read_f32_image, read_ppm, write_f32_image, write_ppm, Image, PIXEL_MEAN, PIXEL_STD,
};
pub use weights::{HeadWeights, LayerWeights, ModelWeights, Tensor};
