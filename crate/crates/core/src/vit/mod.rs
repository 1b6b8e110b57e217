//! Vision Transformer binary classifier.
//!
//! Images are cut into non-overlapping square patches, each flattened and
//! projected to the hidden width. A learned class token is prepended, learned
//! 1-D position embeddings are added, and the sequence runs through pre-norm
//! encoder blocks. The final class-token state feeds a single-logit head whose
//! sigmoid is the probability of the positive (COVID) class.

mod config;
mod model;
mod params;

pub use config::ViTConfig;
pub use model::{
    add_class_and_position, encoder_block, encoder_block_traced, forward_classify, mlp,
    multi_head_attention, patch_embed, patchify, patchify_one, project_patches, ViT,
};
pub use params::{
    param_count, per_layer_param_count, shape_table, LayerParams, NamedArrays, ViTParams, INIT_STD,
};
