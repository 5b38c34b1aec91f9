pub mod checkpoint;
pub mod mask;
pub mod optim;
pub mod params;
pub mod tape;
pub mod transformer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use mask::{build_attention_mask, AttentionMaskSpec};
pub use optim::{AdamW, AdamWConfig};
pub use params::{dot, GradScope, Gradients, HeadKind, ParamGroup, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use transformer::{
    argmax_rows, attention_maps, forward, forward_with_head, forward_with_input, head_kind_for, head_loss_on_features, head_outputs,
    hidden_states, readout_position, summary_features, summary_position, EncoderInput, Encoded, ModelConfig,
    TinyModel,
};
