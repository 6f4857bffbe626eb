//! Shared vocabulary, the transformer encoder with its tied MLM head, and
//! the max-pooled sparse representation head.

mod model;
mod sparse;
mod vocab;

pub use model::{
    encode_sparse, encode_sparse_batch, forward_mlm, hidden_states, layer_of, layer_param, mlm_logits,
    sparse_activations, sparse_pool, Batch, BoundParams, EncoderWeights, ModelConfig, MLM_BIAS, POSITION_EMBEDDING,
    TOKEN_EMBEDDING,
};
pub use sparse::{score, SparseVector};
pub use vocab::{is_special, words, Vocabulary, CLS, MASK, NUM_SPECIALS, PAD, SEP, SPECIALS, UNK};
