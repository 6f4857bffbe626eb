//! Freeze-aware MLM pre-training and ranking fine-tuning, and the staged
//! adaptation pipeline built from them.

mod loss;
mod masking;
mod pipeline;
mod stage;


pub use loss::{flops, ranking_loss, ranking_loss_value, RankingLoss};
pub use masking::{mask_tokens, MaskAction, MaskedRow, MlmBatch, DEFAULT_MASK_PROB, IGNORE};
pub use pipeline::{
    run_pipeline, Mode, PipelineData, PipelineRun, PipelineSpec, Stages, BASE_SEED_OFFSET, FINETUNE_SEED_OFFSET,
    SOURCE_SEED_OFFSET, TARGET_SEED_OFFSET,
};
pub use stage::{finetune_ir, pretrain_mlm, LogRecord, StageOutput, StageSpec, TrainConfig};
