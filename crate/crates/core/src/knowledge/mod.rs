//! Stage one: contrastive training of the knowledge encoder on graph
//! attribute pairs.

mod batch;
mod loss;
mod train;

pub use batch::{build_knowledge_batch, build_knowledge_batch_with, KnowledgeBatch};
pub use loss::{knowledge_infonce_loss, knowledge_infonce_tape, UNIT_NORM_TOLERANCE};
pub(crate) use loss::validate_unit_rows;
pub use train::{
    train_knowledge_encoder, KnowledgeEncoder, KnowledgeTrainConfig, TrainReport,
    KNOWLEDGE_PARAM_PREFIX,
};
