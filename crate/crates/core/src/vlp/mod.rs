//! Stage two: knowledge-distilled vision-language pretraining.

mod loss;
mod model;
mod schedule;
mod teacher;
mod train;

pub use loss::{
    knowledge_distillation_loss, knowledge_distillation_tape, multimodal_contrastive_loss,
    multimodal_contrastive_tape, total_vlp_loss, total_vlp_tape, VlpLossConfig,
};
pub use model::{VlModel, VlModelConfig, TEXT_PARAM_PREFIX, VISION_PARAM_PREFIX};
pub use schedule::lr_schedule;
pub use teacher::{MockTeacher, TeacherCache, TeacherHandle};
pub use train::{
    train_vlp, train_vlp_from, VlpPair, VlpStepRecord, VlpTrainConfig, VlpTrainReport,
    KD_BRIDGE_PARAM,
};
