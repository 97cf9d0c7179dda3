//! The pretraining loop: masked input construction, student / predictor /
//! teacher passes, the masked L2 objective, AdamW with cosine learning-rate
//! decay, and the cosine-scheduled EMA teacher.

pub mod ema;
pub mod loss;
pub mod optim;
pub mod schedule;
pub mod train;

pub use ema::ema_update;
pub use loss::{masked_l2_loss, masked_l2_loss_grad};
pub use optim::AdamW;
pub use schedule::{lr_schedule, momentum_schedule};
pub use train::{
    construct_masked_input, pretrain, train_step, JepaModel, LossReport, Precision, PretrainOutcome,
    TrainConfig, TrainState,
};
