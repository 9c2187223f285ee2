//! EI-Net, the observation fusion module and SNE-Net, their losses, and
//! the training and evaluation loops.

mod blocks;
mod checkpoint;
mod config;
mod loss;
mod model;
mod train;

pub use blocks::{transition_block, DenseBlock, FusionGate, ResidualBlock, UnitNormalize};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{Ablation, NetConfig, Scale};
pub use loss::{
    batch_mae_loss, batch_scale_invariant_loss, mae_loss, mae_loss_grad, scale_invariant_loss,
    scale_invariant_with_grad, total_loss, ACOS_CLAMP, UNIT_TOLERANCE,
};
pub use model::{collapse_events, Batch, EfpsNet, EiNet, Prediction, Readout, SneNet, DENSE_DEPTH, RESIDUAL_BLOCKS};
pub use train::{
    assemble_batch, epoch_plan, evaluate, forward_losses, loss_and_backward, mean_angular_error_deg, predict,
    train, train_network, EvalReport, LabeledObject, LossBreakdown, ObjectScore, StepRecord,
    TrainHistory, TrainObserver, EVAL_BATCH,
};
