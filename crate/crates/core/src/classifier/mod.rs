//! GAP-headed convolutional classifier trained with focal loss.

mod focal;
mod network;
mod train;

pub use focal::{
    focal_loss, focal_loss_batch, focal_loss_grad, focal_loss_logits, softmax2, FocalLossParams, PROB_EPS,
};
pub use network::{
    build_classifier, classify, predict_proba, Backbone, ClassifierEpoch, ClassifierForward, ClassifierSpec,
    ClassifierState,
};
pub use train::{train_classifier, write_training_log, ClassifierTrainConfig};
