//! Self-attention modulation predictor.
//!
//! A 20-dimensional spectrogram is projected to `model_dim`, scaled by
//! `sqrt(model_dim)` and summed with sinusoidal positions, then passed through
//! pre-norm encoder layers (multi-head self-attention and a ReLU feed-forward
//! block, each with a residual connection), a final layer norm and an output
//! projection back to 20 dimensions. Forward and backward passes are written
//! out by hand and are generic over `f32` (training) and `f64` (gradient
//! checks).

mod backward;
mod checkpoint;
mod config;
mod forward;
mod loss;
mod optim;
mod params;
mod scalar;
mod train;

pub use backward::{backward, gradient_check, loss_and_gradients, Gradients};
pub use checkpoint::{
    export_encoder, load_checkpoint, load_params, load_train_state, save_train_state, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::PredictorConfig;
pub use forward::{forward, forward_cached, predict, ActivationTrace, AttentionMode, ForwardCache};
pub use loss::{l1_loss_and_grad, masked_l1_loss, LossScope};
pub use optim::{Adam, LearningRateSchedule};
pub use params::{init_params, EncoderLayer, LayerNorm, Linear, Params, PredictorParams};
pub use scalar::Scalar;
pub use train::{
    train, train_from, write_metrics, FeatureConfigToml, MetricsRow, SnapshotTarget, TrainCorpus, TrainEvent, TrainHyper,
    TrainOutcome, TrainState, Utterance,
};
