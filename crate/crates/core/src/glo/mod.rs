//! Latent-optimised training of the shape, material and enhancer networks.
//!
//! Every training sample owns a latent that is optimised jointly with the
//! networks. Pre-training fits the generators to labeled samples, then the
//! enhancer to their ground-truth label slices. The semi-supervised phase
//! alternates labeled and unlabeled steps with separate optimisers and a
//! constant-then-linear-decay schedule. The shape network sits behind the
//! non-differentiable voxeliser, so its gradient is a central difference in
//! shape-parameter space pulled back through the output scaling.

mod config;
mod loss;
mod prior;
mod sample;
mod train;

pub use config::{GloConfig, Rates, Schedule};
pub use loss::{loss_iou, loss_material, loss_material_var, loss_slice_var, mse, MATERIAL_SCALES, SLICE_SCALES};
pub use prior::{LatentPrior, PRIOR_RIDGE};
pub use sample::{generate, sample_dataset, Synthetic};
pub use train::{
    metrics_csv, EpochMetrics, Group, Phase, StepGrads, StepLosses, StepOutput, TrainSample, TrainState,
    METRICS_HEADER,
};
