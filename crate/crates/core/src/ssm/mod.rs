//! Statistical shape model: corresponded multi-region surfaces, PCA modes,
//! similarity pose, voxelisation and finite-difference gradients through the
//! non-differentiable rasterisation step.

mod fd;
mod mesh;
mod model;
mod voxel;

pub use fd::{fd_grad, fd_grad_through_ssm, FdSteps};
pub use mesh::{SphereGrid, Surface};
pub use model::{build_ssm, ShapeModel, ShapeParams, CLAMP_SIGMAS, POSE_DIMS};
pub use voxel::{soft_foreground, voxelize, voxelize_soft, LabelVolume, SoftLabels};
