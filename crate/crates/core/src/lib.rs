//! Learned CT simulation with federated training.
//!
//! The crate is organised bottom-up:
//!
//! * [`diff`]: dense tensors, a reverse-mode tape and Adam.
//! * [`ct`]: Joseph forward/back projection, ramp filtering and FBP/FDK.
//! * [`ssm`]: PCA statistical shape model, pose, voxelisation and
//!   finite-difference gradients through the shape pipeline.
//! * [`nets`]: the shape, material and enhancer networks.
//! * [`glo`]: latent-optimised training, losses and the latent prior.
//! * [`federated`]: synchronous server/client gradient aggregation.
//! * [`phantom`]: procedural multi-site datasets.
//! * [`eval`]: a small segmentation network and the evaluation protocol.

pub mod ct;
pub mod diff;
pub mod error;
pub mod eval;
pub mod federated;
pub mod fsct;
pub mod glo;
pub mod nets;
pub mod par;
pub mod phantom;
pub mod rng;
pub mod ssm;

pub use error::{Error, Result};
