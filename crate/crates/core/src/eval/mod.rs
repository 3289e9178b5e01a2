//! Task-based evaluation with a small volumetric segmenter.

mod metrics;
mod protocol;
mod segnet;

pub use metrics::{dice, iou, to_bool};
pub use protocol::{evaluate_protocol, report_csv, require_paths, Arm, ArmReport, ProtocolConfig, SiteSplits, ARMS, REPORT_HEADER};
pub use segnet::{standardize, train_epochs, train_segmenter, SegNet, SegSample, SegTrainConfig, Target, SEG_PREFIX};
