//! Benchmark plumbing: metrics, sequences, protocols, synthetic data and
//! overlays.

pub mod metrics;
pub mod overlay;
pub mod protocol;
pub mod rbot;
pub mod sequence;
pub mod synth;

pub use metrics::{auc_score, pose_errors, vertex_error, EvalReport, Thresholds};
pub use protocol::{opt_protocol, rbot_protocol, FrozenTracker, GroundTruthTracker, PoseTracker, RegionTracker};
pub use sequence::{FrameSource, InMemorySequence, Sequence};
