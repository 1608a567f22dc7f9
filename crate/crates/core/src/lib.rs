//! Multimodal preference fusion and causal reward learning for
//! preference-based reinforcement learning.
//!
//! Pipeline: keyframes and trajectory context feed two foundation-model
//! evaluators; their crowd-checked labels are fused within each modality and
//! then across modalities by a small probabilistic soft logic program. The
//! fused labels, augmented with synthesized trajectories, train an ensemble
//! reward model.

pub mod config;
pub mod discriminability;
pub mod error;
pub mod evaluators;
mod http;
pub mod intra_fusion;
pub mod keyframes;
pub mod pipeline;
pub mod psl;
pub mod report;
pub mod reward;
pub mod synthesis;
pub mod trajectory;

pub use error::{Error, Result};
pub use evaluators::{Evaluator, Judgment, Modality};
pub use intra_fusion::ModalResult;
pub use trajectory::{PreferenceLabel, Trajectory, TrajectoryPair};
