//! Bidirectional trajectory synthesis: foresight warm-start trajectories
//! and hindsight counterfactual augmentation, on kinematic toy tasks.

pub mod counterfactual;
pub mod env;
pub mod foresight;

pub use counterfactual::{
    augment, default_threshold, generate_counterfactual, minimal_edit_filter, verify_counterfactual,
    AugmentConfig, CausalOracle, CounterfactualSample, Intervention, InterventionKind,
    ScriptedCausalOracle, Verifier, RESIM_TOLERANCE,
};
pub use env::{rollout, EnvReward, EnvSpec, PickEnv, ReachEnv, ToyEnv};
pub use foresight::{
    foresight_generate, random_rollouts, ForesightBatch, ForesightGenerator, ForesightMeta,
    ScriptedForesight, Strategy, DEFAULT_FORESIGHT_COUNT, FORESIGHT_PREFIX,
};
