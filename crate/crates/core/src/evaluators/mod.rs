//! Sources of per-query preference judgments.
//!
//! Every evaluator answers for the order in which the pair is shown
//! (`first` as A, `second` as B). Canonicalizing permuted queries back to
//! the original order is the caller's job (see [`crate::intra_fusion`]).

pub mod remote;

use std::fmt;
use std::sync::Arc;

use ndarray::ArrayView1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use remote::{parse_response, RemoteConfig, RemoteEvaluator};

use crate::discriminability::DiscriminabilityScores;
use crate::error::{Error, Result};
use crate::trajectory::{PreferenceLabel, Trajectory, TrajectoryPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "VLM", alias = "vision-like", alias = "vlm")]
    Vlm,
    #[serde(rename = "LLM", alias = "language-like", alias = "llm")]
    Llm,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Vlm => Modality::Llm,
            Modality::Llm => Modality::Vlm,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Vlm => "VLM",
            Modality::Llm => "LLM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub label: PreferenceLabel,
    pub confidence: f64,
}

impl Judgment {
    pub fn new(label: PreferenceLabel, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} is outside [0, 1]"
            )));
        }
        Ok(Self { label, confidence })
    }

    /// The same judgment expressed for the swapped pair order.
    pub fn swapped(self) -> Self {
        Self {
            label: self.label.swapped(),
            ..self
        }
    }
}

/// One preference query as shown to an evaluator.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub first: &'a Trajectory,
    pub second: &'a Trajectory,
    pub context: Option<DiscriminabilityScores>,
    /// Distinguishes repeated draws for stochastic evaluators.
    pub draw: u64,
}

pub trait Evaluator: Send + Sync {
    fn modality(&self) -> Modality;

    fn judge(&self, query: &Query<'_>) -> Result<Judgment>;
}

/// Per-step ground-truth reward `r(s_t, a_t)`.
pub trait RewardFn: Send + Sync {
    fn reward(&self, state: ArrayView1<'_, f64>, action: ArrayView1<'_, f64>) -> Result<f64, String>;
}

impl<F> RewardFn for F
where
    F: Fn(ArrayView1<'_, f64>, ArrayView1<'_, f64>) -> Result<f64, String> + Send + Sync,
{
    fn reward(&self, state: ArrayView1<'_, f64>, action: ArrayView1<'_, f64>) -> Result<f64, String> {
        self(state, action)
    }
}

/// Per-step rewards of a trajectory (index 0 is step 1).
pub fn step_rewards(traj: &Trajectory, reward: &dyn RewardFn) -> Result<Vec<f64>> {
    traj.states()
        .rows()
        .into_iter()
        .zip(traj.actions().rows())
        .enumerate()
        .map(|(i, (s, a))| {
            reward
                .reward(s, a)
                .map_err(|message| Error::RewardFn { step: i + 1, message })
        })
        .collect()
}

pub fn trajectory_return(traj: &Trajectory, reward: &dyn RewardFn) -> Result<f64> {
    Ok(step_rewards(traj, reward)?.iter().sum())
}

/// Ground-truth label from cumulative returns with exact comparison.
pub fn label_from_returns(r_a: f64, r_b: f64) -> PreferenceLabel {
    if r_a > r_b {
        PreferenceLabel::APreferred
    } else if r_a < r_b {
        PreferenceLabel::BPreferred
    } else {
        PreferenceLabel::Indecision
    }
}

/// Scripted teacher: prefers the higher ground-truth return, confidence 1.
pub fn scripted_teacher(pair: &TrajectoryPair, reward: &dyn RewardFn) -> Result<Judgment> {
    let (ra, rb) = (
        trajectory_return(&pair.a, reward)?,
        trajectory_return(&pair.b, reward)?,
    );
    Ok(Judgment {
        label: label_from_returns(ra, rb),
        confidence: 1.0,
    })
}

#[derive(Clone)]
pub struct ScriptedTeacher {
    reward: Arc<dyn RewardFn>,
    modality: Modality,
    margin_confidence: bool,
}

impl ScriptedTeacher {
    pub fn new(reward: Arc<dyn RewardFn>, modality: Modality) -> Self {
        Self {
            reward,
            modality,
            margin_confidence: false,
        }
    }

    /// Opt-in confidence `σ(|R_A − R_B|)` instead of the constant 1.
    pub fn with_margin_confidence(mut self, enabled: bool) -> Self {
        self.margin_confidence = enabled;
        self
    }
}

impl Evaluator for ScriptedTeacher {
    fn modality(&self) -> Modality {
        self.modality
    }

    fn judge(&self, query: &Query<'_>) -> Result<Judgment> {
        let ra = trajectory_return(query.first, self.reward.as_ref())?;
        let rb = trajectory_return(query.second, self.reward.as_ref())?;
        let confidence = if self.margin_confidence {
            1.0 / (1.0 + (-(ra - rb).abs()).exp())
        } else {
            1.0
        };
        Ok(Judgment {
            label: label_from_returns(ra, rb),
            confidence,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorProfile {
    pub base_accuracy: f64,
    /// Accuracy gained per unit of the modality's context atom above 0.5.
    pub context_sensitivity: f64,
    /// Standard deviation of the confidence jitter.
    pub confidence_noise: f64,
    pub modality: Modality,
    pub rng_seed: u64,
}

impl EvaluatorProfile {
    /// Probability of emitting the ground-truth label under `context`.
    pub fn accuracy(&self, context: DiscriminabilityScores) -> f64 {
        let atom = match self.modality {
            Modality::Vlm => context.vd,
            Modality::Llm => context.td,
        };
        (self.base_accuracy + self.context_sensitivity * (atom - 0.5)).clamp(0.0, 1.0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// One simulated judgment: the ground truth with probability
/// `profile.accuracy(context)`, otherwise a uniformly chosen wrong label.
pub fn noisy_judgment(
    profile: &EvaluatorProfile,
    context: DiscriminabilityScores,
    gt: PreferenceLabel,
    draw: u64,
) -> Judgment {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(profile.rng_seed, draw));
    let p = profile.accuracy(context);
    let label = if rng.random::<f64>() < p {
        gt
    } else {
        let wrong: Vec<PreferenceLabel> = PreferenceLabel::ALL
            .into_iter()
            .filter(|&l| l != gt)
            .collect();
        wrong[rng.random_range(0..wrong.len())]
    };
    let jitter = if profile.confidence_noise > 0.0 {
        Normal::new(0.0, profile.confidence_noise)
            .expect("positive std")
            .sample(&mut rng)
    } else {
        0.0
    };
    Judgment {
        label,
        confidence: (p + jitter).clamp(0.0, 1.0),
    }
}

/// Simulated foundation-model evaluator whose accuracy follows its context atom.
#[derive(Clone)]
pub struct NoisyEvaluator {
    profile: EvaluatorProfile,
    reward: Arc<dyn RewardFn>,
}

impl NoisyEvaluator {
    pub fn new(profile: EvaluatorProfile, reward: Arc<dyn RewardFn>) -> Self {
        Self { profile, reward }
    }

    pub fn profile(&self) -> &EvaluatorProfile {
        &self.profile
    }
}

impl Evaluator for NoisyEvaluator {
    fn modality(&self) -> Modality {
        self.profile.modality
    }

    fn judge(&self, query: &Query<'_>) -> Result<Judgment> {
        let context = query.context.ok_or_else(|| {
            Error::InvalidArgument("noisy evaluator needs discriminability context".into())
        })?;
        let gt = label_from_returns(
            trajectory_return(query.first, self.reward.as_ref())?,
            trajectory_return(query.second, self.reward.as_ref())?,
        );
        Ok(noisy_judgment(&self.profile, context, gt, query.draw))
    }
}
