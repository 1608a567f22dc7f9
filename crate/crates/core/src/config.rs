//! TOML pipeline configuration with one section per stage.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::discriminability::{EmbeddingProvider, HttpEmbeddingClient, PixelEmbedder, StateEmbedder};
use crate::error::{Error, Result};
use crate::evaluators::{EvaluatorProfile, Modality, RemoteConfig};
use crate::intra_fusion::{DEFAULT_ALPHA, DEFAULT_CROWD_SIZE};
use crate::keyframes::KeyframeConfig;
use crate::psl::PslConfig;
use crate::reward::TrainConfig;
use crate::synthesis::{AugmentConfig, EnvSpec, DEFAULT_FORESIGHT_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Feedback rounds; capped so that queries never exceed `max_feedback`.
    pub rounds: usize,
    /// Trajectories from random actions added to the buffer.
    pub random_count: usize,
    pub random_action_scale: f64,
    /// Random candidate pairs drawn per round before selection.
    pub candidate_pool: usize,
    /// Foresight trajectories kept out of training for reward alignment.
    pub heldout_count: usize,
    /// Worker threads for fan-out stages; 0 uses every core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 3,
            random_count: 100,
            random_action_scale: 0.05,
            candidate_pool: 400,
            heldout_count: 50,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    /// State rows as embeddings (trajectories without frames).
    State,
    Pixel {
        side: u32,
    },
    Http {
        url: String,
        dim: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default)]
        max_retries: u32,
    },
}

fn default_timeout() -> f64 {
    30.0
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::State
    }
}

impl EmbeddingConfig {
    pub fn build(&self, state_dim: usize) -> Arc<dyn EmbeddingProvider> {
        match self {
            EmbeddingConfig::State => Arc::new(StateEmbedder { dim: state_dim }),
            EmbeddingConfig::Pixel { side } => Arc::new(PixelEmbedder { side: *side }),
            EmbeddingConfig::Http {
                url,
                dim,
                timeout_secs,
                max_retries,
            } => Arc::new(HttpEmbeddingClient::new(
                url.clone(),
                *dim,
                Duration::from_secs_f64(*timeout_secs),
                *max_retries,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminabilityConfig {
    /// Scale of the visual atom; calibrated from buffer pairs when absent.
    pub tau_v: Option<f64>,
    /// Scale of the temporal atom; calibrated when absent.
    pub tau_t: Option<f64>,
    pub embedding: EmbeddingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EvaluatorsConfig {
    /// Both modalities answer with the ground-truth return comparison.
    Scripted {
        #[serde(default)]
        margin_confidence: bool,
    },
    /// Simulated evaluators whose accuracy follows their context atom.
    Noisy { vlm: EvaluatorProfile, llm: EvaluatorProfile },
    Remote(RemoteConfig),
}

impl Default for EvaluatorsConfig {
    fn default() -> Self {
        EvaluatorsConfig::Scripted {
            margin_confidence: false,
        }
    }
}

/// Simulated profile with the given base accuracy and context sensitivity.
pub fn noisy_profile(modality: Modality, base: f64, sensitivity: f64, seed: u64) -> EvaluatorProfile {
    EvaluatorProfile {
        base_accuracy: base,
        context_sensitivity: sensitivity,
        confidence_noise: 0.05,
        modality,
        rng_seed: seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntraFusionConfig {
    pub crowd_size: usize,
    pub alpha: f64,
}

impl Default for IntraFusionConfig {
    fn default() -> Self {
        Self {
            crowd_size: DEFAULT_CROWD_SIZE,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub foresight: bool,
    pub foresight_count: usize,
    pub hindsight: bool,
    pub augment: AugmentConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            foresight: true,
            foresight_count: DEFAULT_FORESIGHT_COUNT,
            hindsight: true,
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub experiment: ExperimentConfig,
    pub env: EnvSpec,
    pub keyframes: KeyframeConfig,
    pub discriminability: DiscriminabilityConfig,
    pub evaluators: EvaluatorsConfig,
    pub intra_fusion: IntraFusionConfig,
    pub psl: PslConfig,
    pub synthesis: SynthesisConfig,
    pub reward: TrainConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Rounds actually run after the feedback cap.
    pub fn effective_rounds(&self) -> usize {
        self.experiment
            .rounds
            .min(self.reward.max_feedback / self.reward.queries_per_round.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.rounds == 0 {
            return Err(Error::Config("experiment.rounds must be at least 1".into()));
        }
        if !(e.random_action_scale >= 0.0 && e.random_action_scale.is_finite()) {
            return Err(Error::Config("experiment.random_action_scale must be finite and >= 0".into()));
        }
        if e.heldout_count == 0 {
            return Err(Error::Config("experiment.heldout_count must be at least 1".into()));
        }
        let buffer = e.random_count + if self.synthesis.foresight { self.synthesis.foresight_count } else { 0 };
        if buffer < 2 {
            return Err(Error::Config(format!("trajectory buffer of {buffer} cannot form pairs")));
        }
        if e.candidate_pool < self.reward.queries_per_round {
            return Err(Error::Config(format!(
                "experiment.candidate_pool ({}) is smaller than reward.queries_per_round ({})",
                e.candidate_pool, self.reward.queries_per_round
            )));
        }
        self.keyframes.validate().map_err(|err| Error::Config(err.to_string()))?;
        for (name, tau) in [("tau_v", self.discriminability.tau_v), ("tau_t", self.discriminability.tau_t)] {
            if let Some(t) = tau {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Config(format!("discriminability.{name} must be positive")));
                }
            }
        }
        let f = &self.intra_fusion;
        if f.crowd_size == 0 || !(0.0..=1.0).contains(&f.alpha) {
            return Err(Error::Config("intra_fusion needs crowd_size >= 1 and alpha in [0, 1]".into()));
        }
        let p = &self.psl;
        for w in [p.agreement_weight, p.vlm_conflict_weight, p.llm_conflict_weight, p.indecision_weight] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config("psl weights must be finite and >= 0".into()));
            }
        }
        if !(p.exponent == 1 || p.exponent == 2) {
            return Err(Error::Config("psl.exponent must be 1 or 2".into()));
        }
        let a = &self.synthesis.augment;
        if a.causal_k == 0 || a.budget_factor == 0 || !(a.threshold_fraction > 0.0) {
            return Err(Error::Config("synthesis.augment needs causal_k, budget_factor and threshold_fraction > 0".into()));
        }
        if !(0.0 < a.offset_range.0 && a.offset_range.0 <= a.offset_range.1) {
            return Err(Error::Config("synthesis.augment.offset_range must satisfy 0 < lo <= hi".into()));
        }
        match &self.evaluators {
            EvaluatorsConfig::Noisy { vlm, llm } => {
                if vlm.modality != Modality::Vlm || llm.modality != Modality::Llm {
                    return Err(Error::Config("evaluators.vlm/llm profiles carry the wrong modality".into()));
                }
                for prof in [vlm, llm] {
                    if !(0.0..=1.0).contains(&prof.base_accuracy) || prof.confidence_noise < 0.0 {
                        return Err(Error::Config("noisy profile needs base_accuracy in [0, 1] and noise >= 0".into()));
                    }
                }
            }
            EvaluatorsConfig::Remote(r) => {
                for m in [Modality::Vlm, Modality::Llm] {
                    let path = r.template_path(m);
                    if !path.is_file() {
                        return Err(Error::Config(format!("prompt asset {} does not exist", path.display())));
                    }
                }
            }
            EvaluatorsConfig::Scripted { .. } => {}
        }
        self.reward.validate()?;
        if self.effective_rounds() == 0 {
            return Err(Error::Config(format!(
                "reward.max_feedback ({}) is below one round of {} queries",
                self.reward.max_feedback, self.reward.queries_per_round
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn sections_parse() {
        let cfg = PipelineConfig::from_toml(
            r#"
            [experiment]
            seed = 4
            [env]
            name = "pick"
            [evaluators]
            mode = "noisy"
            vlm = { base_accuracy = 0.7, context_sensitivity = 0.4, confidence_noise = 0.0, modality = "VLM", rng_seed = 1 }
            llm = { base_accuracy = 0.7, context_sensitivity = 0.4, confidence_noise = 0.0, modality = "LLM", rng_seed = 2 }
            [reward]
            hidden = [16, 16]
            lambda_cf = { mode = "fixed", value = 0.0 }
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.experiment.seed, 4);
        assert!(matches!(cfg.env, EnvSpec::Pick(_)));
        assert!(PipelineConfig::from_toml("[experiment]\nbogus = 1").is_err());
    }

    #[test]
    fn missing_prompt_asset_fails_validation() {
        let mut cfg = PipelineConfig::default();
        cfg.evaluators = EvaluatorsConfig::Remote(RemoteConfig {
            endpoint: "http://127.0.0.1:9".into(),
            model: "m".into(),
            max_retries: 0,
            timeout_secs: 1.0,
            max_in_flight: 1,
            prompt_dir: "/nonexistent/prompts".into(),
            task_description: String::new(),
        });
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("prompt asset"), "{err}");
    }

    #[test]
    fn feedback_cap_limits_rounds() {
        let mut cfg = PipelineConfig::default();
        cfg.experiment.rounds = 10;
        cfg.reward.max_feedback = 120;
        cfg.reward.queries_per_round = 50;
        assert_eq!(cfg.effective_rounds(), 2);
        cfg.reward.max_feedback = 49;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("max_feedback"), "{err}");
    }
}
