//! Hindsight counterfactuals: locate causal steps of a preferred
//! trajectory, apply a minimal action-space intervention there, re-simulate,
//! and keep the edit only if it is small and reverses the preference.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{rollout, ToyEnv};
use crate::discriminability::DiscriminabilityScores;
use crate::error::{Error, Result};
use crate::evaluators::{derive_seed, step_rewards, Evaluator, RewardFn};
use crate::intra_fusion::fuse_intra;
use crate::keyframes::KeyframeSet;
use crate::trajectory::{PreferenceLabel, Trajectory, TrajectoryPair};

/// Unmasked steps may differ by at most this much after re-simulation.
pub const RESIM_TOLERANCE: f64 = 1e-9;
/// Steps on each side of the edit that are smoothed and masked.
pub const SMOOTHING_RADIUS: usize = 2;
/// Default edit budget as a fraction of the mean per-step L1 norm.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterventionKind {
    /// Freeze for `magnitude` steps, then catch up over the next three.
    HoldDelay,
    /// Displace the path by `magnitude · direction`, blended linearly
    /// over the neighbouring steps.
    PositionOffset,
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterventionKind::HoldDelay => "hold-delay",
            InterventionKind::PositionOffset => "position-offset",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub kind: InterventionKind,
    pub t_star: usize,
    pub magnitude: f64,
    /// Unit action-space direction; empty for hold-delay.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub direction: Vec<f64>,
}

impl Intervention {
    pub fn hold_delay(t_star: usize, steps: usize) -> Self {
        Self {
            kind: InterventionKind::HoldDelay,
            t_star,
            magnitude: steps as f64,
            direction: Vec::new(),
        }
    }

    pub fn position_offset(t_star: usize, magnitude: f64, direction: Vec<f64>) -> Self {
        Self {
            kind: InterventionKind::PositionOffset,
            t_star,
            magnitude,
            direction,
        }
    }

    fn hold_steps(&self) -> usize {
        self.magnitude.round().max(0.0) as usize
    }

    /// Inclusive 1-based mask window clipped to `[1, len]`.
    pub fn window(&self, len: usize) -> (usize, usize) {
        let extra = match self.kind {
            InterventionKind::HoldDelay => self.hold_steps(),
            InterventionKind::PositionOffset => 0,
        };
        (
            self.t_star.saturating_sub(SMOOTHING_RADIUS).max(1),
            (self.t_star + extra + SMOOTHING_RADIUS).min(len),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualSample {
    pub original: Trajectory,
    pub edited: Trajectory,
    /// `mask[t − 1]` is true for edited steps and their smoothing neighbours.
    pub mask: Vec<bool>,
    pub intervention: Intervention,
}

impl CounterfactualSample {
    /// Σ over masked steps of the L1 distance between edited and original.
    pub fn masked_l1(&self) -> f64 {
        let (a, b) = (self.original.combined(), self.edited.combined());
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .sum()
    }

    /// Largest absolute deviation over unmasked steps.
    pub fn unmasked_deviation(&self) -> f64 {
        let (a, b) = (self.original.combined(), self.edited.combined());
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| !m)
            .flat_map(|(i, _)| {
                a.row(i)
                    .iter()
                    .zip(b.row(i))
                    .map(|(x, y)| (x - y).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    pub fn mask_as_ints(&self) -> Vec<u8> {
        self.mask.iter().map(|&m| u8::from(m)).collect()
    }

    /// Sidecar record `{original_id, cf_id, mask, intervention}`.
    pub fn record(&self) -> serde_json::Value {
        serde_json::json!({
            "original_id": self.original.id(),
            "cf_id": self.edited.id(),
            "mask": self.mask_as_ints(),
            "intervention": self.intervention,
        })
    }
}

/// Applies `intervention` to the action sequence of `preferred` and
/// re-simulates from its initial state.
pub fn generate_counterfactual(
    preferred: &Trajectory,
    intervention: &Intervention,
    env: &dyn ToyEnv,
) -> Result<CounterfactualSample> {
    let len = preferred.len();
    let t_star = intervention.t_star;
    if t_star == 0 || t_star > len {
        return Err(Error::IndexOutOfRange { index: t_star, len });
    }
    if !(intervention.magnitude.is_finite() && intervention.magnitude >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "intervention magnitude {} must be finite and non-negative",
            intervention.magnitude
        )));
    }
    let mut actions: Array2<f64> = preferred.actions().to_owned();
    let i0 = t_star - 1;
    match intervention.kind {
        InterventionKind::HoldDelay => {
            let d = intervention.hold_steps();
            let held_end = (i0 + d).min(len);
            let mut missed = vec![0.0; actions.ncols()];
            for i in i0..held_end {
                for (m, a) in missed.iter_mut().zip(actions.row_mut(i).iter_mut()) {
                    *m += *a;
                    *a = 0.0;
                }
            }
            if d > 0 {
                for i in held_end..(held_end + 3).min(len) {
                    for (a, m) in actions.row_mut(i).iter_mut().zip(&missed) {
                        *a += m / 3.0;
                    }
                }
            }
        }
        InterventionKind::PositionOffset => {
            let dir = &intervention.direction;
            if dir.len() != actions.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: actions.ncols(),
                    actual: dir.len(),
                });
            }
            // displacement of state t is δ·w(t − t*) with a triangular
            // profile; the initial state cannot move
            let weight = |t: usize| -> f64 {
                if t <= 1 {
                    return 0.0;
                }
                let k = t.abs_diff(t_star) as f64;
                (1.0 - k / SMOOTHING_RADIUS as f64).max(0.0)
            };
            let lo = t_star.saturating_sub(SMOOTHING_RADIUS + 1).max(1);
            let hi = (t_star + SMOOTHING_RADIUS).min(len);
            for t in lo..=hi {
                let dw = weight(t + 1) - weight(t);
                if dw != 0.0 {
                    for (a, u) in actions.row_mut(t - 1).iter_mut().zip(dir) {
                        *a += intervention.magnitude * dw * u;
                    }
                }
            }
        }
    }
    let id = format!("{}-cf-{}-t{}", preferred.id(), intervention.kind, t_star);
    let initial = preferred.state(1)?.to_vec();
    let edited = rollout(env, &id, &initial, actions)?;
    let (lo, hi) = intervention.window(len);
    let mask = (1..=len).map(|t| (lo..=hi).contains(&t)).collect();
    Ok(CounterfactualSample {
        original: preferred.clone(),
        edited,
        mask,
        intervention: intervention.clone(),
    })
}

/// Accepts iff the masked L1 edit distance is at most `threshold`.
pub fn minimal_edit_filter(sample: &CounterfactualSample, threshold: f64) -> bool {
    sample.masked_l1() <= threshold
}

/// `fraction` times the mean per-step L1 norm of the combined vectors.
pub fn default_threshold(traj: &Trajectory, fraction: f64) -> f64 {
    let x = traj.combined();
    let total: f64 = x.iter().map(|v| v.abs()).sum();
    fraction * total / traj.len() as f64
}

/// Source of candidate causal steps.
pub trait CausalOracle: Send + Sync {
    fn causal_steps(&self, traj: &Trajectory, keyframes: &KeyframeSet, k: usize) -> Result<Vec<usize>>;
}

/// Ranks steps by the magnitude of the ground-truth reward change into
/// them; ties prefer keyframes, then earlier steps.
#[derive(Clone)]
pub struct ScriptedCausalOracle {
    pub reward: Arc<dyn RewardFn>,
}

impl CausalOracle for ScriptedCausalOracle {
    fn causal_steps(&self, traj: &Trajectory, keyframes: &KeyframeSet, k: usize) -> Result<Vec<usize>> {
        let r = step_rewards(traj, self.reward.as_ref())?;
        let mut deltas: Vec<(usize, f64)> = (2..=traj.len())
            .map(|t| (t, (r[t - 1] - r[t - 2]).abs()))
            .filter(|&(_, d)| d > 1e-12)
            .collect();
        deltas.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| keyframes.contains(b.0).cmp(&keyframes.contains(a.0)))
                .then_with(|| a.0.cmp(&b.0))
        });
        Ok(deltas.into_iter().take(k).map(|(t, _)| t).collect())
    }
}

/// Checks that the fused language-modality label prefers the original.
#[derive(Clone)]
pub struct Verifier {
    pub evaluator: Arc<dyn Evaluator>,
    pub crowd_size: usize,
    pub alpha: f64,
    pub context: Option<DiscriminabilityScores>,
}

impl Verifier {
    pub fn verify(&self, sample: &CounterfactualSample, seed: u64) -> Result<bool> {
        let pair = TrajectoryPair::new(sample.original.clone(), sample.edited.clone())?;
        let r = fuse_intra(self.evaluator.as_ref(), &pair, self.context, self.crowd_size, self.alpha, seed)?;
        Ok(r.label == PreferenceLabel::APreferred)
    }
}

pub fn verify_counterfactual(sample: &CounterfactualSample, verifier: &Verifier, seed: u64) -> Result<bool> {
    verifier.verify(sample, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub max_cf: usize,
    /// Intervention attempts allowed per trajectory, as a multiple of `max_cf`.
    pub budget_factor: usize,
    /// Absolute L1 threshold; defaults to a fraction of the mean step norm.
    pub threshold: Option<f64>,
    pub threshold_fraction: f64,
    /// Number of causal candidates requested from the oracle.
    pub causal_k: usize,
    pub max_hold_steps: usize,
    /// Offset magnitudes are drawn from this range, as multiples of the threshold.
    pub offset_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_cf: 5,
            budget_factor: 4,
            threshold: None,
            threshold_fraction: DEFAULT_THRESHOLD_FRACTION,
            causal_k: 3,
            max_hold_steps: 3,
            offset_range: (0.05, 0.25),
        }
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Identify → intervene → filter → verify, until `max_cf` samples are
/// verified or the attempt budget runs out.
pub fn augment(
    preferred: &Trajectory,
    keyframes: &KeyframeSet,
    cfg: &AugmentConfig,
    env: &dyn ToyEnv,
    oracle: &dyn CausalOracle,
    verifier: &Verifier,
    seed: u64,
) -> Result<Vec<CounterfactualSample>> {
    let causal = oracle.causal_steps(preferred, keyframes, cfg.causal_k)?;
    if causal.is_empty() || cfg.max_cf == 0 {
        return Ok(Vec::new());
    }
    let threshold = cfg
        .threshold
        .unwrap_or_else(|| default_threshold(preferred, cfg.threshold_fraction));
    let mut out: Vec<CounterfactualSample> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for attempt in 0..cfg.max_cf * cfg.budget_factor {
        if out.len() >= cfg.max_cf {
            break;
        }
        let attempt_seed = derive_seed(seed, attempt as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
        let t_star = causal[rng.random_range(0..causal.len())];
        let intervention = if rng.random_bool(0.5) {
            Intervention::hold_delay(t_star, rng.random_range(1..=cfg.max_hold_steps.max(1)))
        } else {
            let (lo, hi) = cfg.offset_range;
            let magnitude = threshold * if hi > lo { rng.random_range(lo..hi) } else { lo };
            Intervention::position_offset(t_star, magnitude, random_unit(preferred.action_dim().max(1), &mut rng))
        };
        let key = serde_json::to_string(&intervention)?;
        if !seen.insert(key) {
            continue;
        }
        let sample = match generate_counterfactual(preferred, &intervention, env) {
            Ok(s) => s,
            Err(Error::Divergence { .. }) => continue,
            Err(e) => return Err(e),
        };
        if sample.unmasked_deviation() > RESIM_TOLERANCE {
            log::debug!("{}: edit at t={} leaks outside its mask", preferred.id(), t_star);
            continue;
        }
        if !minimal_edit_filter(&sample, threshold) {
            continue;
        }
        if !verifier.verify(&sample, attempt_seed)? {
            continue;
        }
        let n = out.len();
        let edited = sample.edited.with_id(format!("{}-cf{n}", preferred.id()));
        out.push(CounterfactualSample { edited, ..sample });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::env::{PickEnv, ReachEnv};

    fn line(env: &dyn ToyEnv, len: usize, step: [f64; 2]) -> Trajectory {
        let actions = Array2::from_shape_fn((len, 2), |(_, j)| step[j]);
        rollout(env, "line", &env.initial_state([0.1, 0.1]), actions).unwrap()
    }

    #[test]
    fn null_intervention_is_identity_with_mask() {
        let env = ReachEnv::default();
        let t = line(&env, 20, [0.01, 0.02]);
        for i in [Intervention::hold_delay(8, 0), Intervention::position_offset(8, 0.0, vec![1.0, 0.0])] {
            let s = generate_counterfactual(&t, &i, &env).unwrap();
            assert_eq!(s.edited.states(), t.states());
            assert_eq!(s.edited.actions(), t.actions());
            assert!(s.mask[7] && s.mask[5] && !s.mask[4]);
            assert!(minimal_edit_filter(&s, 0.0));
        }
    }

    #[test]
    fn hold_delay_freezes_then_rejoins() {
        let env = PickEnv::default();
        let t = line(&env, 30, [0.01, 0.005]);
        let s = generate_counterfactual(&t, &Intervention::hold_delay(10, 3), &env).unwrap();
        let st = s.edited.states();
        for t in 10..=12 {
            assert_eq!(st.row(t - 1), st.row(9));
        }
        assert!(s.unmasked_deviation() < RESIM_TOLERANCE);
        // [t* − 2, t* + d + 2]
        assert_eq!(s.mask.iter().filter(|&&m| m).count(), 8);
    }

    #[test]
    fn position_offset_profile() {
        let env = ReachEnv::default();
        let t = line(&env, 20, [0.01, 0.0]);
        let s = generate_counterfactual(&t, &Intervention::position_offset(10, 0.2, vec![0.0, 1.0]), &env).unwrap();
        let dy: Vec<f64> = (8..=12)
            .map(|k| s.edited.state(k).unwrap()[1] - t.state(k).unwrap()[1])
            .collect();
        let want = [0.0, 0.1, 0.2, 0.1, 0.0];
        for (d, w) in dy.iter().zip(want) {
            assert!((d - w).abs() < 1e-12, "{dy:?}");
        }
        assert!(s.unmasked_deviation() < RESIM_TOLERANCE);
    }

    #[test]
    fn out_of_range_step() {
        let env = ReachEnv::default();
        let t = line(&env, 10, [0.01, 0.0]);
        assert!(matches!(
            generate_counterfactual(&t, &Intervention::hold_delay(11, 1), &env),
            Err(Error::IndexOutOfRange { index: 11, len: 10 })
        ));
    }

    #[test]
    fn scripted_oracle_ranks_jumps() {
        let env = ReachEnv::default();
        let t = line(&env, 10, [0.01, 0.0]);
        let jumps = [0.0, 0.0, 5.0, 5.0, 1.0, 1.0, 3.0, 3.0, 2.0, -4.0];
        let reward = move |s: ndarray::ArrayView1<'_, f64>, _a: ndarray::ArrayView1<'_, f64>| -> Result<f64, String> {
            let t = ((s[0] - 0.1) / 0.01).round() as usize;
            Ok(jumps[t])
        };
        let oracle = ScriptedCausalOracle { reward: Arc::new(reward) };
        let k = KeyframeSet::new([], 10).unwrap();
        let mut top = oracle.causal_steps(&t, &k, 3).unwrap();
        top.sort();
        // |Δ| = 5 at 3, 4 at 5, 2 at 7, 1 at 9, 6 at 10
        assert_eq!(top, vec![3, 5, 10]);

        let flat = ScriptedCausalOracle { reward: Arc::new(|_: ndarray::ArrayView1<'_, f64>, _: ndarray::ArrayView1<'_, f64>| Ok(1.0)) };
        assert!(flat.causal_steps(&t, &k, 3).unwrap().is_empty());
    }
}
