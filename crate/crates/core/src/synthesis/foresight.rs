//! Warm-start trajectories from scripted parametric policies.
//!
//! Every trajectory is produced by rolling the environment forward under a
//! waypoint controller, so it is dynamics-consistent by construction. The
//! outputs are bootstrapped demonstrations of mixed quality, not optimal
//! ones; their ids carry the `fs-` prefix.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::env::{rollout, ToyEnv};
use crate::error::{Error, Result};
use crate::evaluators::derive_seed;
use crate::trajectory::Trajectory;

pub const FORESIGHT_PREFIX: &str = "fs-";
pub const DEFAULT_FORESIGHT_COUNT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Straight,
    Arc,
    Staged,
    Hesitant,
    Overshoot,
    Undershoot,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Straight,
        Strategy::Arc,
        Strategy::Staged,
        Strategy::Hesitant,
        Strategy::Overshoot,
        Strategy::Undershoot,
    ];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// Parameters a generated trajectory was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForesightMeta {
    pub id: String,
    pub strategy: Strategy,
    pub start: [f64; 2],
    pub speed: f64,
}

pub trait ForesightGenerator: Send + Sync {
    /// Deterministic in `(index, seed)`.
    fn generate(&self, index: usize, seed: u64) -> Result<(Trajectory, ForesightMeta)>;
}

#[derive(Debug, Clone)]
pub struct ForesightBatch {
    pub trajectories: Vec<Trajectory>,
    pub meta: Vec<ForesightMeta>,
    /// Indices whose generation failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

/// Generates `n` trajectories; failed indices are reported, not retried.
pub fn foresight_generate(gen: &dyn ForesightGenerator, n: usize, seed: u64) -> Result<ForesightBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("foresight count must be at least 1".into()));
    }
    let mut batch = ForesightBatch {
        trajectories: Vec::with_capacity(n),
        meta: Vec::with_capacity(n),
        failures: Vec::new(),
    };
    for i in 0..n {
        match gen.generate(i, seed) {
            Ok((t, m)) => {
                batch.trajectories.push(t);
                batch.meta.push(m);
            }
            Err(e) => {
                log::warn!("foresight trajectory {i} failed: {e}");
                batch.failures.push((i, e.to_string()));
            }
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy)]
struct Waypoint {
    pos: [f64; 2],
    pause: usize,
}

/// Waypoint-following policies over a grid of start positions.
#[derive(Debug, Clone)]
pub struct ScriptedForesight {
    pub env: Arc<dyn ToyEnv>,
    pub starts: Vec<[f64; 2]>,
    pub strategies: Vec<Strategy>,
    /// Upper end of the per-trajectory action-noise std, drawn uniformly
    /// from `[0, action_noise]` so execution quality varies across the batch.
    pub action_noise: f64,
    /// Steps spent still at each task point (e.g. grasping).
    pub dwell: usize,
}

impl ScriptedForesight {
    pub fn new(env: Arc<dyn ToyEnv>) -> Self {
        Self {
            env,
            starts: vec![[0.1, 0.1], [0.1, 0.5], [0.4, 0.05], [0.1, 0.9], [0.6, 0.3]],
            strategies: Strategy::ALL.to_vec(),
            action_noise: 0.01,
            dwell: 3,
        }
    }

    fn plan(&self, strategy: Strategy, start: [f64; 2], rng: &mut ChaCha8Rng) -> Vec<Waypoint> {
        let points = self.env.task_points();
        let last = points.len() - 1;
        let mut from = start;
        let mut out = Vec::new();
        for (leg, &to) in points.iter().enumerate() {
            let d = [to[0] - from[0], to[1] - from[1]];
            let at = |f: f64| [from[0] + f * d[0], from[1] + f * d[1]];
            let wp = |pos: [f64; 2]| Waypoint { pos, pause: 0 };
            match strategy {
                Strategy::Straight => {}
                Strategy::Arc => {
                    let bend = rng.random_range(0.2..0.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let m = at(0.5);
                    out.push(wp([m[0] - bend * d[1], m[1] + bend * d[0]]));
                }
                Strategy::Staged => {
                    out.push(wp(if rng.random_bool(0.5) { [to[0], from[1]] } else { [from[0], to[1]] }));
                }
                Strategy::Hesitant => {
                    out.push(Waypoint {
                        pos: at(rng.random_range(0.3..0.7)),
                        pause: rng.random_range(2..6),
                    });
                }
                Strategy::Overshoot => out.push(wp(at(rng.random_range(1.15..1.4)))),
                Strategy::Undershoot if leg == last => {
                    out.push(wp(at(rng.random_range(0.5..0.85))));
                    return out;
                }
                Strategy::Undershoot => {}
            }
            let pause = if leg == last { 0 } else { self.dwell };
            out.push(Waypoint { pos: to, pause });
            from = to;
        }
        out
    }

    fn actions(&self, plan: &[Waypoint], start: [f64; 2], speed: f64, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let horizon = self.env.horizon();
        let a_dim = self.env.action_dim();
        let sd = self.action_noise.max(0.0) * rng.random_range(0.0..=1.0);
        let noise = Normal::new(0.0, sd)
            .map_err(|e| Error::InvalidArgument(format!("action noise: {e}")))?;
        let mut actions = Array2::zeros((horizon, a_dim));
        let mut pos = start;
        let mut idx = 0;
        let mut paused = 0;
        for t in 0..horizon {
            let mut a = [0.0, 0.0];
            if let Some(w) = plan.get(idx) {
                if paused > 0 {
                    paused -= 1;
                    if paused == 0 {
                        idx += 1;
                    }
                } else {
                    let d = [w.pos[0] - pos[0], w.pos[1] - pos[1]];
                    let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
                    if n <= speed {
                        a = d;
                        if w.pause == 0 {
                            idx += 1;
                        } else {
                            paused = w.pause;
                        }
                    } else {
                        a = [d[0] / n * speed, d[1] / n * speed];
                    }
                }
            }
            for (j, v) in a.iter().enumerate().take(a_dim) {
                actions[[t, j]] = v + noise.sample(rng);
            }
            pos = [pos[0] + actions[[t, 0]], pos[1] + actions[[t, 1]]];
        }
        Ok(actions)
    }
}

impl ForesightGenerator for ScriptedForesight {
    fn generate(&self, index: usize, seed: u64) -> Result<(Trajectory, ForesightMeta)> {
        if self.starts.is_empty() || self.strategies.is_empty() {
            return Err(Error::Config("foresight needs at least one start and one strategy".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64));
        let base = self.starts[index % self.starts.len()];
        let strategy = self.strategies[(index / self.starts.len()) % self.strategies.len()];
        let start = [
            base[0] + rng.random_range(-0.05..0.05),
            base[1] + rng.random_range(-0.05..0.05),
        ];
        let speed = self.env.nominal_speed() * rng.random_range(0.5..1.5);
        let plan = self.plan(strategy, start, &mut rng);
        let actions = self.actions(&plan, start, speed, &mut rng)?;
        let id = format!("{FORESIGHT_PREFIX}{index:04}");
        let traj = rollout(self.env.as_ref(), &id, &self.env.initial_state(start), actions)?;
        Ok((traj, ForesightMeta { id, strategy, start, speed }))
    }
}

/// Untrained-policy stand-in: uniform random actions in `[−scale, scale]`
/// from a jittered reset pose. Ids carry the `rand-` prefix.
pub fn random_rollouts(env: &dyn ToyEnv, n: usize, scale: f64, seed: u64) -> Result<Vec<Trajectory>> {
    let home = env.home();
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x5eed_0f_7a11, i as u64));
            let start = [home[0] + rng.random_range(-0.05..0.05), home[1] + rng.random_range(-0.05..0.05)];
            let actions = Array2::from_shape_fn((env.horizon(), env.action_dim()), |_| {
                rng.random_range(-scale..=scale)
            });
            rollout(env, &format!("rand-{i:04}"), &env.initial_state(start), actions)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::env::{PickEnv, ReachEnv};

    #[test]
    fn generation_is_deterministic() {
        let gen = ScriptedForesight::new(Arc::new(ReachEnv::default()));
        let a = foresight_generate(&gen, 1, 9).unwrap();
        let b = foresight_generate(&gen, 1, 9).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert!(a.trajectories[0].id().starts_with(FORESIGHT_PREFIX));
        assert!(foresight_generate(&gen, 0, 9).is_err());
    }

    #[test]
    fn straight_policy_reaches_goal() {
        let env = ReachEnv::default();
        let gen = ScriptedForesight {
            action_noise: 0.0,
            strategies: vec![Strategy::Straight],
            ..ScriptedForesight::new(Arc::new(env.clone()))
        };
        let (t, _) = gen.generate(4, 1).unwrap();
        let last = t.state(t.len()).unwrap();
        assert!((last[0] - env.goal[0]).abs() < 1e-9 && (last[1] - env.goal[1]).abs() < 1e-9);
    }

    #[test]
    fn pick_policy_grasps_object() {
        let gen = ScriptedForesight {
            action_noise: 0.0,
            strategies: vec![Strategy::Straight],
            ..ScriptedForesight::new(Arc::new(PickEnv::default()))
        };
        let (t, _) = gen.generate(1, 1).unwrap();
        assert_eq!(t.state(t.len()).unwrap()[4], 1.0);
    }
}
