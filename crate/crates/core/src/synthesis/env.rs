//! Deterministic kinematic toy environments with analytic rewards.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluators::RewardFn;
use crate::trajectory::{EnvTag, Trajectory};

pub trait ToyEnv: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn env_tag(&self) -> EnvTag {
        EnvTag::MetaworldLike
    }
    /// Episode length used by the generators.
    fn horizon(&self) -> usize;
    /// Norm above which a state counts as diverged.
    fn state_bound(&self) -> f64;
    fn initial_state(&self, effector: [f64; 2]) -> Vec<f64>;
    /// Effector position the environment resets to.
    fn home(&self) -> [f64; 2];
    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64>;
    fn reward(&self, state: &[f64], action: &[f64]) -> f64;
    /// Planar position the action moves.
    fn effector(&self, state: &[f64]) -> [f64; 2];
    /// Points a competent policy visits, in order.
    fn task_points(&self) -> Vec<[f64; 2]>;
    /// Nominal per-step speed of scripted policies.
    fn nominal_speed(&self) -> f64;
}

/// Planar point reaching: `p' = p + a`. Reward is the negative distance to
/// the goal plus a bonus while in contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReachEnv {
    pub goal: [f64; 2],
    pub contact_radius: f64,
    pub contact_bonus: f64,
    pub horizon: usize,
    pub bound: f64,
    pub home: [f64; 2],
}

impl Default for ReachEnv {
    fn default() -> Self {
        Self {
            goal: [0.8, 0.7],
            contact_radius: 0.05,
            contact_bonus: 1.0,
            horizon: 50,
            bound: 10.0,
            home: [0.1, 0.1],
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl ToyEnv for ReachEnv {
    fn name(&self) -> &'static str {
        "reach"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn state_bound(&self) -> f64 {
        self.bound
    }
    fn initial_state(&self, effector: [f64; 2]) -> Vec<f64> {
        effector.to_vec()
    }
    fn home(&self) -> [f64; 2] {
        self.home
    }
    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        vec![state[0] + action[0], state[1] + action[1]]
    }
    fn reward(&self, state: &[f64], _action: &[f64]) -> f64 {
        let d = dist([state[0], state[1]], self.goal);
        let bonus = if d < self.contact_radius { self.contact_bonus } else { 0.0 };
        bonus - d
    }
    fn effector(&self, state: &[f64]) -> [f64; 2] {
        [state[0], state[1]]
    }
    fn task_points(&self) -> Vec<[f64; 2]> {
        vec![self.goal]
    }
    fn nominal_speed(&self) -> f64 {
        0.035
    }
}

/// Planar pick-and-place. State `[gx, gy, ox, oy, held]`; the object snaps
/// to the gripper once the gripper comes within `grasp_radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PickEnv {
    pub object: [f64; 2],
    pub target: [f64; 2],
    pub grasp_radius: f64,
    pub place_radius: f64,
    pub horizon: usize,
    pub bound: f64,
    pub home: [f64; 2],
}

impl Default for PickEnv {
    fn default() -> Self {
        Self {
            object: [0.5, 0.2],
            target: [0.5, 0.8],
            grasp_radius: 0.04,
            place_radius: 0.05,
            horizon: 100,
            bound: 10.0,
            home: [0.1, 0.1],
        }
    }
}

impl ToyEnv for PickEnv {
    fn name(&self) -> &'static str {
        "pick"
    }
    fn state_dim(&self) -> usize {
        5
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn state_bound(&self) -> f64 {
        self.bound
    }
    fn initial_state(&self, effector: [f64; 2]) -> Vec<f64> {
        vec![effector[0], effector[1], self.object[0], self.object[1], 0.0]
    }
    fn home(&self) -> [f64; 2] {
        self.home
    }
    fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let g = [s[0] + a[0], s[1] + a[1]];
        let held = s[4] > 0.5 || dist(g, [s[2], s[3]]) < self.grasp_radius;
        if held {
            vec![g[0], g[1], g[0], g[1], 1.0]
        } else {
            vec![g[0], g[1], s[2], s[3], 0.0]
        }
    }
    fn reward(&self, s: &[f64], _a: &[f64]) -> f64 {
        let (g, o) = ([s[0], s[1]], [s[2], s[3]]);
        let to_target = dist(o, self.target);
        let placed = if to_target < self.place_radius { 1.0 } else { 0.0 };
        if s[4] > 0.5 {
            0.5 - to_target + placed
        } else {
            -0.5 * dist(g, o) - to_target
        }
    }
    fn effector(&self, s: &[f64]) -> [f64; 2] {
        [s[0], s[1]]
    }
    fn task_points(&self) -> Vec<[f64; 2]> {
        vec![self.object, self.target]
    }
    fn nominal_speed(&self) -> f64 {
        0.015
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EnvSpec {
    Reach(#[serde(default)] ReachEnv),
    Pick(#[serde(default)] PickEnv),
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Reach(ReachEnv::default())
    }
}

impl EnvSpec {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "reach" => Ok(EnvSpec::Reach(ReachEnv::default())),
            "pick" => Ok(EnvSpec::Pick(PickEnv::default())),
            other => Err(Error::Config(format!("unknown environment {other:?} (expected reach or pick)"))),
        }
    }

    pub fn build(&self) -> Arc<dyn ToyEnv> {
        match self {
            EnvSpec::Reach(e) => Arc::new(e.clone()),
            EnvSpec::Pick(e) => Arc::new(e.clone()),
        }
    }
}

/// Ground-truth reward of an environment as a [`RewardFn`].
#[derive(Debug, Clone)]
pub struct EnvReward(pub Arc<dyn ToyEnv>);

impl RewardFn for EnvReward {
    fn reward(&self, state: ArrayView1<'_, f64>, action: ArrayView1<'_, f64>) -> Result<f64, String> {
        let (s, a) = (state.to_vec(), action.to_vec());
        if s.len() != self.0.state_dim() || a.len() != self.0.action_dim() {
            return Err(format!(
                "{} expects state/action dims {}/{}, got {}/{}",
                self.0.name(),
                self.0.state_dim(),
                self.0.action_dim(),
                s.len(),
                a.len()
            ));
        }
        Ok(self.0.reward(&s, &a))
    }
}

/// Rolls the dynamics forward from `initial` under `actions`; row `t` of
/// the result pairs state `s_t` with action `a_t`.
pub fn rollout(env: &dyn ToyEnv, id: &str, initial: &[f64], actions: Array2<f64>) -> Result<Trajectory> {
    let t_len = actions.nrows();
    if actions.ncols() != env.action_dim() {
        return Err(Error::DimensionMismatch {
            expected: env.action_dim(),
            actual: actions.ncols(),
        });
    }
    if initial.len() != env.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: env.state_dim(),
            actual: initial.len(),
        });
    }
    let mut states = Array2::zeros((t_len, env.state_dim()));
    let mut s = initial.to_vec();
    for t in 0..t_len {
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= env.state_bound()) {
            return Err(Error::Divergence {
                step: t + 1,
                norm,
                bound: env.state_bound(),
            });
        }
        states.row_mut(t).assign(&ArrayView1::from(&s));
        if t + 1 < t_len {
            s = env.step(&s, &actions.row(t).to_vec());
        }
    }
    Trajectory::new(id, env.env_tag(), states, actions, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reach_rollout_integrates_actions() {
        let env = ReachEnv::default();
        let actions = Array2::from_shape_vec((3, 2), vec![0.1, 0.0, 0.0, 0.2, 9.0, 9.0]).unwrap();
        let t = rollout(&env, "r", &[0.0, 0.0], actions).unwrap();
        assert_eq!(t.states().row(2).to_vec(), vec![0.1, 0.2]);
    }

    #[test]
    fn divergence_is_reported() {
        let env = ReachEnv { bound: 1.0, ..ReachEnv::default() };
        let actions = Array2::from_elem((4, 2), 0.6);
        match rollout(&env, "r", &[0.0, 0.0], actions) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pick_object_follows_gripper_after_grasp() {
        let env = PickEnv::default();
        let s = env.initial_state([0.5, 0.17]);
        let s = env.step(&s, &[0.0, 0.02]);
        assert_eq!(s[4], 1.0);
        let s = env.step(&s, &[0.1, 0.0]);
        assert!((s[2] - 0.6).abs() < 1e-12 && (s[3] - 0.19).abs() < 1e-12);
    }

    #[test]
    fn reach_contact_bonus() {
        let env = ReachEnv::default();
        assert!((env.reward(&[0.8, 0.7], &[0.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!((env.reward(&[0.8, 0.4], &[0.0, 0.0]) + 0.3).abs() < 1e-12);
    }
}
