//! Keyframe extraction: near-zero velocity, smoothing-residual peaks and
//! PELT change points over the combined state-action signal, plus endpoints.
//!
//! All index sets are 1-based.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{EnvTag, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeConfig {
    /// Velocity threshold for pause detection.
    pub delta_v: f64,
    /// Moving-average half window `k`; the window spans `2k + 1` steps.
    pub half_window: usize,
    /// Maximum number of residual keyframes `K`.
    pub top_k: usize,
    /// Residual threshold.
    pub delta_e: f64,
    /// PELT penalty per change point.
    pub beta: f64,
}

impl KeyframeConfig {
    pub const METAWORLD: KeyframeConfig = KeyframeConfig {
        delta_v: 0.005,
        half_window: 2,
        top_k: 5,
        delta_e: 0.01,
        beta: 20.0,
    };
    pub const MANISKILL: KeyframeConfig = KeyframeConfig {
        delta_v: 0.025,
        half_window: 4,
        top_k: 8,
        delta_e: 0.02,
        beta: 30.0,
    };
    pub const DMC: KeyframeConfig = KeyframeConfig {
        delta_v: 0.065,
        half_window: 6,
        top_k: 10,
        delta_e: 0.04,
        beta: 40.0,
    };

    /// Defaults per environment family. `Custom` falls back to the
    /// MetaWorld-like values.
    pub fn for_env(tag: EnvTag) -> Self {
        match tag {
            EnvTag::MetaworldLike | EnvTag::Custom => Self::METAWORLD,
            EnvTag::ManiskillLike => Self::MANISKILL,
            EnvTag::DmcLike => Self::DMC,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("delta_v", self.delta_v),
            ("delta_e", self.delta_e),
            ("beta", self.beta),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "keyframe {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.half_window == 0 || self.top_k == 0 {
            return Err(Error::InvalidArgument(
                "keyframe half_window and top_k must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self::METAWORLD
    }
}

/// Sorted, duplicate-free keyframe indices that always include `1` and `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeSet {
    indices: Vec<usize>,
    len: usize,
}

impl KeyframeSet {
    /// Builds a set for a trajectory of length `len`, adding both endpoints.
    pub fn new(indices: impl IntoIterator<Item = usize>, len: usize) -> Result<Self> {
        let mut set: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&i| i == 0 || i > len) {
            return Err(Error::IndexOutOfRange { index: bad, len });
        }
        set.insert(1);
        set.insert(len);
        Ok(Self {
            indices: set.into_iter().collect(),
            len,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Length of the trajectory the set was extracted from.
    pub fn trajectory_len(&self) -> usize {
        self.len
    }

    pub fn contains(&self, t: usize) -> bool {
        self.indices.binary_search(&t).is_ok()
    }
}

/// Steps `t + 1` whose incoming velocity `||x_{t+1} - x_t||` is below `delta_v`.
pub fn near_zero_velocity(traj: &Trajectory, delta_v: f64) -> BTreeSet<usize> {
    near_zero_velocity_signal(traj.combined().view(), delta_v)
}

pub fn near_zero_velocity_signal(x: ArrayView2<'_, f64>, delta_v: f64) -> BTreeSet<usize> {
    (0..x.nrows().saturating_sub(1))
        .filter(|&i| {
            let v = x
                .row(i + 1)
                .iter()
                .zip(x.row(i))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            v < delta_v
        })
        // row i+1 is step i+2
        .map(|i| i + 2)
        .collect()
}

/// Per-step residual `||x_t - x̃_t||` against a truncated moving average.
pub fn smoothing_residuals(x: ArrayView2<'_, f64>, half_window: usize) -> Vec<f64> {
    let t_len = x.nrows();
    (0..t_len)
        .map(|i| {
            let lo = i.saturating_sub(half_window);
            let hi = (i + half_window).min(t_len - 1);
            let window = x.slice(ndarray::s![lo..=hi, ..]);
            let mean = window.mean_axis(Axis(0)).expect("window is nonempty");
            x.row(i)
                .iter()
                .zip(mean.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Indices of the up-to-`top_k` largest residuals exceeding `delta_e`.
pub fn smoothing_residual_peaks(
    traj: &Trajectory,
    half_window: usize,
    top_k: usize,
    delta_e: f64,
) -> Result<BTreeSet<usize>> {
    smoothing_residual_peaks_signal(traj.combined().view(), half_window, top_k, delta_e)
}

pub fn smoothing_residual_peaks_signal(
    x: ArrayView2<'_, f64>,
    half_window: usize,
    top_k: usize,
    delta_e: f64,
) -> Result<BTreeSet<usize>> {
    if half_window == 0 {
        return Err(Error::InvalidArgument("half_window must be >= 1".into()));
    }
    if x.nrows() < 2 * half_window + 1 {
        return Err(Error::InvalidArgument(format!(
            "length {} is shorter than the smoothing window {}",
            x.nrows(),
            2 * half_window + 1
        )));
    }
    let residuals = smoothing_residuals(x, half_window);
    let mut above: Vec<(usize, f64)> = residuals
        .into_iter()
        .enumerate()
        .filter(|&(_, e)| e > delta_e)
        .collect();
    // largest first; earlier index wins ties
    above.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(above.into_iter().take(top_k).map(|(i, _)| i + 1).collect())
}

/// Prefix sums for O(D) within-segment squared-error cost queries.
struct SegmentCost {
    sum: Array2<f64>,
    sum_sq: Array2<f64>,
}

impl SegmentCost {
    fn new(x: ArrayView2<'_, f64>) -> Self {
        let (n, d) = x.dim();
        let mut sum = Array2::zeros((n + 1, d));
        let mut sum_sq = Array2::zeros((n + 1, d));
        for i in 0..n {
            for j in 0..d {
                let v = x[[i, j]];
                sum[[i + 1, j]] = sum[[i, j]] + v;
                sum_sq[[i + 1, j]] = sum_sq[[i, j]] + v * v;
            }
        }
        Self { sum, sum_sq }
    }

    /// Cost of rows `start..end` (0-based, half-open).
    fn cost(&self, start: usize, end: usize) -> f64 {
        let n = (end - start) as f64;
        let mut c = 0.0;
        for j in 0..self.sum.ncols() {
            let s = self.sum[[end, j]] - self.sum[[start, j]];
            let sq = self.sum_sq[[end, j]] - self.sum_sq[[start, j]];
            c += sq - s * s / n;
        }
        c.max(0.0)
    }
}

/// Exact penalized segmentation by Pruned Exact Linear Time.
///
/// Minimizes the sum of within-segment squared deviations plus `beta` per
/// change point. A change point is reported as the first step of the new
/// segment.
pub fn change_points_pelt(traj: &Trajectory, beta: f64) -> BTreeSet<usize> {
    change_points_pelt_signal(traj.combined().view(), beta)
}

pub fn change_points_pelt_signal(x: ArrayView2<'_, f64>, beta: f64) -> BTreeSet<usize> {
    let n = x.nrows();
    if n < 2 {
        return BTreeSet::new();
    }
    let cost = SegmentCost::new(x);
    let mut best = vec![0.0; n + 1];
    let mut last = vec![0usize; n + 1];
    best[0] = -beta;
    let mut candidates = vec![0usize];
    for t in 1..=n {
        let mut f_t = f64::INFINITY;
        let mut arg = 0;
        for &s in &candidates {
            let v = best[s] + cost.cost(s, t) + beta;
            if v < f_t {
                f_t = v;
                arg = s;
            }
        }
        best[t] = f_t;
        last[t] = arg;
        let slack = 1e-9 * (1.0 + f_t.abs());
        candidates.retain(|&s| best[s] + cost.cost(s, t) <= f_t + slack);
        candidates.push(t);
    }
    let mut out = BTreeSet::new();
    let mut t = n;
    while t > 0 {
        let s = last[t];
        if s > 0 {
            out.insert(s + 1);
        }
        t = s;
    }
    out
}

/// Union of the three detectors plus `{1, T}`.
pub fn extract_keyframes(traj: &Trajectory, cfg: &KeyframeConfig) -> Result<KeyframeSet> {
    cfg.validate()?;
    let x = traj.combined();
    let mut all = near_zero_velocity_signal(x.view(), cfg.delta_v);
    all.extend(smoothing_residual_peaks_signal(
        x.view(),
        cfg.half_window,
        cfg.top_k,
        cfg.delta_e,
    )?);
    all.extend(change_points_pelt_signal(x.view(), cfg.beta));
    KeyframeSet::new(all, traj.len())
}
