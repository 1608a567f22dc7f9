//! Trajectory-context atoms: visual discriminability (optimal transport
//! between keyframe embeddings) and temporal discriminability (volatility gap).

pub mod embedding;
pub mod transport;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use embedding::{
    EmbedInput, EmbeddingProvider, HttpEmbeddingClient, PixelEmbedder, Serialized, StateEmbedder,
};
pub use transport::wasserstein;

use crate::error::{Error, Result};
use crate::keyframes::KeyframeSet;
use crate::trajectory::Trajectory;

/// Context atoms for one trajectory pair, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiscriminabilityScores {
    pub vd: f64,
    pub td: f64,
}

impl DiscriminabilityScores {
    pub fn new(vd: f64, td: f64) -> Result<Self> {
        for (name, v) in [("vd", vd), ("td", td)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(Self { vd, td })
    }
}

/// Rescaled logistic `2σ(x/τ) − 1`: maps `[0, ∞)` onto `[0, 1)` with `ρ(0) = 0`.
pub fn rho(x: f64, tau: f64) -> f64 {
    // 2σ(z) − 1 == tanh(z / 2), better conditioned near zero
    (x / (2.0 * tau)).tanh()
}

/// Median of a calibration sample, or `1.0` when the sample is empty or
/// its median is not positive.
pub fn calibrate_tau(samples: &[f64]) -> f64 {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    let median = if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Mean L2 norm of second-order finite differences of the combined
/// state-action sequence.
pub fn trj_vol(traj: &Trajectory) -> Result<f64> {
    let t = traj.len();
    if t < 3 {
        return Err(Error::InvalidArgument(format!(
            "volatility needs at least 3 steps, got {t}"
        )));
    }
    let x = traj.combined();
    let total: f64 = (1..t - 1)
        .map(|i| {
            let (prev, cur, next) = (x.row(i - 1), x.row(i), x.row(i + 1));
            cur.iter()
                .zip(prev)
                .zip(next)
                .map(|((c, p), n)| (n - 2.0 * c + p).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / (t - 2) as f64)
}

/// Raw volatility gap `|TrjVol(a) − TrjVol(b)|`.
pub fn volatility_gap(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    Ok((trj_vol(a)? - trj_vol(b)?).abs())
}

pub fn td_high(a: &Trajectory, b: &Trajectory, tau_t: f64) -> Result<f64> {
    Ok(rho(volatility_gap(a, b)?, tau_t))
}

/// Embeds every keyframe of `traj`: its frame image when frames exist,
/// otherwise its state row.
pub fn embed_keyframes(
    traj: &Trajectory,
    keyframes: &KeyframeSet,
    embed: &dyn EmbeddingProvider,
) -> Result<Vec<Vec<f64>>> {
    if keyframes.trajectory_len() != traj.len() {
        return Err(Error::InvalidArgument(format!(
            "keyframe set built for length {} used on trajectory of length {}",
            keyframes.trajectory_len(),
            traj.len()
        )));
    }
    keyframes
        .indices()
        .iter()
        .map(|&t| {
            let result = match traj.frames() {
                Some(frames) => embed.embed(EmbedInput::Image(Path::new(&frames[t - 1]))),
                None => {
                    let row = traj.state(t)?.to_vec();
                    embed.embed(EmbedInput::StateRow(&row))
                }
            };
            result.map_err(|message| Error::Embedding { index: t, message })
        })
        .collect()
}

/// Raw Wasserstein distance between the two keyframe embedding sets.
pub fn keyframe_distance(
    a: &Trajectory,
    b: &Trajectory,
    k_a: &KeyframeSet,
    k_b: &KeyframeSet,
    embed: &dyn EmbeddingProvider,
) -> Result<f64> {
    let ea = embed_keyframes(a, k_a, embed)?;
    let eb = embed_keyframes(b, k_b, embed)?;
    wasserstein(&ea, &eb)
}

pub fn vd_high(
    a: &Trajectory,
    b: &Trajectory,
    k_a: &KeyframeSet,
    k_b: &KeyframeSet,
    embed: &dyn EmbeddingProvider,
    tau_v: f64,
) -> Result<f64> {
    Ok(rho(keyframe_distance(a, b, k_a, k_b, embed)?, tau_v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::EnvTag;
    use ndarray::Array2;

    fn traj_1d(values: &[f64]) -> Trajectory {
        Trajectory::new(
            "v",
            EnvTag::Custom,
            Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap(),
            Array2::zeros((values.len(), 0)),
            None,
        )
        .unwrap()
    }

    #[test]
    fn volatility_fixtures() {
        assert_eq!(trj_vol(&traj_1d(&[3.0; 5])).unwrap(), 0.0);
        let ramp: Vec<f64> = (1..=6).map(|t| 0.7 * t as f64).collect();
        assert!(trj_vol(&traj_1d(&ramp)).unwrap().abs() < 1e-12);
        let quad = traj_1d(&[1.0, 4.0, 9.0, 16.0]);
        assert!((trj_vol(&quad).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn td_high_fixtures() {
        let flat = traj_1d(&[0.0; 4]);
        let quad = traj_1d(&[1.0, 4.0, 9.0, 16.0]);
        assert_eq!(td_high(&quad, &quad, 1.0).unwrap(), 0.0);
        let expected = 2.0 / (1.0 + (-2.0f64).exp()) - 1.0;
        assert!((td_high(&flat, &quad, 1.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.7616).abs() < 1e-4);
        assert_eq!(
            td_high(&flat, &quad, 1.0).unwrap(),
            td_high(&quad, &flat, 1.0).unwrap()
        );
    }

    #[test]
    fn rho_closed_form() {
        assert_eq!(rho(0.0, 1.0), 0.0);
        assert!((rho(3f64.ln(), 1.0) - 0.5).abs() < 1e-12);
        assert!(rho(1e6, 1.0) <= 1.0);
    }

    #[test]
    fn calibration_median() {
        assert_eq!(calibrate_tau(&[]), 1.0);
        assert_eq!(calibrate_tau(&[0.0, 0.0]), 1.0);
        assert_eq!(calibrate_tau(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(calibrate_tau(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn vd_is_zero_for_identical_inputs_and_reports_embedding_failures() {
        let t = traj_1d(&[0.0, 1.0, 3.0, 2.0, 5.0]);
        let k = KeyframeSet::new([3], 5).unwrap();
        let e = StateEmbedder { dim: 1 };
        assert!(vd_high(&t, &t, &k, &k, &e, 1.0).unwrap().abs() < 1e-12);

        let wrong = StateEmbedder { dim: 2 };
        match vd_high(&t, &t, &k, &k, &wrong, 1.0) {
            Err(Error::Embedding { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
