//! Crowd-checked aggregation of one modality's judgments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discriminability::DiscriminabilityScores;
use crate::error::{Error, Result};
use crate::evaluators::{derive_seed, Evaluator, Judgment, Modality, Query};
use crate::trajectory::{PreferenceLabel, TrajectoryPair};

pub const DEFAULT_CROWD_SIZE: usize = 5;
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Final label and calibrated confidence of one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalResult {
    pub label: PreferenceLabel,
    pub confidence: f64,
    pub modality: Modality,
    /// Canonicalized judgments that survived the crowd check.
    pub raw: Vec<Judgment>,
}

impl ModalResult {
    /// Aggregates already-canonicalized judgments.
    pub fn from_judgments(modality: Modality, raw: Vec<Judgment>, alpha: f64) -> Result<Self> {
        let label = majority_vote(&raw)?;
        let confidence = calibrated_confidence(&raw, label, alpha)?;
        Ok(Self {
            label,
            confidence,
            modality,
            raw,
        })
    }
}

/// Which of the `k` queries show the pair in swapped order.
pub fn swap_pattern(k: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| rng.random_bool(0.5)).collect()
}

/// Issues `k` queries with randomly permuted order and maps every answer
/// back to the original `(a, b)` order.
///
/// Failed draws are dropped; the call fails only if all of them fail.
pub fn crowd_check(
    evaluator: &dyn Evaluator,
    pair: &TrajectoryPair,
    context: Option<DiscriminabilityScores>,
    k: usize,
    seed: u64,
) -> Result<Vec<Judgment>> {
    if k == 0 {
        return Err(Error::InvalidArgument("crowd size must be at least 1".into()));
    }
    let swaps = swap_pattern(k, seed);
    let outcomes: Vec<Result<Judgment>> = swaps
        .par_iter()
        .enumerate()
        .map(|(i, &swap)| {
            let (first, second) = if swap { (&pair.b, &pair.a) } else { (&pair.a, &pair.b) };
            let query = Query {
                first,
                second,
                context,
                draw: derive_seed(seed, i as u64),
            };
            let j = evaluator.judge(&query)?;
            Ok(if swap { j.swapped() } else { j })
        })
        .collect();

    let mut kept = Vec::with_capacity(k);
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(j) => kept.push(j),
            Err(e) => log::warn!(
                "{} query {} for ({}, {}) failed: {e}",
                evaluator.modality(),
                i + 1,
                pair.a.id(),
                pair.b.id()
            ),
        }
    }
    if kept.is_empty() {
        return Err(Error::AllQueriesFailed(k));
    }
    Ok(kept)
}

/// Most frequent label; ties go to the higher mean confidence, then to
/// indecision.
pub fn majority_vote(judgments: &[Judgment]) -> Result<PreferenceLabel> {
    if judgments.is_empty() {
        return Err(Error::InvalidArgument("cannot vote over zero judgments".into()));
    }
    let mut count = [0usize; 3];
    let mut conf = [0.0f64; 3];
    for j in judgments {
        count[j.label.index()] += 1;
        conf[j.label.index()] += j.confidence;
    }
    let top = *count.iter().max().unwrap();
    let tied: Vec<usize> = (0..3).filter(|&i| count[i] == top).collect();
    if tied.len() == 1 {
        return Ok(PreferenceLabel::ALL[tied[0]]);
    }
    let mean = |i: usize| conf[i] / count[i] as f64;
    let best = tied.iter().map(|&i| mean(i)).fold(f64::NEG_INFINITY, f64::max);
    let leaders: Vec<usize> = tied.into_iter().filter(|&i| mean(i) == best).collect();
    Ok(if leaders.len() == 1 {
        PreferenceLabel::ALL[leaders[0]]
    } else {
        PreferenceLabel::Indecision
    })
}

/// `α · mean confidence of agreeing judgments + (1 − α) · agreement ratio`,
/// or 0 when no judgment agrees with `label`.
pub fn calibrated_confidence(judgments: &[Judgment], label: PreferenceLabel, alpha: f64) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::InvalidArgument("cannot calibrate zero judgments".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} is outside [0, 1]")));
    }
    let agreeing: Vec<f64> = judgments
        .iter()
        .filter(|j| j.label == label)
        .map(|j| j.confidence)
        .collect();
    if agreeing.is_empty() {
        return Ok(0.0);
    }
    let n = agreeing.len() as f64;
    // Offsetting from the first value keeps the mean of identical values exact.
    let mean_conf = agreeing[0] + agreeing.iter().map(|c| c - agreeing[0]).sum::<f64>() / n;
    let ratio = n / judgments.len() as f64;
    Ok((alpha * mean_conf + (1.0 - alpha) * ratio).clamp(0.0, 1.0))
}

pub fn fuse_intra(
    evaluator: &dyn Evaluator,
    pair: &TrajectoryPair,
    context: Option<DiscriminabilityScores>,
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<ModalResult> {
    let raw = crowd_check(evaluator, pair, context, k, seed)?;
    ModalResult::from_judgments(evaluator.modality(), raw, alpha)
}
