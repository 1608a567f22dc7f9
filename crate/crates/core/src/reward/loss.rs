//! Preference, causal auxiliary and combined losses, each with its gradient
//! with respect to the per-step rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::PreferenceLabel;

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bradley–Terry probability that the segment with reward sum `sum_a` is
/// preferred over the one with `sum_b`.
///
/// `preference_prob(a, b) + preference_prob(b, a) == 1` holds exactly.
pub fn preference_prob(sum_a: f64, sum_b: f64) -> Result<f64> {
    if !(sum_a.is_finite() && sum_b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "reward sums must be finite, got {sum_a} and {sum_b}"
        )));
    }
    let d = sum_a - sum_b;
    // 1 − x is exact for x in [0.5, 1], which makes the two orders sum to 1
    Ok(if d >= 0.0 { sigmoid(d) } else { 1.0 - sigmoid(-d) })
}

/// How records labelled indecision enter the preference loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndecisionMode {
    #[default]
    Skip,
    /// Cross-entropy against the target probability 0.5.
    Soft,
}

/// Negative log-likelihood of one labelled pair and its derivative with
/// respect to `sum_a` (the derivative for `sum_b` is its negation).
/// `None` when the record is skipped.
pub fn pair_nll(sum_a: f64, sum_b: f64, label: PreferenceLabel, mode: IndecisionMode) -> Option<(f64, f64)> {
    let d = sum_a - sum_b;
    match label {
        PreferenceLabel::APreferred => Some((softplus(-d), -sigmoid(-d))),
        PreferenceLabel::BPreferred => Some((softplus(d), sigmoid(d))),
        PreferenceLabel::Indecision => match mode {
            IndecisionMode::Skip => None,
            IndecisionMode::Soft => Some((
                0.5 * (softplus(-d) + softplus(d)),
                0.5 * (sigmoid(d) - sigmoid(-d)),
            )),
        },
    }
}

/// Mean pair NLL over `(sum_a, sum_b, label)` triples, skipping indecision
/// in [`IndecisionMode::Skip`].
pub fn preference_loss(records: &[(f64, f64, PreferenceLabel)], mode: IndecisionMode) -> Result<f64> {
    let terms: Vec<f64> = records
        .iter()
        .filter_map(|&(a, b, l)| pair_nll(a, b, l, mode).map(|(v, _)| v))
        .collect();
    if terms.is_empty() {
        return Err(Error::AllIndecision);
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Contrast on masked steps plus consistency elsewhere:
/// `Σ H·softplus(r_cf − r*) + Σ (1 − H)·(r* − r_cf)²`.
///
/// Returns the value and its gradients for `r*` and `r_cf`.
pub fn causal_aux_loss(r_star: &[f64], r_cf: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if r_star.len() != r_cf.len() || r_star.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            expected: r_star.len(),
            actual: if r_cf.len() != r_star.len() { r_cf.len() } else { mask.len() },
        });
    }
    let mut value = 0.0;
    let mut g_star = vec![0.0; r_star.len()];
    let mut g_cf = vec![0.0; r_star.len()];
    for t in 0..r_star.len() {
        let diff = r_cf[t] - r_star[t];
        if mask[t] {
            value += softplus(diff);
            let s = sigmoid(diff);
            g_cf[t] = s;
            g_star[t] = -s;
        } else {
            value += diff * diff;
            g_cf[t] = 2.0 * diff;
            g_star[t] = -2.0 * diff;
        }
    }
    Ok((value, g_star, g_cf))
}

pub fn total_loss(pref: f64, aux: f64, lambda_cf: f64) -> f64 {
    pref + lambda_cf * aux
}

/// Weight of the auxiliary loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum LambdaMode {
    Fixed { value: f64 },
    /// EMA of `pref / max(aux, ε)`, clamped to `[min, max]`.
    AutoRatio {
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_min")]
        min: f64,
        #[serde(default = "default_max")]
        max: f64,
    },
}

fn default_decay() -> f64 {
    0.9
}
fn default_min() -> f64 {
    0.01
}
fn default_max() -> f64 {
    100.0
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::AutoRatio {
            decay: default_decay(),
            min: default_min(),
            max: default_max(),
        }
    }
}

pub const LAMBDA_EPS: f64 = 1e-8;

/// Running value of λ; treated as a constant by the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaState {
    mode: LambdaMode,
    ema: Option<f64>,
}

impl LambdaState {
    pub fn new(mode: LambdaMode) -> Self {
        Self { mode, ema: None }
    }

    /// Current λ (before any observation in auto mode: 1).
    pub fn value(&self) -> f64 {
        match self.mode {
            LambdaMode::Fixed { value } => value,
            LambdaMode::AutoRatio { min, max, .. } => self.ema.unwrap_or(1.0).clamp(min, max),
        }
    }

    /// Folds in one batch's loss values and returns the λ to use for it.
    pub fn update(&mut self, pref: f64, aux: f64) -> f64 {
        if let LambdaMode::AutoRatio { decay, .. } = self.mode {
            let ratio = pref / aux.max(LAMBDA_EPS);
            self.ema = Some(match self.ema {
                None => ratio,
                Some(prev) => decay * prev + (1.0 - decay) * ratio,
            });
        }
        self.value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PreferenceLabel::*;

    #[test]
    fn preference_prob_fixtures() {
        assert_eq!(preference_prob(2.0, 2.0).unwrap(), 0.5);
        assert!((preference_prob(3f64.ln(), 0.0).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(preference_prob(1000.0, 0.0).unwrap(), 1.0);
        assert!(preference_prob(f64::NAN, 0.0).is_err());
        for d in [-40.0, -3.3, -1e-9, 0.7, 12.0] {
            assert_eq!(preference_prob(d, 0.0).unwrap() + preference_prob(0.0, d).unwrap(), 1.0);
        }
    }

    #[test]
    fn nll_fixtures() {
        let l = |a, b, y| preference_loss(&[(a, b, y)], IndecisionMode::Skip).unwrap();
        assert!((l(1.0, 1.0, APreferred) - 2f64.ln()).abs() < 1e-12);
        assert!((l(3f64.ln(), 0.0, APreferred) + 0.75f64.ln()).abs() < 1e-12);
        assert!((l(0.0, 3f64.ln(), APreferred) + 0.25f64.ln()).abs() < 1e-12);
        assert!((l(0.0, 3f64.ln(), BPreferred) + 0.75f64.ln()).abs() < 1e-12);
        assert!(matches!(
            preference_loss(&[(0.0, 1.0, Indecision)], IndecisionMode::Skip),
            Err(Error::AllIndecision)
        ));
        assert!((preference_loss(&[(0.0, 0.0, Indecision)], IndecisionMode::Soft).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn aux_fixtures() {
        let (v, _, _) = causal_aux_loss(&[0.3, 0.1], &[0.3, 0.1], &[false, false]).unwrap();
        assert_eq!(v, 0.0);
        let (v, _, _) = causal_aux_loss(&[1.0, 0.5], &[0.0, 0.5], &[true, false]).unwrap();
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        let (v, _, _) = causal_aux_loss(&[0.2, 0.5], &[0.0, 0.5], &[false, false]).unwrap();
        assert!((v - 0.04).abs() < 1e-12);
        assert!(causal_aux_loss(&[0.0], &[0.0, 1.0], &[true]).is_err());
    }

    #[test]
    fn lambda_modes() {
        assert_eq!(total_loss(0.5, 0.3, 1.0), 0.8);
        assert_eq!(total_loss(0.5, 0.0, 7.0), 0.5);
        let mut s = LambdaState::new(LambdaMode::default());
        for _ in 0..200 {
            s.update(0.6, 0.3);
        }
        assert!((s.value() - 2.0).abs() < 1e-12);
        assert!((total_loss(0.6, 0.3, s.value()) - 1.2).abs() < 1e-12);
        let mut s = LambdaState::new(LambdaMode::default());
        assert_eq!(s.update(1.0, 0.0), 100.0);
        let mut f = LambdaState::new(LambdaMode::Fixed { value: 0.0 });
        assert_eq!(f.update(1.0, 0.5), 0.0);
    }
}
