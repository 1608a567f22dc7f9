//! Ensemble reward model trained on preferences and counterfactual pairs.

pub mod loss;
pub mod net;

use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluators::{derive_seed, label_from_returns};
use crate::synthesis::CounterfactualSample;
use crate::trajectory::{PreferenceLabel, Trajectory, TrajectoryPair};

pub use loss::{
    causal_aux_loss, pair_nll, preference_loss, preference_prob, total_loss, IndecisionMode, LambdaMode,
    LambdaState,
};
pub use net::{Adam, Dense, Grads, RewardNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordSource {
    Fused,
    Scripted,
    Counterfactual,
}

/// A labelled pair. Counterfactual records put the preferred original in
/// `a`, the edit in `b`, and carry the edit mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub pair: TrajectoryPair,
    pub label: PreferenceLabel,
    pub source: RecordSource,
    pub mask: Option<Vec<bool>>,
}

impl PreferenceRecord {
    pub fn new(pair: TrajectoryPair, label: PreferenceLabel, source: RecordSource) -> Self {
        Self {
            pair,
            label,
            source,
            mask: None,
        }
    }

    pub fn counterfactual(sample: &CounterfactualSample) -> Result<Self> {
        Ok(Self {
            pair: TrajectoryPair::new(sample.original.clone(), sample.edited.clone())?,
            label: PreferenceLabel::APreferred,
            source: RecordSource::Counterfactual,
            mask: Some(sample.mask.clone()),
        })
    }

    fn validate(&self) -> Result<()> {
        match (&self.mask, self.source) {
            (None, RecordSource::Counterfactual) => Err(Error::InvalidArgument(format!(
                "counterfactual record {} lacks a mask",
                self.pair.b.id()
            ))),
            (Some(m), _) if m.len() != self.pair.a.len() => Err(Error::DimensionMismatch {
                expected: self.pair.a.len(),
                actual: m.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// What the reward network sees at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardInput {
    #[default]
    StateAction,
    State,
}

impl RewardInput {
    pub fn features(self, traj: &Trajectory) -> Array2<f64> {
        match self {
            RewardInput::StateAction => traj.combined(),
            RewardInput::State => traj.states().to_owned(),
        }
    }

    pub fn dim(self, traj: &Trajectory) -> usize {
        match self {
            RewardInput::StateAction => traj.combined_dim(),
            RewardInput::State => traj.state_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs per feedback round.
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub ensemble_size: usize,
    pub lambda_cf: LambdaMode,
    pub indecision: IndecisionMode,
    pub reward_input: RewardInput,
    /// Environment steps between feedback rounds.
    pub feedback_frequency: usize,
    /// Cap on labelled queries over a run.
    pub max_feedback: usize,
    pub queries_per_round: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 64,
            epochs: 20,
            hidden: vec![256, 256, 256],
            ensemble_size: 3,
            lambda_cf: LambdaMode::default(),
            indecision: IndecisionMode::Skip,
            reward_input: RewardInput::StateAction,
            feedback_frequency: 5000,
            max_feedback: 20000,
            queries_per_round: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train.{what} must be positive")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate");
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("feedback_frequency", self.feedback_frequency),
            ("max_feedback", self.max_feedback),
            ("queries_per_round", self.queries_per_round),
        ] {
            if v == 0 {
                return bad(name);
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes");
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config("train.ensemble_size must be at least 2".into()));
        }
        match self.lambda_cf {
            LambdaMode::Fixed { value } if !(value >= 0.0 && value.is_finite()) => {
                Err(Error::Config("train.lambda_cf fixed value must be finite and non-negative".into()))
            }
            LambdaMode::AutoRatio { decay, min, max } if !((0.0..1.0).contains(&decay) && 0.0 < min && min <= max) => {
                Err(Error::Config("train.lambda_cf auto-ratio needs 0 ≤ decay < 1 and 0 < min ≤ max".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Independently initialised reward networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEnsemble {
    pub members: Vec<RewardNet>,
    pub reward_input: RewardInput,
    pub seed: u64,
}

const CHECKPOINT_FORMAT: &str = "preffuse-reward-ensemble/1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    activation: String,
    input_dim: usize,
    hidden: Vec<usize>,
    #[serde(flatten)]
    ensemble: RewardEnsemble,
}

impl RewardEnsemble {
    pub fn new(input_dim: usize, hidden: &[usize], size: usize, reward_input: RewardInput, seed: u64) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!("ensemble needs at least 2 members, got {size}")));
        }
        let members = (0..size)
            .map(|m| RewardNet::new(input_dim, hidden, derive_seed(seed, m as u64)))
            .collect::<Result<_>>()?;
        Ok(Self {
            members,
            reward_input,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim
    }

    /// Per-step rewards of one trajectory under each member.
    pub fn member_rewards(&self, traj: &Trajectory) -> Result<Vec<Array1<f64>>> {
        let x = self.reward_input.features(traj);
        self.members.iter().map(|m| m.forward(x.view())).collect()
    }

    /// Per-step ensemble-mean reward.
    pub fn reward(&self, traj: &Trajectory) -> Result<Array1<f64>> {
        let per = self.member_rewards(traj)?;
        let mut mean = Array1::zeros(traj.len());
        for r in &per {
            mean += r;
        }
        Ok(mean / per.len() as f64)
    }

    /// `P[a ≻ b]` under each member.
    pub fn preference_probs(&self, pair: &TrajectoryPair) -> Result<Vec<f64>> {
        let ra = self.member_rewards(&pair.a)?;
        let rb = self.member_rewards(&pair.b)?;
        ra.iter().zip(&rb).map(|(a, b)| preference_prob(a.sum(), b.sum())).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            activation: "tanh".into(),
            input_dim: self.input_dim(),
            hidden: self.members[0].hidden.clone(),
            ensemble: self.clone(),
        };
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec(&ck)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {:?}", ck.format)));
        }
        let e = ck.ensemble;
        if e.members.len() < 2 || e.members.iter().any(|m| m.input_dim != ck.input_dim || m.hidden != ck.hidden) {
            return Err(Error::Config("checkpoint members disagree with the architecture header".into()));
        }
        Ok(e)
    }
}

/// Indices of the `n` pairs with the highest across-member variance of
/// `P[a ≻ b]`; ties keep input order.
pub fn uncertainty_select(candidates: &[TrajectoryPair], ensemble: &RewardEnsemble, n: usize) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate pairs to select from".into()));
    }
    if n > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {n} of {} candidates",
            candidates.len()
        )));
    }
    if ensemble.members.len() < 2 {
        return Err(Error::InvalidArgument("uncertainty needs at least 2 members".into()));
    }
    let scores = candidates
        .par_iter()
        .map(|p| ensemble.preference_probs(p).map(|ps| variance(&ps)))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    order.truncate(n);
    Ok(order)
}

fn variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub epoch: usize,
    pub pref_loss: f64,
    pub aux_loss: f64,
    pub lambda_cf: f64,
    pub label_accuracy: f64,
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Metrics {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Loss values of one batch; means over contributing records.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss {
    pub pref: f64,
    pub aux: f64,
    pub n_pref: usize,
    pub n_aux: usize,
}

/// Features of a record, ready for batching.
struct Prepared {
    a: Array2<f64>,
    b: Array2<f64>,
    label: PreferenceLabel,
    mask: Option<Vec<bool>>,
}

impl Prepared {
    fn new(r: &PreferenceRecord, input: RewardInput) -> Result<Self> {
        r.validate()?;
        Ok(Self {
            a: input.features(&r.pair.a),
            b: input.features(&r.pair.b),
            label: r.label,
            mask: r.mask.clone(),
        })
    }
}

/// Per-step loss gradients of a batch, split by term.
struct BatchForward {
    loss: BatchLoss,
    /// Clear-labelled records and how many the current sums order correctly.
    clear: usize,
    correct: usize,
    g_pref: Array1<f64>,
    g_aux: Array1<f64>,
    cache: net::ForwardCache,
}

fn forward_batch(net: &RewardNet, batch: &[&Prepared], mode: IndecisionMode) -> Result<BatchForward> {
    let mut views: Vec<ArrayView2<'_, f64>> = Vec::with_capacity(2 * batch.len());
    let mut offsets = Vec::with_capacity(batch.len());
    let mut rows = 0;
    for p in batch {
        offsets.push(rows);
        views.push(p.a.view());
        views.push(p.b.view());
        rows += p.a.nrows() + p.b.nrows();
    }
    let x = concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(format!("batch shapes: {e}")))?;
    let (r, cache) = net.forward_cached(x.view())?;
    let mut g_pref = Array1::zeros(rows);
    let mut g_aux = Array1::zeros(rows);
    let mut terms = Vec::with_capacity(batch.len());
    let mut loss = BatchLoss::default();
    let (mut clear, mut correct) = (0, 0);
    for (p, &off) in batch.iter().zip(&offsets) {
        let t = p.a.nrows();
        let (ra, rb) = (r.slice(s![off..off + t]), r.slice(s![off + t..off + 2 * t]));
        if p.label.is_clear() {
            clear += 1;
            correct += usize::from(label_from_returns(ra.sum(), rb.sum()) == p.label);
        }
        if let Some((v, d)) = pair_nll(ra.sum(), rb.sum(), p.label, mode) {
            loss.pref += v;
            loss.n_pref += 1;
            terms.push((off, t, d));
        }
        if let Some(mask) = &p.mask {
            let (v, gs, gc) = causal_aux_loss(&ra.to_vec(), &rb.to_vec(), mask)?;
            loss.aux += v;
            loss.n_aux += 1;
            for i in 0..t {
                g_aux[off + i] = gs[i];
                g_aux[off + t + i] = gc[i];
            }
        }
    }
    for (off, t, d) in terms {
        g_pref.slice_mut(s![off..off + t]).fill(d);
        g_pref.slice_mut(s![off + t..off + 2 * t]).fill(-d);
    }
    if loss.n_pref > 0 {
        loss.pref /= loss.n_pref as f64;
        g_pref /= loss.n_pref as f64;
    }
    if loss.n_aux > 0 {
        loss.aux /= loss.n_aux as f64;
        g_aux /= loss.n_aux as f64;
    }
    Ok(BatchForward {
        loss,
        clear,
        correct,
        g_pref,
        g_aux,
        cache,
    })
}

/// Value and parameter gradient of `w_pref·L_pref + w_aux·L_aux` on a batch.
pub fn batch_gradients(
    net: &RewardNet,
    batch: &[PreferenceRecord],
    input: RewardInput,
    mode: IndecisionMode,
    w_pref: f64,
    w_aux: f64,
) -> Result<(BatchLoss, Grads)> {
    let prepared = batch.iter().map(|r| Prepared::new(r, input)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Prepared> = prepared.iter().collect();
    let f = forward_batch(net, &refs, mode)?;
    let g = &f.g_pref * w_pref + &f.g_aux * w_aux;
    Ok((f.loss, net.backward(&f.cache, g.view())))
}

/// Output of [`train_reward`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub ensemble: RewardEnsemble,
    pub metrics: Vec<MetricsRow>,
}

/// Builds the records the trainer sees: the dataset plus one record per
/// counterfactual sample.
pub fn training_records(dataset: &[PreferenceRecord], cf_store: &[CounterfactualSample]) -> Result<Vec<PreferenceRecord>> {
    let mut all = dataset.to_vec();
    for s in cf_store {
        all.push(PreferenceRecord::counterfactual(s)?);
    }
    Ok(all)
}

/// Trains a fresh ensemble on preferences and counterfactual pairs.
pub fn train_reward(
    dataset: &[PreferenceRecord],
    cf_store: &[CounterfactualSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("preference dataset is empty".into()))?;
    let dim = cfg.reward_input.dim(&first.pair.a);
    let mut ensemble = RewardEnsemble::new(dim, &cfg.hidden, cfg.ensemble_size, cfg.reward_input, seed)?;
    let metrics = continue_training(&mut ensemble, dataset, cf_store, cfg, seed, 0)?;
    Ok(TrainOutput { ensemble, metrics })
}

/// Runs `cfg.epochs` more epochs on every member; rows are tagged `round`.
pub fn continue_training(
    ensemble: &mut RewardEnsemble,
    dataset: &[PreferenceRecord],
    cf_store: &[CounterfactualSample],
    cfg: &TrainConfig,
    seed: u64,
    round: usize,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("preference dataset is empty".into()));
    }
    let records = training_records(dataset, cf_store)?;
    let prepared = records
        .iter()
        .map(|r| Prepared::new(r, ensemble.reward_input))
        .collect::<Result<Vec<_>>>()?;
    if let Some(p) = prepared.iter().find(|p| p.a.ncols() != ensemble.input_dim()) {
        return Err(Error::DimensionMismatch {
            expected: ensemble.input_dim(),
            actual: p.a.ncols(),
        });
    }
    if cfg.indecision == IndecisionMode::Skip && prepared.iter().all(|p| !p.label.is_clear()) {
        return Err(Error::AllIndecision);
    }
    let round_seed = derive_seed(ensemble.seed ^ seed, round as u64);
    let logs = ensemble
        .members
        .par_iter_mut()
        .enumerate()
        .map(|(m, net)| train_member(net, &prepared, cfg, derive_seed(round_seed, m as u64), m))
        .collect::<Result<Vec<_>>>()?;
    let n = logs.len() as f64;
    Ok((0..cfg.epochs)
        .map(|e| MetricsRow {
            round,
            epoch: e + 1,
            pref_loss: logs.iter().map(|l| l[e].pref).sum::<f64>() / n,
            aux_loss: logs.iter().map(|l| l[e].aux).sum::<f64>() / n,
            lambda_cf: logs.iter().map(|l| l[e].lambda).sum::<f64>() / n,
            label_accuracy: logs.iter().map(|l| l[e].accuracy).sum::<f64>() / n,
        })
        .collect())
}

struct EpochLog {
    pref: f64,
    aux: f64,
    lambda: f64,
    accuracy: f64,
}

fn train_member(
    net: &mut RewardNet,
    data: &[Prepared],
    cfg: &TrainConfig,
    seed: u64,
    member: usize,
) -> Result<Vec<EpochLog>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(net, cfg.learning_rate);
    let mut lambda = LambdaState::new(cfg.lambda_cf);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut pref, mut aux, mut n_pref, mut n_aux) = (0.0, 0.0, 0usize, 0usize);
        let (mut hit, mut clear) = (0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &data[i]).collect();
            let f = forward_batch(net, &batch, cfg.indecision)?;
            let l = f.loss;
            hit += f.correct;
            clear += f.clear;
            if !(l.pref.is_finite() && l.aux.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    member,
                    epoch,
                    batch: b,
                });
            }
            if l.n_pref == 0 && l.n_aux == 0 {
                continue;
            }
            // batches without counterfactuals leave λ untouched
            let lam = if l.n_aux > 0 { lambda.update(l.pref, l.aux) } else { lambda.value() };
            let g = &f.g_pref + &(&f.g_aux * lam);
            let grads = net.backward(&f.cache, g.view());
            opt.step(net, &grads);
            pref += l.pref * l.n_pref as f64;
            aux += l.aux * l.n_aux as f64;
            n_pref += l.n_pref;
            n_aux += l.n_aux;
        }
        logs.push(EpochLog {
            pref: if n_pref > 0 { pref / n_pref as f64 } else { 0.0 },
            aux: if n_aux > 0 { aux / n_aux as f64 } else { 0.0 },
            lambda: lambda.value(),
            accuracy: if clear > 0 { hit as f64 / clear as f64 } else { 0.0 },
        });
    }
    Ok(logs)
}
