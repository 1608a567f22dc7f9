//! End-to-end offline runs: buffer → pair selection → fusion → hindsight
//! augmentation → reward training → alignment report.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{EvaluatorsConfig, PipelineConfig};
use crate::discriminability::{
    calibrate_tau, keyframe_distance, rho, volatility_gap, DiscriminabilityScores, EmbeddingProvider,
};
use crate::error::{Error, Result};
use crate::evaluators::{
    derive_seed, scripted_teacher, step_rewards, Evaluator, Modality, NoisyEvaluator, RemoteEvaluator, RewardFn,
    ScriptedTeacher,
};
use crate::intra_fusion::{fuse_intra, ModalResult};
use crate::keyframes::{extract_keyframes, KeyframeConfig, KeyframeSet};
use crate::psl::{fuse_inter, hard_label, FusedPreference, PslConfig};
use crate::report::{self, spearman, LabelDistribution, RoundRow};
use crate::reward::{
    continue_training, uncertainty_select, write_metrics_csv, MetricsRow, PreferenceRecord, RecordSource,
    RewardEnsemble,
};
use crate::synthesis::{
    augment, foresight_generate, random_rollouts, CounterfactualSample, EnvReward, Intervention,
    ScriptedCausalOracle, ScriptedForesight, Verifier,
};
use crate::trajectory::{load_dataset, save_dataset, PreferenceLabel, Trajectory, TrajectoryPair};

/// Everything needed to turn a pair into a fused label.
#[derive(Clone)]
pub struct Fuser {
    pub vlm: Arc<dyn Evaluator>,
    pub llm: Arc<dyn Evaluator>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub tau_v: f64,
    pub tau_t: f64,
    pub crowd_size: usize,
    pub alpha: f64,
    pub psl: PslConfig,
}

/// Result of fusing one pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionOutcome {
    pub label: PreferenceLabel,
    pub soft_scores: [f64; 3],
    pub context: DiscriminabilityScores,
    pub vlm: ModalResult,
    pub llm: ModalResult,
}

impl Fuser {
    pub fn context(&self, pair: &TrajectoryPair, k_a: &KeyframeSet, k_b: &KeyframeSet) -> Result<DiscriminabilityScores> {
        let vd = rho(keyframe_distance(&pair.a, &pair.b, k_a, k_b, self.embedder.as_ref())?, self.tau_v);
        let td = rho(volatility_gap(&pair.a, &pair.b)?, self.tau_t);
        DiscriminabilityScores::new(vd, td)
    }

    /// Intra-modal crowd checks followed by inter-modal MAP inference. A
    /// solver that runs out of iterations contributes its best iterate.
    pub fn fuse(&self, pair: &TrajectoryPair, k_a: &KeyframeSet, k_b: &KeyframeSet, seed: u64) -> Result<FusionOutcome> {
        let ctx = self.context(pair, k_a, k_b)?;
        let vlm = fuse_intra(self.vlm.as_ref(), pair, Some(ctx), self.crowd_size, self.alpha, derive_seed(seed, 1))?;
        let llm = fuse_intra(self.llm.as_ref(), pair, Some(ctx), self.crowd_size, self.alpha, derive_seed(seed, 2))?;
        let fused = match fuse_inter(&vlm, &llm, ctx, &self.psl) {
            Ok(f) => f,
            Err(Error::NotConverged { iterations, gap, best }) => {
                log::warn!("fusion of {} / {} stopped after {iterations} iterations (gap {gap:.2e})", pair.a.id(), pair.b.id());
                FusedPreference {
                    label: hard_label(&best),
                    soft_scores: best,
                    objective: f64::NAN,
                }
            }
            Err(e) => return Err(e),
        };
        Ok(FusionOutcome {
            label: fused.label,
            soft_scores: fused.soft_scores,
            context: ctx,
            vlm,
            llm,
        })
    }
}

/// The two evaluators described by the config.
pub fn build_evaluators(
    cfg: &EvaluatorsConfig,
    reward: Arc<dyn RewardFn>,
    keyframes: &KeyframeConfig,
    seed: u64,
) -> Result<(Arc<dyn Evaluator>, Arc<dyn Evaluator>)> {
    Ok(match cfg {
        EvaluatorsConfig::Scripted { margin_confidence } => (
            Arc::new(ScriptedTeacher::new(reward.clone(), Modality::Vlm).with_margin_confidence(*margin_confidence)),
            Arc::new(ScriptedTeacher::new(reward, Modality::Llm).with_margin_confidence(*margin_confidence)),
        ),
        EvaluatorsConfig::Noisy { vlm, llm } => {
            let mix = |p: &crate::evaluators::EvaluatorProfile| crate::evaluators::EvaluatorProfile {
                rng_seed: derive_seed(p.rng_seed, seed),
                ..*p
            };
            (
                Arc::new(NoisyEvaluator::new(mix(vlm), reward.clone())),
                Arc::new(NoisyEvaluator::new(mix(llm), reward)),
            )
        }
        EvaluatorsConfig::Remote(r) => (
            Arc::new(RemoteEvaluator::new(r, Modality::Vlm)?.with_keyframe_config(*keyframes)),
            Arc::new(RemoteEvaluator::new(r, Modality::Llm)?.with_keyframe_config(*keyframes)),
        ),
    })
}

/// Medians of the raw visual and temporal distances over `n` random pairs.
pub fn calibrate_taus(
    buffer: &[Trajectory],
    keyframes: &[KeyframeSet],
    embedder: &dyn EmbeddingProvider,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let pairs = random_pairs(buffer.len(), n, seed);
    let dists = pairs
        .par_iter()
        .map(|&(i, j)| {
            Ok((
                keyframe_distance(&buffer[i], &buffer[j], &keyframes[i], &keyframes[j], embedder)?,
                volatility_gap(&buffer[i], &buffer[j])?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (v, t): (Vec<f64>, Vec<f64>) = dists.into_iter().unzip();
    Ok((calibrate_tau(&v), calibrate_tau(&t)))
}

/// `n` ordered pairs of distinct indices below `len`.
pub fn random_pairs(len: usize, n: usize, seed: u64) -> Vec<(usize, usize)> {
    if len < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let i = rng.random_range(0..len);
            let mut j = rng.random_range(0..len - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

/// Per-step comparison on one held-out trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPoint {
    pub trajectory: String,
    pub step: usize,
    pub predicted: f64,
    pub ground_truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Outcome of [`run_pipeline`]. Timing is kept out of the serialized
/// report so that identical seeds give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub env: String,
    pub seed: u64,
    pub stages: Vec<String>,
    pub buffer_size: usize,
    pub tau_v: f64,
    pub tau_t: f64,
    pub rounds: Vec<RoundRow>,
    pub label_distribution: LabelDistribution,
    pub counterfactuals: usize,
    pub spearman: f64,
    pub alignment: Vec<AlignmentPoint>,
    #[serde(skip)]
    pub timing: Vec<StageTiming>,
}

pub const BUFFER_FILE: &str = "buffer.jsonl";
pub const HELDOUT_FILE: &str = "heldout.jsonl";
pub const PREFERENCES_FILE: &str = "preferences.jsonl";
pub const COUNTERFACTUALS_FILE: &str = "counterfactuals.jsonl";
pub const CF_TRAJECTORIES_FILE: &str = "counterfactual_trajectories.jsonl";
pub const CHECKPOINT_FILE: &str = "reward_checkpoint.json";
pub const ALIGNMENT_FILE: &str = "alignment.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

struct Stages {
    names: Vec<String>,
    timing: Vec<StageTiming>,
}

impl Stages {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        log::info!("stage {name}");
        let out = f().map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        })?;
        self.names.push(name.to_string());
        self.timing.push(StageTiming {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = Value>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in lines {
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One labelled query as stored in `preferences.jsonl`.
pub fn preference_line(pair: &TrajectoryPair, outcome: &FusionOutcome, truth: PreferenceLabel) -> Value {
    json!({
        "a": pair.a.id(),
        "b": pair.b.id(),
        "label": outcome.label,
        "source": RecordSource::Fused,
        "truth": truth,
        "soft_scores": outcome.soft_scores,
        "context": outcome.context,
        "vlm": { "label": outcome.vlm.label, "confidence": outcome.vlm.confidence },
        "llm": { "label": outcome.llm.label, "confidence": outcome.llm.confidence },
    })
}

fn read_jsonl(path: &Path) -> Result<Vec<(usize, Value)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            id: None,
            field: "<line>".into(),
            message: e.to_string(),
        })?;
        out.push((i + 1, v));
    }
    Ok(out)
}

fn lookup<'a>(trajs: &'a HashMap<String, Trajectory>, v: &Value, field: &str, line: usize) -> Result<&'a Trajectory> {
    let id = v.get(field).and_then(Value::as_str).ok_or_else(|| Error::Schema {
        line,
        id: None,
        field: field.into(),
        message: "missing trajectory id".into(),
    })?;
    trajs.get(id).ok_or_else(|| Error::Schema {
        line,
        id: Some(id.into()),
        field: field.into(),
        message: "unknown trajectory id".into(),
    })
}

/// Reads `{a, b, label[, source]}` lines, resolving ids against `trajs`.
pub fn read_preferences(path: impl AsRef<Path>, trajs: &HashMap<String, Trajectory>) -> Result<Vec<PreferenceRecord>> {
    read_jsonl(path.as_ref())?
        .into_iter()
        .map(|(line, v)| {
            let schema = |field: &str, message: String| Error::Schema {
                line,
                id: None,
                field: field.into(),
                message,
            };
            let a = lookup(trajs, &v, "a", line)?;
            let b = lookup(trajs, &v, "b", line)?;
            let label = v
                .get("label")
                .and_then(Value::as_i64)
                .ok_or_else(|| schema("label", "expected -1, 0 or 1".into()))
                .and_then(|l| PreferenceLabel::from_value(l).map_err(|e| schema("label", e.to_string())))?;
            let source = match v.get("source") {
                None => RecordSource::Fused,
                Some(s) => serde_json::from_value(s.clone()).map_err(|e| schema("source", e.to_string()))?,
            };
            let pair = TrajectoryPair::new(a.clone(), b.clone()).map_err(|e| schema("b", e.to_string()))?;
            Ok(PreferenceRecord::new(pair, label, source))
        })
        .collect()
}

/// Reads sidecar records `{original_id, cf_id, mask, intervention}`.
pub fn read_counterfactuals(
    path: impl AsRef<Path>,
    trajs: &HashMap<String, Trajectory>,
) -> Result<Vec<CounterfactualSample>> {
    read_jsonl(path.as_ref())?
        .into_iter()
        .map(|(line, v)| {
            let schema = |field: &str, message: String| Error::Schema {
                line,
                id: None,
                field: field.into(),
                message,
            };
            let original = lookup(trajs, &v, "original_id", line)?.clone();
            let edited = lookup(trajs, &v, "cf_id", line)?.clone();
            let mask: Vec<u8> = serde_json::from_value(v.get("mask").cloned().unwrap_or(Value::Null))
                .map_err(|e| schema("mask", e.to_string()))?;
            if mask.len() != original.len() || mask.iter().any(|&m| m > 1) {
                return Err(schema("mask", format!("expected {} entries of 0 or 1", original.len())));
            }
            let intervention: Intervention = serde_json::from_value(v.get("intervention").cloned().unwrap_or(Value::Null))
                .map_err(|e| schema("intervention", e.to_string()))?;
            Ok(CounterfactualSample {
                original,
                edited,
                mask: mask.into_iter().map(|m| m == 1).collect(),
                intervention,
            })
        })
        .collect()
}

/// Loads trajectory files into an id map; later files shadow earlier ones.
pub fn load_trajectory_map(paths: &[PathBuf]) -> Result<HashMap<String, Trajectory>> {
    let mut map = HashMap::new();
    for p in paths {
        for t in load_dataset(p)? {
            map.insert(t.id().to_string(), t);
        }
    }
    Ok(map)
}

/// Runs every stage; with `out` set, artifacts are written as each stage
/// completes so a failure leaves the partial results on disk.
pub fn run_pipeline(cfg: &PipelineConfig, out: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_stages(cfg, out))
}

fn run_stages(cfg: &PipelineConfig, out: Option<&Path>) -> Result<RunReport> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fs::write(dir.join("config.toml"), cfg.to_toml()?).map_err(|e| Error::io(dir, e))?;
    }
    let seed = cfg.experiment.seed;
    let env = cfg.env.build();
    let reward: Arc<dyn RewardFn> = Arc::new(EnvReward(env.clone()));
    let mut stages = Stages {
        names: Vec::new(),
        timing: Vec::new(),
    };

    let buffer = stages.run("buffer", || {
        let mut buffer = Vec::new();
        if cfg.synthesis.foresight {
            let gen = ScriptedForesight::new(env.clone());
            let batch = foresight_generate(&gen, cfg.synthesis.foresight_count, derive_seed(seed, 1))?;
            buffer.extend(batch.trajectories);
        }
        buffer.extend(random_rollouts(
            env.as_ref(),
            cfg.experiment.random_count,
            cfg.experiment.random_action_scale,
            derive_seed(seed, 2),
        )?);
        if buffer.len() < 2 {
            return Err(Error::InvalidArgument(format!("buffer of {} trajectories cannot form pairs", buffer.len())));
        }
        if let Some(dir) = out {
            save_dataset(dir.join(BUFFER_FILE), &buffer)?;
        }
        Ok(buffer)
    })?;

    let heldout = stages.run("heldout", || {
        let gen = ScriptedForesight::new(env.clone());
        let batch = foresight_generate(&gen, cfg.experiment.heldout_count, derive_seed(seed, 3))?;
        let held: Vec<Trajectory> = batch
            .trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| t.with_id(format!("heldout-{i:04}")))
            .collect();
        if let Some(dir) = out {
            save_dataset(dir.join(HELDOUT_FILE), &held)?;
        }
        Ok(held)
    })?;

    let keyframes = stages.run("keyframes", || {
        buffer
            .par_iter()
            .map(|t| extract_keyframes(t, &cfg.keyframes))
            .collect::<Result<Vec<_>>>()
    })?;

    let embedder = cfg.discriminability.embedding.build(env.state_dim());
    let (tau_v, tau_t) = stages.run("calibrate", || {
        let d = &cfg.discriminability;
        if let (Some(v), Some(t)) = (d.tau_v, d.tau_t) {
            return Ok((v, t));
        }
        let (v, t) = calibrate_taus(&buffer, &keyframes, embedder.as_ref(), 64, derive_seed(seed, 4))?;
        Ok((d.tau_v.unwrap_or(v), d.tau_t.unwrap_or(t)))
    })?;

    let (vlm, llm) = build_evaluators(&cfg.evaluators, reward.clone(), &cfg.keyframes, seed)?;
    let fuser = Fuser {
        vlm,
        llm: llm.clone(),
        embedder,
        tau_v,
        tau_t,
        crowd_size: cfg.intra_fusion.crowd_size,
        alpha: cfg.intra_fusion.alpha,
        psl: cfg.psl,
    };

    let mut dataset: Vec<PreferenceRecord> = Vec::new();
    let mut cf_store: Vec<CounterfactualSample> = Vec::new();
    let mut augmented: BTreeSet<usize> = BTreeSet::new();
    let mut ensemble: Option<RewardEnsemble> = None;
    let mut all_labels = Vec::new();
    let mut rounds = Vec::new();
    let mut metrics: Vec<MetricsRow> = Vec::new();
    let mut pref_lines = Vec::new();
    let q = cfg.reward.queries_per_round;

    for round in 1..=cfg.effective_rounds() {
        let selected = stages.run(&format!("select[{round}]"), || {
            let candidates = random_pairs(buffer.len(), cfg.experiment.candidate_pool, derive_seed(seed, 100 + round as u64));
            match &ensemble {
                None => Ok(candidates[..q].to_vec()),
                Some(e) => {
                    let pairs = candidates
                        .iter()
                        .map(|&(i, j)| TrajectoryPair::new(buffer[i].clone(), buffer[j].clone()))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(uncertainty_select(&pairs, e, q)?.into_iter().map(|k| candidates[k]).collect())
                }
            }
        })?;

        let fused = stages.run(&format!("fuse[{round}]"), || {
            let round_seed = derive_seed(seed, 200 + round as u64);
            selected
                .par_iter()
                .enumerate()
                .map(|(k, &(i, j))| {
                    let pair = TrajectoryPair::new(buffer[i].clone(), buffer[j].clone())?;
                    let outcome = fuser.fuse(&pair, &keyframes[i], &keyframes[j], derive_seed(round_seed, k as u64))?;
                    let truth = scripted_teacher(&pair, reward.as_ref())?.label;
                    Ok((pair, outcome, truth))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let round_labels: Vec<_> = fused.iter().map(|(_, o, t)| (o.label, *t)).collect();
        all_labels.extend(round_labels.iter().copied());
        for (pair, outcome, truth) in &fused {
            pref_lines.push(preference_line(pair, outcome, *truth));
            dataset.push(PreferenceRecord::new(pair.clone(), outcome.label, RecordSource::Fused));
        }
        if let Some(dir) = out {
            write_lines(&dir.join(PREFERENCES_FILE), pref_lines.iter().cloned())?;
        }

        if cfg.synthesis.hindsight {
            stages.run(&format!("augment[{round}]"), || {
                let mut todo: Vec<(usize, DiscriminabilityScores)> = Vec::new();
                for ((i, j), (_, outcome, _)) in selected.iter().zip(&fused) {
                    let preferred = match outcome.label {
                        PreferenceLabel::APreferred => *i,
                        PreferenceLabel::BPreferred => *j,
                        PreferenceLabel::Indecision => continue,
                    };
                    if augmented.insert(preferred) {
                        todo.push((preferred, outcome.context));
                    }
                }
                let new = todo
                    .par_iter()
                    .map(|&(i, ctx)| {
                        let verifier = Verifier {
                            evaluator: llm.clone(),
                            crowd_size: cfg.intra_fusion.crowd_size,
                            alpha: cfg.intra_fusion.alpha,
                            context: Some(ctx),
                        };
                        augment(
                            &buffer[i],
                            &keyframes[i],
                            &cfg.synthesis.augment,
                            env.as_ref(),
                            &ScriptedCausalOracle { reward: reward.clone() },
                            &verifier,
                            derive_seed(seed ^ 0xc0f_ac7, i as u64),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                cf_store.extend(new.into_iter().flatten());
                if let Some(dir) = out {
                    write_lines(&dir.join(COUNTERFACTUALS_FILE), cf_store.iter().map(|s| s.record()))?;
                    let edited: Vec<Trajectory> = cf_store.iter().map(|s| s.edited.clone()).collect();
                    save_dataset(dir.join(CF_TRAJECTORIES_FILE), &edited)?;
                }
                Ok(())
            })?;
        }

        stages.run(&format!("train[{round}]"), || {
            let e = match ensemble.take() {
                Some(e) => e,
                None => RewardEnsemble::new(
                    cfg.reward.reward_input.dim(&buffer[0]),
                    &cfg.reward.hidden,
                    cfg.reward.ensemble_size,
                    cfg.reward.reward_input,
                    derive_seed(seed, 5),
                )?,
            };
            let mut e = e;
            let rows = continue_training(&mut e, &dataset, &cf_store, &cfg.reward, seed, round)?;
            metrics.extend(rows);
            if let Some(dir) = out {
                write_metrics_csv(dir.join(report::METRICS_FILE), &metrics)?;
                e.save(dir.join(CHECKPOINT_FILE))?;
            }
            ensemble = Some(e);
            Ok(())
        })?;

        let (rho_round, _) = stages.run(&format!("evaluate[{round}]"), || {
            alignment(ensemble.as_ref().expect("trained above"), &heldout, reward.as_ref())
        })?;
        let dist = LabelDistribution::from_labels(&round_labels);
        rounds.push(RoundRow {
            round,
            queries: fused.len(),
            correct: dist.correct,
            incorrect: dist.incorrect,
            indecision: dist.indecision,
            counterfactuals: cf_store.len(),
            spearman: rho_round,
        });
        if let Some(dir) = out {
            report::write_rounds_csv(dir.join(report::ROUNDS_FILE), &rounds)?;
        }
    }

    let ensemble = ensemble.ok_or_else(|| Error::Config("no feedback rounds fit within reward.max_feedback".into()))?;
    let (rho_final, points) = stages.run("report", || {
        let (r, points) = alignment(&ensemble, &heldout, reward.as_ref())?;
        if let Some(dir) = out {
            let path = dir.join(ALIGNMENT_FILE);
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Metrics {
                path: path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            for p in &points {
                w.serialize(p).map_err(|e| Error::Metrics {
                    path: path.clone(),
                    line: 0,
                    message: e.to_string(),
                })?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok((r, points))
    })?;

    let run = RunReport {
        env: env.name().to_string(),
        seed,
        stages: stages.names,
        buffer_size: buffer.len(),
        tau_v,
        tau_t,
        rounds,
        label_distribution: LabelDistribution::from_labels(&all_labels),
        counterfactuals: cf_store.len(),
        spearman: rho_final,
        alignment: points,
        timing: stages.timing,
    };
    if let Some(dir) = out {
        write_json(&dir.join(REPORT_FILE), &run)?;
        write_json(&dir.join(TIMING_FILE), &run.timing)?;
    }
    Ok(run)
}

/// Spearman correlation between ensemble and ground-truth per-step rewards
/// pooled over `heldout`, with the series itself.
pub fn alignment(
    ensemble: &RewardEnsemble,
    heldout: &[Trajectory],
    reward: &dyn RewardFn,
) -> Result<(f64, Vec<AlignmentPoint>)> {
    let mut points = Vec::new();
    for t in heldout {
        let pred = ensemble.reward(t)?;
        let gt = step_rewards(t, reward)?;
        for (k, (p, g)) in pred.iter().zip(gt).enumerate() {
            points.push(AlignmentPoint {
                trajectory: t.id().to_string(),
                step: k + 1,
                predicted: *p,
                ground_truth: g,
            });
        }
    }
    let p: Vec<f64> = points.iter().map(|x| x.predicted).collect();
    let g: Vec<f64> = points.iter().map(|x| x.ground_truth).collect();
    Ok((spearman(&p, &g)?, points))
}
