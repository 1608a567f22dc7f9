use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use preffuse_core::config::PipelineConfig;
use preffuse_core::evaluators::{derive_seed, scripted_teacher, RewardFn};
use preffuse_core::keyframes::extract_keyframes;
use preffuse_core::pipeline::{
    build_evaluators, calibrate_taus, load_trajectory_map, preference_line, read_counterfactuals, read_preferences,
    run_pipeline, Fuser, CF_TRAJECTORIES_FILE, CHECKPOINT_FILE, COUNTERFACTUALS_FILE, PREFERENCES_FILE,
};
use preffuse_core::report::{self, METRICS_FILE};
use preffuse_core::reward::{train_reward, write_metrics_csv};
use preffuse_core::synthesis::{
    augment, foresight_generate, EnvReward, EnvSpec, ScriptedCausalOracle, ScriptedForesight, Verifier,
};
use preffuse_core::trajectory::{load_dataset, save_dataset, TrajectoryPair};

#[derive(Parser)]
#[command(name = "preffuse", version, about = "Multimodal preference fusion and causal reward learning")]
struct Cli {
    /// Pipeline config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes keyframe indices for every trajectory in a JSONL file.
    ExtractKeyframes {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fuses consecutive trajectory pairs (1 vs 2, 3 vs 4, ...) into labels.
    Fuse {
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Generates foresight trajectories, or counterfactuals of preferred ones.
    Synthesize {
        #[arg(long, value_enum)]
        mode: SynthMode,
        /// Environment name; overrides the config's `env` section.
        #[arg(long)]
        env: Option<String>,
        /// Foresight trajectories to generate (foresight mode).
        #[arg(long)]
        count: Option<usize>,
        /// Preferred trajectories to augment (hindsight mode).
        #[arg(long, required_if_eq("mode", "hindsight"))]
        input: Option<PathBuf>,
    },
    /// Trains a reward ensemble from labelled preferences.
    TrainReward {
        #[arg(long)]
        preferences: PathBuf,
        /// Trajectory files that resolve the ids in the other inputs.
        #[arg(long, num_args = 1.., required = true)]
        trajectories: Vec<PathBuf>,
        #[arg(long)]
        counterfactuals: Option<PathBuf>,
    },
    /// Runs the full pipeline.
    Run,
    /// Summarizes a finished run.
    Report { run_dir: PathBuf },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthMode {
    Foresight,
    Hindsight,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}

/// Error chain without the causes that a message already embeds.
fn render(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let c = cause.to_string();
        if !msg.contains(&c) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&c);
        }
    }
    msg
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Command::Synthesize { env: Some(name), .. } = &cli.command {
        cfg.env = EnvSpec::from_name(name)?;
    }
    if let Some(s) = cli.seed {
        cfg.experiment.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.experiment.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_jsonl(path: &Path, lines: impl IntoIterator<Item = serde_json::Value>) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for l in lines {
        serde_json::to_writer(&mut f, &l)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    if let Command::Report { run_dir } = &cli.command {
        let r = report::report(run_dir, None)?;
        print!("{}", r.summary);
        return Ok(());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.experiment.workers).build()?;
    pool.install(|| dispatch(&cli.command, &cfg, out))
}

fn dispatch(command: &Command, cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let seed = cfg.experiment.seed;
    let env = cfg.env.build();
    let reward: Arc<dyn RewardFn> = Arc::new(EnvReward(env.clone()));
    match command {
        Command::ExtractKeyframes { input } => {
            let trajs = load_dataset(input)?;
            let sets = trajs
                .par_iter()
                .map(|t| extract_keyframes(t, &cfg.keyframes))
                .collect::<preffuse_core::Result<Vec<_>>>()?;
            let path = out.join("keyframes.jsonl");
            write_jsonl(
                &path,
                trajs.iter().zip(&sets).map(|(t, k)| json!({ "id": t.id(), "keyframes": k.indices() })),
            )?;
            println!("{} trajectories -> {}", trajs.len(), path.display());
        }
        Command::Fuse { trajectories } => {
            let trajs = load_dataset(trajectories)?;
            if trajs.len() < 2 {
                bail!("need at least two trajectories to form a pair");
            }
            let keyframes = trajs
                .par_iter()
                .map(|t| extract_keyframes(t, &cfg.keyframes))
                .collect::<preffuse_core::Result<Vec<_>>>()?;
            let embedder = cfg.discriminability.embedding.build(env.state_dim());
            let (tv, tt) = match (cfg.discriminability.tau_v, cfg.discriminability.tau_t) {
                (Some(v), Some(t)) => (v, t),
                (v, t) => {
                    let (cv, ct) = calibrate_taus(&trajs, &keyframes, embedder.as_ref(), 64, derive_seed(seed, 4))?;
                    (v.unwrap_or(cv), t.unwrap_or(ct))
                }
            };
            let (vlm, llm) = build_evaluators(&cfg.evaluators, reward.clone(), &cfg.keyframes, seed)?;
            let fuser = Fuser {
                vlm,
                llm,
                embedder,
                tau_v: tv,
                tau_t: tt,
                crowd_size: cfg.intra_fusion.crowd_size,
                alpha: cfg.intra_fusion.alpha,
                psl: cfg.psl,
            };
            let lines = (0..trajs.len() / 2)
                .into_par_iter()
                .map(|k| {
                    let (i, j) = (2 * k, 2 * k + 1);
                    let pair = TrajectoryPair::new(trajs[i].clone(), trajs[j].clone())?;
                    let o = fuser.fuse(&pair, &keyframes[i], &keyframes[j], derive_seed(seed, k as u64))?;
                    let truth = scripted_teacher(&pair, reward.as_ref())?.label;
                    Ok(preference_line(&pair, &o, truth))
                })
                .collect::<preffuse_core::Result<Vec<_>>>()?;
            let path = out.join(PREFERENCES_FILE);
            println!("{} pairs -> {}", lines.len(), path.display());
            write_jsonl(&path, lines)?;
        }
        Command::Synthesize { mode: SynthMode::Foresight, count, .. } => {
            let gen = ScriptedForesight::new(env.clone());
            let batch = foresight_generate(&gen, count.unwrap_or(cfg.synthesis.foresight_count), derive_seed(seed, 1))?;
            for (i, why) in &batch.failures {
                log::warn!("foresight trajectory {i} failed: {why}");
            }
            let path = out.join("foresight.jsonl");
            save_dataset(&path, &batch.trajectories)?;
            println!("{} foresight trajectories -> {}", batch.trajectories.len(), path.display());
        }
        Command::Synthesize { mode: SynthMode::Hindsight, input, .. } => {
            let input = input.as_ref().context("hindsight mode needs --input")?;
            let trajs = load_dataset(input)?;
            let (_, llm) = build_evaluators(&cfg.evaluators, reward.clone(), &cfg.keyframes, seed)?;
            let verifier = Verifier {
                evaluator: llm,
                crowd_size: cfg.intra_fusion.crowd_size,
                alpha: cfg.intra_fusion.alpha,
                context: None,
            };
            let oracle = ScriptedCausalOracle { reward: reward.clone() };
            let samples = trajs
                .par_iter()
                .enumerate()
                .map(|(i, t)| {
                    let k = extract_keyframes(t, &cfg.keyframes)?;
                    augment(t, &k, &cfg.synthesis.augment, env.as_ref(), &oracle, &verifier, derive_seed(seed, i as u64))
                })
                .collect::<preffuse_core::Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect::<Vec<_>>();
            let edited: Vec<_> = samples.iter().map(|s| s.edited.clone()).collect();
            save_dataset(out.join(CF_TRAJECTORIES_FILE), &edited)?;
            let path = out.join(COUNTERFACTUALS_FILE);
            write_jsonl(&path, samples.iter().map(|s| s.record()))?;
            println!("{} counterfactuals of {} trajectories -> {}", samples.len(), trajs.len(), path.display());
        }
        Command::TrainReward {
            preferences,
            trajectories,
            counterfactuals,
        } => {
            let map = load_trajectory_map(trajectories)?;
            let dataset = read_preferences(preferences, &map)?;
            let cf = match counterfactuals {
                Some(p) => read_counterfactuals(p, &map)?,
                None => Vec::new(),
            };
            let trained = train_reward(&dataset, &cf, &cfg.reward, seed)?;
            trained.ensemble.save(out.join(CHECKPOINT_FILE))?;
            write_metrics_csv(out.join(METRICS_FILE), &trained.metrics)?;
            if let Some(last) = trained.metrics.last() {
                println!(
                    "trained on {} preferences and {} counterfactuals: pref_loss {:.4}, label_accuracy {:.3}",
                    dataset.len(),
                    cf.len(),
                    last.pref_loss,
                    last.label_accuracy
                );
            }
        }
        Command::Run => {
            let r = run_pipeline(cfg, Some(out))?;
            let rep = report::report(out, None)?;
            print!("{}", rep.summary);
            println!(
                "final spearman {:.4}; labels correct {:.3} incorrect {:.3} indecision {:.3}",
                r.spearman, r.label_distribution.correct, r.label_distribution.incorrect, r.label_distribution.indecision
            );
        }
        Command::Report { .. } => unreachable!("handled before the worker pool"),
    }
    Ok(())
}
