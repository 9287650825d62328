use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use super::*;
use crate::demogen::{self, DemoDataset};
use crate::models::{load_group, BcModel, EncoderMode, FeatureCache, Networks, GLOBAL_ENCODER, N_CODES};
use crate::navenv::all_views;
use crate::trainers::{
    bc_pretrain, evaluate, posterior_pretrain, run_episodes, train, NetworkPolicy, RewardScheme, TrainInputs,
};

#[derive(Debug, Parser)]
#[command(name = "mail", version, about = "Adversarial imitation with a frozen, behavior-cloned encoder")]
pub struct Cli {
    /// Seed for this command; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment config (JSON, schema 1).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate expert demonstrations.
    GenDemos {
        #[arg(long, default_value_t = 100_000)]
        pairs: usize,
    },
    /// Behavior-clone the global encoder.
    TrainBc {
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Pre-train the latent-code posterior over the cloned encoder.
    TrainPosterior {
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Adversarial training.
    Train {
        #[arg(long)]
        preset: Option<String>,
        /// Reward scheme override: log, log_scaled, log_shift, linear, tan.
        #[arg(long)]
        scheme: Option<String>,
        /// Encoder strategy override: none, load_fix, load_train, random_train.
        #[arg(long)]
        encoder: Option<String>,
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Environment step budget.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a trained run.
    Eval {
        /// Output directory of a `train` run.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
    },
    /// Encoder features of sampled states.
    ExportEmbeddings {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        states: usize,
    },
    /// Per-step latent codes and trajectories of a code-conditioned run.
    ExportCodeStats {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Print the experiment presets.
    ListPresets,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Messages go to stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("json value"))
        .map_err(|e| HarnessError::io(path, e))
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths.iter().map(|p| FileHash::of(p)).collect()
}

fn require(path: &Path, what: &str, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::Failed(format!("missing {what} at {} (run `mail {hint}` first)", path.display())))
    }
}

fn load_demos(path: &Path) -> Result<DemoDataset> {
    require(path, "demonstration file", "gen-demos")?;
    Ok(DemoDataset::load(path)?)
}

struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    let mut cfg = resolve(&cli)?;
    let name = argv.get(1..).unwrap_or_default().iter().find(|a| !a.starts_with('-')).cloned().unwrap_or_default();
    let outcome = match &cli.command {
        Command::ListPresets => {
            println!("{:<12} {:<10} {:<5} {:<5} reward", "preset", "encoder", "vdb", "di");
            for p in &PRESETS {
                let enc = serde_json::to_value(p.encoder).expect("enum serializes");
                println!(
                    "{:<12} {:<10} {:<5} {:<5} {}",
                    p.name,
                    enc.as_str().unwrap_or_default(),
                    p.vdb,
                    p.di,
                    p.reward
                );
            }
            return Ok(());
        }
        Command::GenDemos { pairs } => gen_demos(&cfg, *pairs)?,
        Command::TrainBc { demos, epochs } => {
            if let Some(d) = demos {
                cfg.demos = d.clone();
            }
            if let Some(e) = epochs {
                cfg.train.bc_epochs = *e;
            }
            train_bc(&cfg)?
        }
        Command::TrainPosterior { demos, checkpoints, epochs } => {
            if let Some(d) = demos {
                cfg.demos = d.clone();
            }
            if let Some(c) = checkpoints {
                cfg.checkpoints = c.clone();
            }
            if let Some(e) = epochs {
                cfg.train.posterior_epochs = *e;
            }
            train_posterior(&cfg)?
        }
        Command::Train { preset, scheme, encoder, demos, checkpoints, steps, quiet } => {
            if let Some(p) = preset {
                cfg.set_preset(p)?;
            }
            if let Some(s) = scheme {
                cfg.train.reward = s.parse::<RewardScheme>().map_err(HarnessError::Usage)?;
            }
            if let Some(e) = encoder {
                cfg.train.encoder = serde_json::from_value::<EncoderMode>(json!(e)).map_err(|_| {
                    HarnessError::Usage(format!(
                        "unknown encoder strategy {e:?} (expected none, load_fix, load_train or random_train)"
                    ))
                })?;
            }
            if let Some(d) = demos {
                cfg.demos = d.clone();
            }
            if let Some(c) = checkpoints {
                cfg.checkpoints = c.clone();
            }
            if let Some(s) = steps {
                cfg.train.total_steps = *s;
            }
            train_run(&cfg, *quiet)?
        }
        Command::Eval { run, episodes } => eval_run(&cfg, run, *episodes)?,
        Command::ExportEmbeddings { checkpoints, states } => {
            if let Some(c) = checkpoints {
                cfg.checkpoints = c.clone();
            }
            embeddings(&cfg, *states)?
        }
        Command::ExportCodeStats { run, episodes } => code_stats(&cfg, run, *episodes)?,
    };
    let manifest = Manifest {
        command: name,
        argv,
        seed: cfg.train.seed,
        config: cfg.clone(),
        inputs: hashes(&outcome.inputs)?,
        outputs: hashes(&outcome.outputs)?,
    };
    let path = manifest.write(&cfg.out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn gen_demos(cfg: &ExperimentConfig, pairs: usize) -> Result<Outcome> {
    if pairs == 0 {
        return Err(HarnessError::Usage("--pairs must be positive".into()));
    }
    create_dir(&cfg.out)?;
    let ds = demogen::generate(pairs, cfg.train.seed)?;
    let path = cfg.out.join("demos.maildemo");
    ds.save(&path)?;
    println!("{} pairs in {} episodes -> {}", ds.len(), ds.episode_count(), path.display());
    Ok(Outcome { inputs: vec![], outputs: vec![path] })
}

fn train_bc(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.train.validate()?;
    let ds = load_demos(&cfg.demos)?;
    create_dir(&cfg.out)?;
    let (model, report) = bc_pretrain(&ds, &cfg.train, cfg.train.seed, |e| {
        eprintln!("epoch {:>3}  loss {:.4}  holdout accuracy {:.4}", e.epoch, e.train_loss, e.holdout_accuracy)
    })?;
    let enc = cfg.out.join("encoder.mailparm");
    let actor = cfg.out.join("actor.mailparm");
    crate::models::save_group(&model.params, GLOBAL_ENCODER, &enc)?;
    crate::models::save_group(&model.params, "actor", &actor)?;
    let report_path = cfg.out.join("report.csv");
    write_bc_epochs(&report_path, &report.epochs)?;
    let summary = cfg.out.join("summary.json");
    write_json(
        &summary,
        &json!({
            "train_pairs": report.train_pairs,
            "holdout_pairs": report.holdout_pairs,
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss,
            "holdout_accuracy": report.final_holdout_accuracy(),
        }),
    )?;
    Ok(Outcome { inputs: vec![cfg.demos.clone()], outputs: vec![enc, actor, report_path, summary] })
}

fn train_posterior(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.train.validate()?;
    let enc_path = cfg.encoder_checkpoint();
    require(&enc_path, "behavior-cloned encoder checkpoint", "train-bc")?;
    let ds = load_demos(&cfg.demos)?;
    let mut bc = BcModel::new(0)?;
    load_group(&mut bc.params, &enc_path, "behavior-cloned encoder", GLOBAL_ENCODER, GLOBAL_ENCODER)?;
    let table = FeatureCache::precompute(&bc.encoder, &bc.params, &all_views())?;
    create_dir(&cfg.out)?;
    let (model, report) = posterior_pretrain(&ds, &table, &cfg.train, cfg.train.seed, |e, loss| {
        eprintln!("epoch {:>3}  loss {loss:.5}", e + 1)
    })?;
    let post = cfg.out.join("posterior.mailparm");
    crate::models::save_group(&model.params, "posterior", &post)?;
    let report_path = cfg.out.join("report.csv");
    write_posterior_epochs(&report_path, &report.epoch_loss, &report.epoch_recon, &report.epoch_kl)?;
    let summary = cfg.out.join("summary.json");
    let decreasing = report.epoch_loss.windows(2).all(|w| w[1] < w[0]);
    write_json(
        &summary,
        &json!({
            "initial_loss": report.epoch_loss.first(),
            "final_loss": report.epoch_loss.last(),
            "strictly_decreasing": decreasing,
        }),
    )?;
    Ok(Outcome { inputs: vec![cfg.demos.clone(), enc_path], outputs: vec![post, report_path, summary] })
}

fn train_run(cfg: &ExperimentConfig, quiet: bool) -> Result<Outcome> {
    cfg.train.validate()?;
    let mut inputs = vec![];
    let enc_path = cfg.encoder_checkpoint();
    let post_path = cfg.posterior_checkpoint();
    if cfg.train.encoder.loads() {
        require(&enc_path, "behavior-cloned encoder checkpoint", "train-bc")?;
        inputs.push(enc_path.clone());
    }
    if cfg.train.di {
        require(&post_path, "pre-trained posterior checkpoint", "train-posterior")?;
        inputs.push(post_path.clone());
    }
    let ds = load_demos(&cfg.demos)?;
    inputs.push(cfg.demos.clone());
    create_dir(&cfg.out)?;
    let train_inputs = TrainInputs {
        demos: &ds,
        encoder: cfg.train.encoder.loads().then_some(enc_path.as_path()),
        posterior: cfg.train.di.then_some(post_path.as_path()),
    };
    let (report, nets) = train(&cfg.train, &train_inputs, |p, s| {
        if !quiet {
            eprintln!(
                "step {:>7}  score {:>8.2} ± {:>6.2}  success {:.2}  D acc {:.3}  reward {:>7.4}  kl {:.4}  entropy {:.3}",
                p.step, p.score_mean, p.score_std, s.success_rate, p.disc_acc, p.reward_mean, s.ppo.approx_kl, s.ppo.entropy
            )
        }
    })?;
    let curve = cfg.out.join("report.csv");
    write_curve(&curve, &report.curve)?;
    let summary = cfg.out.join("summary.json");
    write_json(
        &summary,
        &json!({
            "preset": cfg.preset,
            "best_score": report.best_score,
            "final_score": report.final_eval.mean,
            "final_std": report.final_eval.std,
            "final_success_rate": report.final_eval.success_rate,
            "final_eval_episodes": report.final_eval.episodes,
            "meets_-10_step": report.meets_step,
            "after_meets_stats": report.after_meets.map(|(m, s)| json!({"mean": m, "std": s})),
            "encoder_hash_start": report.encoder_hash_start,
            "encoder_hash_end": report.encoder_hash_end,
            "env_steps": report.env_steps,
            "wall_clock_secs": report.wall_clock_secs,
        }),
    )?;
    println!(
        "final score {:.2} ± {:.2}, best {:.2}, meets -10 at {}",
        report.final_eval.mean,
        report.final_eval.std,
        report.best_score,
        report.meets_step.map_or("-".to_string(), |s| s.to_string())
    );
    let mut outputs = nets.save(&cfg.out.join("models"))?;
    outputs.extend([curve, summary]);
    Ok(Outcome { inputs, outputs })
}

fn load_run(run: &Path) -> Result<(Networks, Vec<PathBuf>)> {
    let dir = run.join("models");
    require(&dir.join("models.json"), "trained networks", "train")?;
    let nets = Networks::load(&dir)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| HarnessError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    files.sort();
    Ok((nets, files))
}

fn eval_run(cfg: &ExperimentConfig, run: &Path, episodes: usize) -> Result<Outcome> {
    if episodes == 0 {
        return Err(HarnessError::Usage("--episodes must be positive".into()));
    }
    let (nets, inputs) = load_run(run)?;
    create_dir(&cfg.out)?;
    let mut cache = FeatureCache::new();
    let report = evaluate(&mut NetworkPolicy::new(&nets, &mut cache), episodes, cfg.train.seed)?;
    println!("score {:.2} ± {:.2}, success {:.3}", report.mean, report.std, report.success_rate);
    let summary = cfg.out.join("summary.json");
    write_json(&summary, &serde_json::to_value(&report).expect("report serializes"))?;
    Ok(Outcome { inputs, outputs: vec![summary] })
}

fn embeddings(cfg: &ExperimentConfig, states: usize) -> Result<Outcome> {
    let enc_path = cfg.encoder_checkpoint();
    require(&enc_path, "behavior-cloned encoder checkpoint", "train-bc")?;
    let mut bc = BcModel::new(0)?;
    load_group(&mut bc.params, &enc_path, "behavior-cloned encoder", GLOBAL_ENCODER, GLOBAL_ENCODER)?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("embeddings.csv");
    let n = export_embeddings(&path, &bc.encoder, &bc.params, states, cfg.train.seed)?;
    println!("{n} states -> {}", path.display());
    Ok(Outcome { inputs: vec![enc_path], outputs: vec![path] })
}

fn code_stats(cfg: &ExperimentConfig, run: &Path, episodes: usize) -> Result<Outcome> {
    let (nets, inputs) = load_run(run)?;
    if nets.posterior.is_none() {
        return Err(HarnessError::Failed(format!(
            "{} is not a code-conditioned run; export-code-stats needs a DI preset",
            run.display()
        )));
    }
    create_dir(&cfg.out)?;
    let mut cache = FeatureCache::new();
    let (report, trace) = run_episodes(&mut NetworkPolicy::new(&nets, &mut cache), episodes, cfg.train.seed, true)?;
    let codes = cfg.out.join("codes.csv");
    write_codes(&codes, &trace)?;
    let traj = cfg.out.join("trajectories.csv");
    write_trajectories(&traj, &trace)?;
    let proportions = code_proportions(&trace);
    let summary = cfg.out.join("summary.json");
    write_json(
        &summary,
        &json!({
            "episodes": episodes,
            "steps": trace.len(),
            "n_codes": N_CODES,
            "proportions": proportions,
            "score": report.mean,
            "success_rate": report.success_rate,
        }),
    )?;
    println!("code proportions {proportions:?}");
    Ok(Outcome { inputs, outputs: vec![codes, traj, summary] })
}
