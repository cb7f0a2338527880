//! Experiment harness: configuration, subcommands, CSV artifacts, and
//! checkpoints.
//!
//! Subcommands: `train`, `eval`, `ablate`, `complexity`. All randomness in a
//! run flows from the single config seed, so re-running any subcommand with
//! the same config produces byte-identical output files. The `HYGMA_LOG`
//! environment variable (`error`, `info`, or `debug`) controls diagnostic
//! verbosity on standard error.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{parse_config_str, validate, RunConfig};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::env;
use crate::learn::{
    evaluate, train_run, AblationMode, EpisodeMetrics, EvalSummary, Model, TrainError,
    TrainOutput,
};
use crate::spectral::Grouping;
use crate::tensor::ParamSet;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Aborted(String),
}

/// Reads and fully validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn agent_headers(n: usize) -> String {
    (0..n).map(|i| format!("agent_{i}")).collect::<Vec<_>>().join(",")
}

fn metrics_lines(metrics: &[EpisodeMetrics]) -> Vec<String> {
    let mut lines = vec![
        "episode,steps,reward,eta,grouping_version,k,silhouette,message_count,loss_task,loss_group,loss_att,loss_group_raw"
            .to_string(),
    ];
    for m in metrics {
        lines.push(format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            m.episode,
            m.steps,
            m.reward,
            m.eta,
            m.grouping_version,
            m.k,
            m.silhouette,
            m.message_count,
            m.loss_task,
            m.loss_group,
            m.loss_att,
            m.loss_group_raw
        ));
    }
    lines
}

fn cooccurrence_lines(matrix: &[Vec<u64>]) -> Vec<String> {
    let n = matrix.len();
    let mut lines = vec![agent_headers(n)];
    for row in matrix {
        lines.push(row.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    }
    lines
}

fn timeline_lines(timeline: &[crate::learn::TimelineRow]) -> Vec<String> {
    let n = timeline.first().map_or(0, |r| r.grouping.labels.len());
    let mut lines = vec![format!("step,k,{}", agent_headers(n))];
    for row in timeline {
        let labels =
            row.grouping.labels.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        lines.push(format!("{},{},{labels}", row.step, row.grouping.k));
    }
    lines
}

/// Mean episode steps over the final 10% of episodes (at least one).
pub fn final_window_mean(metrics: &[EpisodeMetrics]) -> f64 {
    if metrics.is_empty() {
        return f64::NAN;
    }
    let window = (metrics.len() / 10).max(1);
    let tail = &metrics[metrics.len() - window..];
    tail.iter().map(|m| m.steps as f64).sum::<f64>() / window as f64
}

/// Trains one run and writes `metrics.csv`, `cooccurrence.csv`,
/// `groups_timeline.csv`, and `checkpoint.bin` into the output directory.
/// An aborted run still writes every completed row and the last-good
/// checkpoint; the abort is reported in the returned output.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutput, CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    let output =
        train_run(&cfg.env, &cfg.spectral, &cfg.model, &cfg.learn, cfg.ablation, cfg.seed)?;
    write_lines(&cfg.out_dir.join("metrics.csv"), &metrics_lines(&output.metrics))?;
    write_lines(&cfg.out_dir.join("cooccurrence.csv"), &cooccurrence_lines(&output.cooccurrence))?;
    write_lines(&cfg.out_dir.join("groups_timeline.csv"), &timeline_lines(&output.timeline))?;
    save_checkpoint(&cfg.out_dir.join("checkpoint.bin"), &output.params)?;
    info!("final-window mean steps: {}", final_window_mean(&output.metrics));
    Ok(output)
}

/// Rebuilds the model defined by the config so a checkpoint can be loaded
/// into it. Values are immediately overwritten on load; only names and
/// shapes matter.
fn build_model(cfg: &RunConfig) -> (Model, ParamSet) {
    let mut ps = ParamSet::new();
    let mut rng = crate::seeded_rng(cfg.seed);
    let model = Model::init(
        cfg.learn.mode,
        cfg.ablation.conv_variant(),
        cfg.env.obs_len(),
        cfg.env.state_len(),
        cfg.env.n_predators,
        env::N_ACTIONS,
        &cfg.model,
        &mut ps,
        &mut rng,
    );
    (model, ps)
}

/// Greedy evaluation of a checkpoint; writes `eval.csv`.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalSummary, CliError> {
    let (model, mut ps) = build_model(cfg);
    load_checkpoint(checkpoint, &mut ps)?;
    let summary = evaluate(
        &model,
        &ps,
        &cfg.env,
        &cfg.spectral,
        cfg.learn.mode,
        cfg.ablation,
        cfg.learn.eval_episodes,
        cfg.seed,
    )?;
    fs::create_dir_all(&cfg.out_dir)?;
    let lines = vec![
        "episodes,mean_steps,std_steps,success_rate".to_string(),
        format!(
            "{},{},{},{}",
            summary.episodes, summary.mean_steps, summary.std_steps, summary.success_rate
        ),
    ];
    write_lines(&cfg.out_dir.join("eval.csv"), &lines)?;
    Ok(summary)
}

/// One row of the ablation comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub final_mean_steps: f64,
}

/// Runs the three structural variants over `cfg.seeds` consecutive seeds
/// (shared across variants) and writes `ablation.csv`. Per-run artifacts go
/// to `<out_dir>/<variant>-seed<seed>/`.
pub fn run_ablation_suite(cfg: &RunConfig) -> Result<Vec<AblationRow>, CliError> {
    const VARIANTS: [AblationMode; 3] =
        [AblationMode::Hypergraph, AblationMode::CliqueGraph, AblationMode::SingleGroup];
    fs::create_dir_all(&cfg.out_dir)?;
    let mut rows = Vec::with_capacity(3 * cfg.seeds);
    for offset in 0..cfg.seeds as u64 {
        let seed = cfg.seed + offset;
        for variant in VARIANTS {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = seed;
            run_cfg.ablation = variant;
            run_cfg.out_dir = cfg.out_dir.join(format!("{}-seed{seed}", variant.label()));
            let output = run_train(&run_cfg)?;
            if let Some(msg) = output.abort {
                return Err(CliError::Aborted(format!(
                    "{} seed {seed} aborted: {msg}",
                    variant.label()
                )));
            }
            rows.push(AblationRow {
                variant: variant.label(),
                seed,
                final_mean_steps: final_window_mean(&output.metrics),
            });
        }
    }
    let mut lines = vec!["variant,seed,final_mean_steps".to_string()];
    for r in &rows {
        lines.push(format!("{},{},{}", r.variant, r.seed, r.final_mean_steps));
    }
    write_lines(&cfg.out_dir.join("ablation.csv"), &lines)?;
    Ok(rows)
}

/// One row of the communication-cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityRow {
    pub n: usize,
    pub k: usize,
    pub grouped_messages: usize,
    pub full_messages: usize,
    pub ratio: f64,
}

fn balanced_grouping(n: usize, k: usize) -> Grouping {
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    Grouping { labels, k, cohesion: vec![0.0; k], version: 0, eta_last: 0.0 }
}

/// Intra-group message counts of balanced groupings against the fully
/// connected baseline, over an agent-count sweep including the configured
/// team size; writes `complexity.csv`.
pub fn complexity_report(cfg: &RunConfig) -> Result<Vec<ComplexityRow>, CliError> {
    let mut ns = vec![5, 10, 20, cfg.env.n_predators];
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::new();
    for n in ns {
        for k in 1..=5usize.min(n) {
            let grouped = crate::hypergraph::message_count(&balanced_grouping(n, k));
            let full = n * (n - 1);
            let ratio = if full == 0 { 1.0 } else { grouped as f64 / full as f64 };
            rows.push(ComplexityRow { n, k, grouped_messages: grouped, full_messages: full, ratio });
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let mut lines = vec!["n,k,grouped_messages,full_messages,ratio".to_string()];
    for r in &rows {
        lines.push(format!(
            "{},{},{},{},{}",
            r.n, r.k, r.grouped_messages, r.full_messages, r.ratio
        ));
    }
    write_lines(&cfg.out_dir.join("complexity.csv"), &lines)?;
    Ok(rows)
}

#[derive(Parser)]
#[command(
    name = "hygma",
    about = "Cooperative multi-agent RL with dynamic agent grouping",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, group artifacts, and a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the learner: value | policy.
        #[arg(long)]
        algo: Option<String>,
        /// Overrides the structural variant: hgcn | gcn | single-group.
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Greedy evaluation of a trained checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train all three structural variants on shared seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tabulate grouped vs. fully connected communication costs.
    Complexity {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_logging() {
    let level = match std::env::var("HYGMA_LOG").as_deref() {
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") => log::LevelFilter::Info,
        Ok("error") | Err(_) => log::LevelFilter::Error,
        Ok(other) => {
            eprintln!("HYGMA_LOG: unknown level '{other}', using error");
            log::LevelFilter::Error
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Train { config, seed, out, algo, ablation } => {
            let mut cfg = parse_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(algo) = algo {
                cfg.learn.mode = config::parse_mode(&algo)?;
            }
            if let Some(ablation) = ablation {
                cfg.ablation = config::parse_ablation(&ablation)?;
            }
            validate(&cfg)?;
            let output = run_train(&cfg)?;
            match output.abort {
                Some(msg) => {
                    eprintln!("training aborted: {msg} (last-good checkpoint retained)");
                    Ok(1)
                }
                None => {
                    println!(
                        "trained {} episodes; final-window mean steps {}",
                        output.metrics.len(),
                        final_window_mean(&output.metrics)
                    );
                    Ok(0)
                }
            }
        }
        Command::Eval { config, checkpoint } => {
            let cfg = parse_config(&config)?;
            let summary = run_eval(&cfg, &checkpoint)?;
            println!(
                "eval over {} episodes: mean steps {} (std {}), success rate {}",
                summary.episodes, summary.mean_steps, summary.std_steps, summary.success_rate
            );
            Ok(0)
        }
        Command::Ablate { config } => {
            let cfg = parse_config(&config)?;
            let rows = run_ablation_suite(&cfg)?;
            for r in &rows {
                println!("{} seed {}: final-window mean steps {}", r.variant, r.seed, r.final_mean_steps);
            }
            Ok(0)
        }
        Command::Complexity { config } => {
            let cfg = parse_config(&config)?;
            let rows = complexity_report(&cfg)?;
            for r in &rows {
                println!(
                    "n={} k={}: {} grouped vs {} full (ratio {})",
                    r.n, r.k, r.grouped_messages, r.full_messages, r.ratio
                );
            }
            Ok(0)
        }
    }
}

/// Binary entry point; returns the process exit code.
pub fn main() -> i32 {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/usage text and exit code semantics.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(CliError::Aborted(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
