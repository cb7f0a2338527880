//! Flat-section `key = value` run configuration.
//!
//! The format is line-oriented: `#` starts a comment, blank lines are
//! skipped, `[env]` / `[spectral]` / `[model]` / `[learn]` open sections, and
//! everything before the first section header is top-level (`seed`,
//! `seeds`, `out_dir`, `ablation`). Unknown keys are rejected with their full
//! key path. An empty file yields the moderate-scale defaults.

use std::path::PathBuf;

use crate::env::{PPConfig, PreyPolicy};
use crate::learn::{AblationMode, LearnConfig, LearnMode, ModelConfig, OptimizerKind};
use crate::spectral::SpectralConfig;

use super::CliError;

/// A fully validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    /// Consecutive seeds the ablation suite runs per variant.
    pub seeds: usize,
    pub out_dir: PathBuf,
    pub ablation: AblationMode,
    pub env: PPConfig,
    pub spectral: SpectralConfig,
    pub model: ModelConfig,
    pub learn: LearnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 1,
            out_dir: PathBuf::from("out"),
            ablation: AblationMode::Hypergraph,
            env: PPConfig::default(),
            spectral: SpectralConfig::default(),
            model: ModelConfig::default(),
            learn: LearnConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> CliError {
    CliError::Config(format!("{key}: expected {want}, got '{value}'"))
}

fn parse_count(key: &str, value: &str) -> Result<usize, CliError> {
    value.parse().map_err(|_| bad(key, value, "a non-negative integer"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, CliError> {
    value.parse().map_err(|_| bad(key, value, "a non-negative integer"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, CliError> {
    value.parse().map_err(|_| bad(key, value, "a number"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

pub(crate) fn parse_ablation(value: &str) -> Result<AblationMode, CliError> {
    match value {
        "hgcn" => Ok(AblationMode::Hypergraph),
        "gcn" => Ok(AblationMode::CliqueGraph),
        "single-group" => Ok(AblationMode::SingleGroup),
        _ => Err(bad("ablation", value, "hgcn, gcn, or single-group")),
    }
}

pub(crate) fn parse_mode(value: &str) -> Result<LearnMode, CliError> {
    match value {
        "value" => Ok(LearnMode::Value),
        "policy" => Ok(LearnMode::Policy),
        _ => Err(bad("learn.mode", value, "value or policy")),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Env,
    Spectral,
    Model,
    Learn,
}

/// Parses the text of a config file over the defaults.
pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    let mut section = Section::Top;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[env]" => Section::Env,
                "[spectral]" => Section::Spectral,
                "[model]" => Section::Model,
                "[learn]" => Section::Learn,
                _ => {
                    return Err(CliError::Config(format!(
                        "line {}: unknown section {line}",
                        lineno + 1
                    )))
                }
            };
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected key = value, got '{line}'",
                lineno + 1
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        apply_key(&mut cfg, section, key, value)?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn apply_key(cfg: &mut RunConfig, section: Section, key: &str, value: &str) -> Result<(), CliError> {
    match section {
        Section::Top => match key {
            "seed" => cfg.seed = parse_u64("seed", value)?,
            "seeds" => cfg.seeds = parse_count("seeds", value)?,
            "out_dir" => cfg.out_dir = PathBuf::from(value),
            "ablation" => cfg.ablation = parse_ablation(value)?,
            _ => return Err(CliError::Config(format!("unknown key {key}"))),
        },
        Section::Env => match key {
            "grid" => cfg.env.grid = parse_count("env.grid", value)?,
            "n_predators" => cfg.env.n_predators = parse_count("env.n_predators", value)?,
            "vision" => cfg.env.vision = parse_count("env.vision", value)?,
            "max_steps" => cfg.env.max_steps = parse_count("env.max_steps", value)?,
            "prey_policy" => {
                cfg.env.prey_policy = match value {
                    "stationary" => PreyPolicy::Stationary,
                    "random" => PreyPolicy::RandomMove,
                    _ => return Err(bad("env.prey_policy", value, "stationary or random")),
                }
            }
            _ => return Err(CliError::Config(format!("unknown key env.{key}"))),
        },
        Section::Spectral => match key {
            "k_min" => cfg.spectral.k_min = parse_count("spectral.k_min", value)?,
            "k_max" => cfg.spectral.k_max = parse_count("spectral.k_max", value)?,
            "knn" => cfg.spectral.knn = parse_count("spectral.knn", value)?,
            "delta" => cfg.spectral.delta = parse_f64("spectral.delta", value)?,
            "interval" => cfg.spectral.interval = parse_u64("spectral.interval", value)?,
            "window_len" => cfg.spectral.window_len = parse_count("spectral.window_len", value)?,
            "kmeans_restarts" => {
                cfg.spectral.kmeans_restarts = parse_count("spectral.kmeans_restarts", value)?
            }
            "kmeans_iters" => {
                cfg.spectral.kmeans_iters = parse_count("spectral.kmeans_iters", value)?
            }
            _ => return Err(CliError::Config(format!("unknown key spectral.{key}"))),
        },
        Section::Model => match key {
            "hidden" => cfg.model.hidden = parse_count("model.hidden", value)?,
            "conv_out" => cfg.model.conv_out = parse_count("model.conv_out", value)?,
            "conv_layers" => cfg.model.conv_layers = parse_count("model.conv_layers", value)?,
            "heads" => cfg.model.heads = parse_count("model.heads", value)?,
            "att_dim" => cfg.model.att_dim = parse_count("model.att_dim", value)?,
            "critic_hidden" => cfg.model.critic_hidden = parse_count("model.critic_hidden", value)?,
            _ => return Err(CliError::Config(format!("unknown key model.{key}"))),
        },
        Section::Learn => match key {
            "mode" => cfg.learn.mode = parse_mode(value)?,
            "episodes" => cfg.learn.episodes = parse_count("learn.episodes", value)?,
            "lr" => cfg.learn.lr = parse_f64("learn.lr", value)?,
            "lambda1" => cfg.learn.weights.lambda1 = parse_f64("learn.lambda1", value)?,
            "lambda2" => cfg.learn.weights.lambda2 = parse_f64("learn.lambda2", value)?,
            "beta" => cfg.learn.weights.beta = parse_f64("learn.beta", value)?,
            "gamma" => cfg.learn.weights.gamma = parse_f64("learn.gamma", value)?,
            "alpha_critic" => {
                cfg.learn.weights.alpha_critic = parse_f64("learn.alpha_critic", value)?
            }
            "optimizer" => {
                cfg.learn.optimizer = Some(match value {
                    "rmsprop" => OptimizerKind::RmsProp,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(bad("learn.optimizer", value, "rmsprop or adam")),
                })
            }
            "batch_episodes" => {
                cfg.learn.batch_episodes = parse_count("learn.batch_episodes", value)?
            }
            "batch_steps" => cfg.learn.batch_steps = parse_count("learn.batch_steps", value)?,
            "replay_capacity" => {
                cfg.learn.replay_capacity = parse_count("learn.replay_capacity", value)?
            }
            "target_sync" => cfg.learn.target_sync = parse_count("learn.target_sync", value)?,
            "double_q" => cfg.learn.double_q = parse_bool("learn.double_q", value)?,
            "eps_start" => cfg.learn.eps_start = parse_f64("learn.eps_start", value)?,
            "eps_end" => cfg.learn.eps_end = parse_f64("learn.eps_end", value)?,
            "eps_anneal_steps" => {
                cfg.learn.eps_anneal_steps = parse_count("learn.eps_anneal_steps", value)?
            }
            "grad_clip" => cfg.learn.grad_clip = parse_f64("learn.grad_clip", value)?,
            "eval_episodes" => cfg.learn.eval_episodes = parse_count("learn.eval_episodes", value)?,
            "advantage_norm" => {
                cfg.learn.advantage_norm = parse_bool("learn.advantage_norm", value)?
            }
            "opt_epochs" => cfg.learn.opt_epochs = parse_count("learn.opt_epochs", value)?,
            _ => return Err(CliError::Config(format!("unknown key learn.{key}"))),
        },
    }
    Ok(())
}

/// Full constraint check; every violation names the offending key path.
pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let fail = |msg: String| Err(CliError::Config(msg));
    cfg.env.validate().map_err(|e| CliError::Config(format!("env: {e}")))?;
    let n = cfg.env.n_predators;
    let s = &cfg.spectral;
    if !(0.0..=1.0).contains(&s.delta) {
        return fail("spectral.delta must be in [0,1]".into());
    }
    if s.k_min < 1 {
        return fail("spectral.k_min must be ≥ 1".into());
    }
    if s.k_min > s.k_max {
        return fail("spectral.k_min must be ≤ spectral.k_max".into());
    }
    if s.k_max > n {
        return fail("spectral.k_max must be ≤ env.n_predators".into());
    }
    if n > 1 && (s.knn < 1 || s.knn >= n) {
        return fail("spectral.knn must satisfy 1 ≤ knn < env.n_predators".into());
    }
    if s.interval < 1 {
        return fail("spectral.interval must be ≥ 1".into());
    }
    if s.window_len < 1 {
        return fail("spectral.window_len must be ≥ 1".into());
    }
    if s.kmeans_restarts < 1 || s.kmeans_iters < 1 {
        return fail("spectral.kmeans_restarts and kmeans_iters must be ≥ 1".into());
    }
    let m = &cfg.model;
    for (name, v) in [
        ("model.hidden", m.hidden),
        ("model.conv_out", m.conv_out),
        ("model.conv_layers", m.conv_layers),
        ("model.heads", m.heads),
        ("model.att_dim", m.att_dim),
        ("model.critic_hidden", m.critic_hidden),
    ] {
        if v < 1 {
            return fail(format!("{name} must be ≥ 1"));
        }
    }
    let l = &cfg.learn;
    if l.episodes < 1 {
        return fail("learn.episodes must be ≥ 1".into());
    }
    if !(l.lr.is_finite() && l.lr > 0.0) {
        return fail("learn.lr must be a positive finite number".into());
    }
    let w = &l.weights;
    if !(0.0..1.0).contains(&w.gamma) {
        return fail("learn.gamma must be in [0,1)".into());
    }
    for (name, v) in [
        ("learn.lambda1", w.lambda1),
        ("learn.lambda2", w.lambda2),
        ("learn.beta", w.beta),
        ("learn.alpha_critic", w.alpha_critic),
    ] {
        if !v.is_finite() {
            return fail(format!("{name} must be finite"));
        }
    }
    if l.batch_episodes < 1 || l.batch_steps < 1 {
        return fail("learn.batch_episodes and learn.batch_steps must be ≥ 1".into());
    }
    if l.replay_capacity < l.batch_episodes {
        return fail("learn.replay_capacity must be ≥ learn.batch_episodes".into());
    }
    for (name, v) in [("learn.eps_start", l.eps_start), ("learn.eps_end", l.eps_end)] {
        if !(0.0..=1.0).contains(&v) {
            return fail(format!("{name} must be in [0,1]"));
        }
    }
    if !(l.grad_clip.is_finite() && l.grad_clip >= 0.0) {
        return fail("learn.grad_clip must be a non-negative finite number".into());
    }
    if l.eval_episodes < 1 {
        return fail("learn.eval_episodes must be ≥ 1".into());
    }
    if cfg.seeds < 1 {
        return fail("seeds must be ≥ 1".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_moderate_scale_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg.env.grid, 10);
        assert_eq!(cfg.env.n_predators, 5);
        assert_eq!(cfg.env.max_steps, 40);
        assert_eq!(cfg.model.hidden, 96);
        assert_eq!(cfg.model.conv_out, 64);
        assert_eq!(cfg.model.conv_layers, 1);
        assert_eq!(cfg.spectral.k_min, 2);
        assert_eq!(cfg.spectral.k_max, 4);
        assert_eq!(cfg.spectral.interval, 100);
        assert_eq!(cfg.spectral.delta, 0.8);
        assert_eq!(cfg.learn.lr, 0.001);
        assert_eq!(cfg.learn.weights.lambda1, 0.1);
        assert_eq!(cfg.learn.weights.lambda2, 0.01);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.ablation, AblationMode::Hypergraph);
    }

    #[test]
    fn sections_comments_and_values_parse() {
        let text = "\
# run header
seed = 7
ablation = gcn
out_dir = /tmp/run1

[env]
grid = 6            # small board
n_predators = 2
vision = 1
max_steps = 20
prey_policy = random

[spectral]
k_max = 2
knn = 1
delta = 0.5

[model]
hidden = 16

[learn]
mode = value
episodes = 10
double_q = false
optimizer = adam
";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ablation, AblationMode::CliqueGraph);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/run1"));
        assert_eq!(cfg.env.grid, 6);
        assert_eq!(cfg.env.prey_policy, PreyPolicy::RandomMove);
        assert_eq!(cfg.spectral.k_max, 2);
        assert_eq!(cfg.spectral.delta, 0.5);
        assert_eq!(cfg.model.hidden, 16);
        assert_eq!(cfg.learn.mode, LearnMode::Value);
        assert!(!cfg.learn.double_q);
        assert_eq!(cfg.learn.optimizer, Some(OptimizerKind::Adam));
        // Untouched keys keep their defaults.
        assert_eq!(cfg.learn.lr, 0.001);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = parse_config_str("[spectral]\nbogus = 3\n").unwrap_err().to_string();
        assert!(err.contains("spectral.bogus"), "{err}");
        let err = parse_config_str("mystery = 1\n").unwrap_err().to_string();
        assert!(err.contains("mystery"), "{err}");
        let err = parse_config_str("[warp]\n").unwrap_err().to_string();
        assert!(err.contains("[warp]"), "{err}");
    }

    #[test]
    fn delta_bound_violation_uses_the_documented_message() {
        let err = parse_config_str("[spectral]\ndelta = 1.5\n").unwrap_err().to_string();
        assert_eq!(err, "spectral.delta must be in [0,1]");
    }

    #[test]
    fn cross_section_constraints_are_enforced() {
        // k_max exceeds the agent count.
        let err = parse_config_str("[env]\nn_predators = 3\n[spectral]\nknn = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("spectral.k_max"), "{err}");
        // knn must stay below the agent count.
        let err = parse_config_str("[env]\nn_predators = 2\n[spectral]\nk_max = 2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("spectral.knn"), "{err}");
        // Replay must be able to hold one batch.
        let err = parse_config_str("[learn]\nreplay_capacity = 8\nbatch_episodes = 9\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("replay_capacity"), "{err}");
        let err = parse_config_str("[learn]\ngamma = 1.0\n").unwrap_err().to_string();
        assert_eq!(err, "learn.gamma must be in [0,1)");
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse_config_str("seed = 1\nnot a pair\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_config_str("[env]\ngrid = many\n").unwrap_err().to_string();
        assert!(err.contains("env.grid"), "{err}");
    }
}
