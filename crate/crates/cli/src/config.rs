//! Flat JSON run configuration.
//!
//! Every key is optional; omitted keys take the defaults of
//! [`TrainConfig::default`]. Unknown keys, wrong types and out-of-range
//! values are all collected and reported together.

use std::fmt;
use std::path::{Path, PathBuf};

use attnmix_core::mixer::MixerKind;
use attnmix_core::numerics::OptimizerKind;
use attnmix_core::trainer::{Ablation, AuxMixer, TrainConfig};
use serde_json::{Map, Value};

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "n_allies",
    "n_enemies",
    "n_distractors",
    "arena_size",
    "sight_range",
    "ally_attack_range",
    "ally_damage",
    "enemy_attack_range",
    "enemy_damage",
    "unit_health",
    "move_step",
    "episode_limit",
    "reward_damage",
    "reward_kill",
    "reward_win",
    "mixer",
    "mixing_embed_dim",
    "aux_mixer",
    "embed_dim",
    "hidden_dim",
    "lambda",
    "gamma",
    "lr",
    "optimizer",
    "smoothing",
    "grad_clip",
    "epsilon_start",
    "epsilon_finish",
    "epsilon_anneal_steps",
    "batch_size",
    "buffer_size",
    "target_update_interval",
    "t_max",
    "eval_interval",
    "eval_episodes",
    "ablation",
    "seeds",
    "out_dir",
];

/// A fully resolved run: training hyperparameters, seeds and output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { train: TrainConfig::default(), seeds: vec![0], out_dir: PathBuf::from("runs") }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    FileNotFound(PathBuf),
    Io(PathBuf, std::io::Error),
    Parse(String),
    /// One message per invalid field.
    Validation(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::FileNotFound(p) => write!(f, "config file not found: {}", p.display()),
            ConfigError::Io(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            ConfigError::Parse(msg) => write!(f, "config is not valid JSON: {msg}"),
            ConfigError::Validation(problems) => {
                write!(f, "invalid config ({} problem{}):", problems.len(), if problems.len() == 1 { "" } else { "s" })?;
                for p in problems {
                    write!(f, "\n  - {p}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn mixer_name(kind: MixerKind) -> &'static str {
    match kind {
        MixerKind::Additive => "vdn",
        MixerKind::Monotonic => "qmix",
    }
}

pub fn parse_mixer(s: &str) -> Option<MixerKind> {
    match s {
        "vdn" => Some(MixerKind::Additive),
        "qmix" => Some(MixerKind::Monotonic),
        _ => None,
    }
}

fn optimizer_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::RmsProp => "rmsprop",
        OptimizerKind::Adam => "adam",
    }
}

fn parse_optimizer(s: &str) -> Option<OptimizerKind> {
    match s {
        "rmsprop" => Some(OptimizerKind::RmsProp),
        "adam" => Some(OptimizerKind::Adam),
        _ => None,
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ConfigError::FileNotFound(path.to_path_buf()),
        _ => ConfigError::Io(path.to_path_buf(), e),
    })?;
    parse_config_str(&text)
}

/// Parses a flat JSON document into a validated [`RunConfig`].
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(ConfigError::Parse("top level must be a JSON object".into()));
    };
    from_map(&map)
}

struct Reader<'a> {
    map: &'a Map<String, Value>,
    problems: Vec<String>,
}

impl Reader<'_> {
    fn get<T>(&mut self, key: &str, slot: &mut T, kind: &str, conv: impl Fn(&Value) -> Option<T>) {
        if let Some(v) = self.map.get(key) {
            match conv(v) {
                Some(x) => *slot = x,
                None => self.problems.push(format!("{key}: expected {kind}, got {v}")),
            }
        }
    }

    fn float(&mut self, key: &str, slot: &mut f64) {
        self.get(key, slot, "a number", Value::as_f64);
    }

    fn count(&mut self, key: &str, slot: &mut usize) {
        self.get(key, slot, "a non-negative integer", |v| v.as_u64().and_then(|x| usize::try_from(x).ok()));
    }

    fn steps(&mut self, key: &str, slot: &mut u64) {
        self.get(key, slot, "a non-negative integer", Value::as_u64);
    }

    fn name<T>(&mut self, key: &str, slot: &mut T, choices: &str, parse: impl Fn(&str) -> Option<T>) {
        self.get(key, slot, choices, |v| v.as_str().and_then(&parse));
    }
}

fn from_map(map: &Map<String, Value>) -> Result<RunConfig, ConfigError> {
    let mut r = Reader { map, problems: Vec::new() };
    for key in map.keys() {
        if !KEYS.contains(&key.as_str()) {
            r.problems.push(format!("{key}: unknown key"));
        }
    }
    let mut run = RunConfig::default();
    let t = &mut run.train;
    let e = &mut t.env;
    r.count("n_allies", &mut e.n_allies);
    r.count("n_enemies", &mut e.n_enemies);
    r.count("n_distractors", &mut e.n_distractors);
    r.float("arena_size", &mut e.arena_size);
    r.float("sight_range", &mut e.sight_range);
    r.float("ally_attack_range", &mut e.ally_attack_range);
    r.float("ally_damage", &mut e.ally_damage);
    r.float("enemy_attack_range", &mut e.enemy_attack_range);
    r.float("enemy_damage", &mut e.enemy_damage);
    r.float("unit_health", &mut e.unit_health);
    r.float("move_step", &mut e.move_step);
    r.count("episode_limit", &mut e.episode_limit);
    r.float("reward_damage", &mut e.reward_damage);
    r.float("reward_kill", &mut e.reward_kill);
    r.float("reward_win", &mut e.reward_win);
    r.name("mixer", &mut t.mixer, "\"vdn\" or \"qmix\"", parse_mixer);
    r.count("mixing_embed_dim", &mut t.mixing_embed_dim);
    r.name("aux_mixer", &mut t.aux_mixer, "\"shared\" or \"separate\"", AuxMixer::parse);
    r.count("embed_dim", &mut t.embed_dim);
    r.count("hidden_dim", &mut t.hidden_dim);
    r.float("lambda", &mut t.lambda);
    r.float("gamma", &mut t.gamma);
    r.float("lr", &mut t.lr);
    r.name("optimizer", &mut t.optimizer, "\"rmsprop\" or \"adam\"", parse_optimizer);
    r.float("smoothing", &mut t.rms_smoothing);
    r.float("grad_clip", &mut t.grad_clip);
    r.float("epsilon_start", &mut t.epsilon.start);
    r.float("epsilon_finish", &mut t.epsilon.finish);
    r.steps("epsilon_anneal_steps", &mut t.epsilon.anneal_steps);
    r.count("batch_size", &mut t.batch_size);
    r.count("buffer_size", &mut t.buffer_size);
    r.steps("target_update_interval", &mut t.target_update_interval);
    r.steps("t_max", &mut t.t_max);
    r.steps("eval_interval", &mut t.eval_interval);
    r.count("eval_episodes", &mut t.eval_episodes);
    r.name("ablation", &mut t.ablation, "\"s2rl\", \"dense_only\" or \"sparse_only\"", Ablation::parse);
    r.get("seeds", &mut run.seeds, "a non-empty array of non-negative integers", |v| {
        let seeds: Option<Vec<u64>> = v.as_array()?.iter().map(Value::as_u64).collect();
        seeds.filter(|s| !s.is_empty())
    });
    r.get("out_dir", &mut run.out_dir, "a string", |v| v.as_str().map(PathBuf::from));

    // Fields that failed to parse kept their (valid) defaults, so range
    // checks still report every remaining problem.
    if let Err(attnmix_core::Error::InvalidConfig(msg)) = run.train.validate() {
        r.problems.extend(msg.split("; ").map(String::from));
    }
    if run.train.ablation == Ablation::DenseOnly {
        run.train.lambda = 0.0;
    }
    if r.problems.is_empty() {
        Ok(run)
    } else {
        Err(ConfigError::Validation(r.problems))
    }
}

/// The resolved configuration as a flat JSON object with every key present.
pub fn to_json(run: &RunConfig) -> Value {
    let t = &run.train;
    let (env, epsilon) = (&t.env, &t.epsilon);
    let mut m = Map::new();
    let mut put = |k: &str, v: Value| {
        m.insert(k.to_string(), v);
    };
    put("n_allies", env.n_allies.into());
    put("n_enemies", env.n_enemies.into());
    put("n_distractors", env.n_distractors.into());
    put("arena_size", env.arena_size.into());
    put("sight_range", env.sight_range.into());
    put("ally_attack_range", env.ally_attack_range.into());
    put("ally_damage", env.ally_damage.into());
    put("enemy_attack_range", env.enemy_attack_range.into());
    put("enemy_damage", env.enemy_damage.into());
    put("unit_health", env.unit_health.into());
    put("move_step", env.move_step.into());
    put("episode_limit", env.episode_limit.into());
    put("reward_damage", env.reward_damage.into());
    put("reward_kill", env.reward_kill.into());
    put("reward_win", env.reward_win.into());
    put("mixer", mixer_name(t.mixer).into());
    put("mixing_embed_dim", t.mixing_embed_dim.into());
    put("aux_mixer", t.aux_mixer.name().into());
    put("embed_dim", t.embed_dim.into());
    put("hidden_dim", t.hidden_dim.into());
    put("lambda", t.lambda.into());
    put("gamma", t.gamma.into());
    put("lr", t.lr.into());
    put("optimizer", optimizer_name(t.optimizer).into());
    put("smoothing", t.rms_smoothing.into());
    put("grad_clip", t.grad_clip.into());
    put("epsilon_start", epsilon.start.into());
    put("epsilon_finish", epsilon.finish.into());
    put("epsilon_anneal_steps", epsilon.anneal_steps.into());
    put("batch_size", t.batch_size.into());
    put("buffer_size", t.buffer_size.into());
    put("target_update_interval", t.target_update_interval.into());
    put("t_max", t.t_max.into());
    put("eval_interval", t.eval_interval.into());
    put("eval_episodes", t.eval_episodes.into());
    put("ablation", t.ablation.name().into());
    put("seeds", run.seeds.clone().into());
    put("out_dir", run.out_dir.to_string_lossy().into_owned().into());
    Value::Object(m)
}
