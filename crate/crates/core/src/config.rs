//! Run configuration: defaults, presets, flat `key = value` files and validation.
//!
//! Layering order used by the CLI is defaults < preset < config file <
//! `ACCMER_SEED` < command-line flags. Every layer is a plain string map, so the
//! same [`validate_config`] call sees the merged result regardless of source.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

/// Environment variable that overrides the `seed` key.
pub const SEED_ENV_VAR: &str = "ACCMER_SEED";

pub type RawConfig = BTreeMap<String, String>;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} out of {range}: {value}")]
    OutOfRange {
        field: &'static str,
        range: &'static str,
        value: String,
    },
    #[error("b > d: batch_size {batch} exceeds buffer_capacity {buffer}")]
    BatchExceedsBuffer { batch: usize, buffer: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("cannot parse `{value}` for {field}")]
    Parse { field: &'static str, value: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown preset `{0}` (expected pp0, pp15 or pp-scale)")]
    UnknownPreset(String),
}

/// Which batch builder a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// `b` distinct slots drawn uniformly each call.
    Uniform,
    /// Re-rank the whole weight table every call and take the top `b`.
    Prioritized,
    /// Cached top-`⌊α·b⌋` reuse set plus a uniform complement.
    Accmer,
}

impl SamplerMode {
    pub const ALL: [SamplerMode; 3] = [SamplerMode::Uniform, SamplerMode::Prioritized, SamplerMode::Accmer];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMode::Uniform => "uniform",
            SamplerMode::Prioritized => "prioritized",
            SamplerMode::Accmer => "accmer",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SamplerMode::Uniform => 0,
            SamplerMode::Prioritized => 1,
            SamplerMode::Accmer => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(SamplerMode::Uniform),
            "prioritized" => Ok(SamplerMode::Prioritized),
            "accmer" => Ok(SamplerMode::Accmer),
            _ => Err(ConfigError::Parse {
                field: "sampler_mode",
                value: s.to_string(),
            }),
        }
    }
}

/// Mixing network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    /// State-conditioned hypernetwork mixer with non-negative mixing weights.
    Qmix,
    /// Plain sum of agent values (no parameters).
    Sum,
}

impl MixerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MixerKind::Qmix => "qmix",
            MixerKind::Sum => "sum",
        }
    }
}

impl FromStr for MixerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qmix" => Ok(MixerKind::Qmix),
            "sum" | "vdn" => Ok(MixerKind::Sum),
            _ => Err(ConfigError::Parse {
                field: "mixer",
                value: s.to_string(),
            }),
        }
    }
}

/// Fully validated run configuration. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub n_agents: usize,
    pub grid_size: usize,
    pub n_prey: usize,
    /// Reward added for every prey with exactly one catching predator (≤ 0).
    pub punishment: f64,
    /// `d`
    pub buffer_capacity: usize,
    /// `b`
    pub batch_size: usize,
    /// `α`
    pub reuse_ratio: f64,
    /// Dec-POMDP discount used in TD targets.
    pub env_discount: f64,
    /// Multiplicative decay applied to the weight table after each update.
    pub weight_decay: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    pub learning_rate: f64,
    pub target_sync_episodes: u64,
    /// `t_max`, counted in environment steps.
    pub total_steps: u64,
    pub seed: u64,

    pub sampler_mode: SamplerMode,
    pub episode_limit: u32,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub agent_hidden: usize,
    pub mixer_hidden: usize,
    pub mixer: MixerKind,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Upper clip on raw prioritization weights; 0 disables.
    pub weight_clip: f64,
    /// Number of sampling calls kept in the exported access trace.
    pub trace_batches: u64,
    /// Fill the wall-clock column of the curves file.
    pub record_timing: bool,
}

const KEYS: &[&str] = &[
    "n_agents",
    "grid_size",
    "n_prey",
    "punishment",
    "buffer_capacity",
    "batch_size",
    "reuse_ratio",
    "env_discount",
    "weight_decay",
    "epsilon_start",
    "epsilon_end",
    "epsilon_anneal_steps",
    "learning_rate",
    "target_sync_episodes",
    "total_steps",
    "seed",
    "sampler_mode",
    "episode_limit",
    "eval_interval",
    "eval_episodes",
    "agent_hidden",
    "mixer_hidden",
    "mixer",
    "grad_clip",
    "weight_clip",
    "trace_batches",
    "record_timing",
];

fn canonical_key(key: &str) -> Option<&'static str> {
    let key = key.trim();
    let aliased = match key {
        "buffer" | "buffer_size" | "d" => "buffer_capacity",
        "lr" => "learning_rate",
        "alpha" => "reuse_ratio",
        "t_max" => "total_steps",
        "mode" => "sampler_mode",
        "b" => "batch_size",
        other => other,
    };
    KEYS.iter().copied().find(|k| *k == aliased)
}

impl Default for RunConfig {
    /// Predator-prey with no punishment: batch 256, buffer 100000, lr 0.001,
    /// target sync every 200 episodes.
    fn default() -> Self {
        RunConfig {
            n_agents: 8,
            grid_size: 10,
            n_prey: 8,
            punishment: 0.0,
            buffer_capacity: 100_000,
            batch_size: 256,
            reuse_ratio: 0.5,
            env_discount: 0.99,
            weight_decay: 1.0,
            epsilon_start: 0.995,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 100_000,
            learning_rate: 0.001,
            target_sync_episodes: 200,
            total_steps: 1_000_000,
            seed: 0,
            sampler_mode: SamplerMode::Accmer,
            episode_limit: 200,
            eval_interval: 1000,
            eval_episodes: 32,
            agent_hidden: 64,
            mixer_hidden: 32,
            mixer: MixerKind::Qmix,
            grad_clip: 0.0,
            weight_clip: 0.0,
            trace_batches: 5000,
            record_timing: false,
        }
    }
}

/// Raw overrides for a named preset.
///
/// * `pp0`: no punishment (defaults).
/// * `pp15`: punishment −1.5, batch 128, buffer 10000, weight decay 0.8.
/// * `pp-scale`: α 0.5, batch 128, buffer 10000, weight decay 0.8, no punishment.
pub fn preset(name: &str) -> Result<RawConfig, ConfigError> {
    let pairs: &[(&str, &str)] = match name {
        "pp0" => &[("punishment", "0")],
        "pp15" => &[("punishment", "-1.5")],
        "pp-scale" => &[
            ("punishment", "0"),
            ("reuse_ratio", "0.5"),
            ("batch_size", "128"),
            ("buffer_capacity", "10000"),
            ("weight_decay", "0.8"),
        ],
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    Ok(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
}

/// Parse a flat config file. Blank lines and `#` comments are ignored; keys
/// are canonicalized but not yet checked against the schema.
pub fn parse_kv_text(text: &str) -> Result<RawConfig, ConfigError> {
    let mut out = RawConfig::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Rewrite aliased keys (`alpha`, `lr`, `d`, …) to their schema names so
/// layers can be merged key by key.
pub fn canonicalize(raw: &RawConfig) -> Result<RawConfig, ConfigError> {
    raw.iter()
        .map(|(k, v)| {
            canonical_key(k)
                .map(|c| (c.to_string(), v.clone()))
                .ok_or_else(|| ConfigError::UnknownKey(k.clone()))
        })
        .collect()
}

/// Apply `ACCMER_SEED` from the process environment, if set.
pub fn apply_env_overrides(raw: &mut RawConfig) {
    if let Ok(seed) = std::env::var(SEED_ENV_VAR) {
        raw.insert("seed".to_string(), seed);
    }
}

fn parse<T: FromStr>(field: &'static str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Parse {
        field,
        value: value.to_string(),
    })
}

fn parse_bool(field: &'static str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Parse {
            field,
            value: value.to_string(),
        }),
    }
}

fn out_of_range(field: &'static str, range: &'static str, value: impl fmt::Display) -> ConfigError {
    ConfigError::OutOfRange {
        field,
        range,
        value: value.to_string(),
    }
}

/// Build a [`RunConfig`] from raw key/value pairs, filling defaults.
///
/// Defaults for `batch_size`, `buffer_capacity` and `weight_decay` follow the
/// punishment level: the punished task (punishment < 0) uses 128 / 10000 / 0.8.
pub fn validate_config(raw: &RawConfig) -> Result<RunConfig, ConfigError> {
    let mut canon: BTreeMap<&'static str, &str> = BTreeMap::new();
    for (k, v) in raw {
        let key = canonical_key(k).ok_or_else(|| ConfigError::UnknownKey(k.clone()))?;
        canon.insert(key, v.as_str());
    }

    let mut cfg = RunConfig::default();
    if let Some(p) = canon.get("punishment") {
        cfg.punishment = parse("punishment", p)?;
        if cfg.punishment < 0.0 {
            cfg.batch_size = 128;
            cfg.buffer_capacity = 10_000;
            cfg.weight_decay = 0.8;
        }
    }

    for (&key, &value) in &canon {
        match key {
            "n_agents" => cfg.n_agents = parse("n_agents", value)?,
            "grid_size" => cfg.grid_size = parse("grid_size", value)?,
            "n_prey" => cfg.n_prey = parse("n_prey", value)?,
            "punishment" => {}
            "buffer_capacity" => cfg.buffer_capacity = parse("buffer_capacity", value)?,
            "batch_size" => cfg.batch_size = parse("batch_size", value)?,
            "reuse_ratio" => cfg.reuse_ratio = parse("reuse_ratio", value)?,
            "env_discount" => cfg.env_discount = parse("env_discount", value)?,
            "weight_decay" => cfg.weight_decay = parse("weight_decay", value)?,
            "epsilon_start" => cfg.epsilon_start = parse("epsilon_start", value)?,
            "epsilon_end" => cfg.epsilon_end = parse("epsilon_end", value)?,
            "epsilon_anneal_steps" => cfg.epsilon_anneal_steps = parse("epsilon_anneal_steps", value)?,
            "learning_rate" => cfg.learning_rate = parse("learning_rate", value)?,
            "target_sync_episodes" => cfg.target_sync_episodes = parse("target_sync_episodes", value)?,
            "total_steps" => cfg.total_steps = parse("total_steps", value)?,
            "seed" => cfg.seed = parse("seed", value)?,
            "sampler_mode" => cfg.sampler_mode = value.parse()?,
            "episode_limit" => cfg.episode_limit = parse("episode_limit", value)?,
            "eval_interval" => cfg.eval_interval = parse("eval_interval", value)?,
            "eval_episodes" => cfg.eval_episodes = parse("eval_episodes", value)?,
            "agent_hidden" => cfg.agent_hidden = parse("agent_hidden", value)?,
            "mixer_hidden" => cfg.mixer_hidden = parse("mixer_hidden", value)?,
            "mixer" => cfg.mixer = value.parse()?,
            "grad_clip" => cfg.grad_clip = parse("grad_clip", value)?,
            "weight_clip" => cfg.weight_clip = parse("weight_clip", value)?,
            "trace_batches" => cfg.trace_batches = parse("trace_batches", value)?,
            "record_timing" => cfg.record_timing = parse_bool("record_timing", value)?,
            _ => unreachable!("canonical_key only yields schema keys"),
        }
    }

    cfg.check()?;
    Ok(cfg)
}

impl RunConfig {
    /// Range checks shared by [`validate_config`] and programmatic construction.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.n_agents < 2 {
            return Err(out_of_range("n_agents", "[2, ∞)", self.n_agents));
        }
        if self.grid_size == 0 || self.grid_size > 255 {
            return Err(out_of_range("grid_size", "[1, 255]", self.grid_size));
        }
        if self.n_prey == 0 {
            return Err(out_of_range("n_prey", "[1, ∞)", self.n_prey));
        }
        if !(self.punishment.is_finite() && self.punishment <= 0.0) {
            return Err(out_of_range("punishment", "(-∞, 0]", self.punishment));
        }
        if self.buffer_capacity == 0 || self.buffer_capacity > u32::MAX as usize {
            return Err(out_of_range("buffer_capacity", "[1, 2^32)", self.buffer_capacity));
        }
        if self.batch_size == 0 {
            return Err(out_of_range("batch_size", "[1, ∞)", self.batch_size));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(ConfigError::BatchExceedsBuffer {
                batch: self.batch_size,
                buffer: self.buffer_capacity,
            });
        }
        if !(0.0..=1.0).contains(&self.reuse_ratio) {
            return Err(out_of_range("reuse_ratio α", "[0,1]", self.reuse_ratio));
        }
        if !(self.env_discount >= 0.0 && self.env_discount < 1.0) {
            return Err(out_of_range("env_discount", "[0,1)", self.env_discount));
        }
        if !(self.weight_decay > 0.0 && self.weight_decay <= 1.0) {
            return Err(out_of_range("weight_decay", "(0,1]", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) {
            return Err(out_of_range("epsilon_start", "[0,1]", self.epsilon_start));
        }
        if !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(out_of_range("epsilon_end", "[0,1]", self.epsilon_end));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(out_of_range("learning_rate", "(0, ∞)", self.learning_rate));
        }
        if self.target_sync_episodes == 0 {
            return Err(out_of_range("target_sync_episodes", "[1, ∞)", self.target_sync_episodes));
        }
        if self.episode_limit == 0 {
            return Err(out_of_range("episode_limit", "[1, ∞)", self.episode_limit));
        }
        if self.eval_interval == 0 {
            return Err(out_of_range("eval_interval", "[1, ∞)", self.eval_interval));
        }
        if self.eval_episodes == 0 {
            return Err(out_of_range("eval_episodes", "[1, ∞)", self.eval_episodes));
        }
        if self.agent_hidden == 0 {
            return Err(out_of_range("agent_hidden", "[1, ∞)", self.agent_hidden));
        }
        if self.mixer_hidden == 0 {
            return Err(out_of_range("mixer_hidden", "[1, ∞)", self.mixer_hidden));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(out_of_range("grad_clip", "[0, ∞)", self.grad_clip));
        }
        if !(self.weight_clip.is_finite() && self.weight_clip >= 0.0) {
            return Err(out_of_range("weight_clip", "[0, ∞)", self.weight_clip));
        }
        Ok(())
    }

    /// `|S⁻| = ⌊α·b⌋`.
    pub fn reuse_count(&self) -> usize {
        reuse_count(self.reuse_ratio, self.batch_size)
    }

    /// Number of sampling calls sharing one reuse set, `⌊d/b⌋`.
    pub fn reuse_window(&self) -> usize {
        (self.buffer_capacity / self.batch_size).max(1)
    }

    /// Linear exploration schedule evaluated at environment step `t`.
    pub fn epsilon_at(&self, t: u64) -> f64 {
        if self.epsilon_anneal_steps == 0 {
            return self.epsilon_end;
        }
        if t >= self.epsilon_anneal_steps {
            return self.epsilon_end;
        }
        let frac = t as f64 / self.epsilon_anneal_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    /// Every key with its value, in schema order.
    pub fn to_raw(&self) -> RawConfig {
        let mut m = RawConfig::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("n_agents", self.n_agents.to_string());
        put("grid_size", self.grid_size.to_string());
        put("n_prey", self.n_prey.to_string());
        put("punishment", fmt_f64(self.punishment));
        put("buffer_capacity", self.buffer_capacity.to_string());
        put("batch_size", self.batch_size.to_string());
        put("reuse_ratio", fmt_f64(self.reuse_ratio));
        put("env_discount", fmt_f64(self.env_discount));
        put("weight_decay", fmt_f64(self.weight_decay));
        put("epsilon_start", fmt_f64(self.epsilon_start));
        put("epsilon_end", fmt_f64(self.epsilon_end));
        put("epsilon_anneal_steps", self.epsilon_anneal_steps.to_string());
        put("learning_rate", fmt_f64(self.learning_rate));
        put("target_sync_episodes", self.target_sync_episodes.to_string());
        put("total_steps", self.total_steps.to_string());
        put("seed", self.seed.to_string());
        put("sampler_mode", self.sampler_mode.to_string());
        put("episode_limit", self.episode_limit.to_string());
        put("eval_interval", self.eval_interval.to_string());
        put("eval_episodes", self.eval_episodes.to_string());
        put("agent_hidden", self.agent_hidden.to_string());
        put("mixer_hidden", self.mixer_hidden.to_string());
        put("mixer", self.mixer.as_str().to_string());
        put("grad_clip", fmt_f64(self.grad_clip));
        put("weight_clip", fmt_f64(self.weight_clip));
        put("trace_batches", self.trace_batches.to_string());
        put("record_timing", self.record_timing.to_string());
        m
    }

    /// Serialize as a flat config file readable by [`parse_kv_text`].
    pub fn to_kv_text(&self) -> String {
        let raw = self.to_raw();
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&raw[*key]);
            out.push('\n');
        }
        out
    }
}

/// `⌊α·b⌋`, the size of the reuse set.
pub fn reuse_count(alpha: f64, batch: usize) -> usize {
    ((alpha * batch as f64).floor() as usize).min(batch)
}

// `{:?}` prints the shortest string that parses back to the same f64.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
