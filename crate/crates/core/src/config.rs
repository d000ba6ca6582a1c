//! Run configuration: a flat `key = value` file format, programmatic
//! overrides, and derived sub-seeds.
//!
//! One master seed drives every random choice in a run. Independent
//! consumers (scenario generation, parameter init, epoch shuffling) each
//! get a sub-seed derived from the master seed and a role name, so adding
//! a consumer never shifts the stream seen by another.

use crate::data::{ScenarioKind, ScenarioSpec};
use crate::model::ModelDims;
use crate::{Error, Result};
use std::path::Path;

/// Every knob a command reads, with the documented defaults.
///
/// `mode` stays a raw string here because its admissible values differ by
/// command: training accepts a single method name, evaluation a comma
/// list. Empty selects the command's own default (train: `full`,
/// evaluation: every standard method).
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: String,
    /// Observed prefix length, frames.
    pub t_obs: usize,
    /// Total window length, frames.
    pub t_pred: usize,
    /// Spatial edge radius in normalized units; infinite keeps all pairs.
    pub radius: f64,
    /// Window start spacing when slicing a recording.
    pub stride: usize,
    pub dims: ModelDims,
    /// Use one summary-node parameter set for all categories.
    pub shared_summary: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Gradients are clamped to `[-clip, clip]` elementwise.
    pub clip: f64,
    pub epochs: usize,
    pub decay_factor: f64,
    /// Epochs between learning-rate staircase drops.
    pub decay_every: usize,
    /// Worker threads for per-window gradient evaluation; 0 = all cores.
    pub workers: usize,
    /// Epochs between checkpoint saves; the final epoch is always saved.
    pub checkpoint_every: usize,
    pub scenario: ScenarioSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            mode: String::new(),
            t_obs: 5,
            t_pred: 13,
            radius: f64::INFINITY,
            stride: 1,
            dims: ModelDims::default(),
            shared_summary: false,
            learning_rate: 0.001,
            batch_size: 8,
            clip: 10.0,
            epochs: 50,
            decay_factor: 0.95,
            decay_every: 5,
            workers: 0,
            checkpoint_every: 10,
            scenario: ScenarioSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads a flat `key = value` file. Blank lines and lines starting with
    /// `#` are skipped. Later assignments override earlier ones.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `key = value`, got {line:?}"),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
        }
        Ok(())
    }

    /// Applies one `key = value` assignment. Unknown keys are configuration
    /// errors so typos fail loudly instead of silently using a default.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "mode" => self.mode = value.to_string(),
            "t_obs" => self.t_obs = parse_num(key, value)?,
            "t_pred" => self.t_pred = parse_num(key, value)?,
            "radius" => {
                self.radius =
                    if value == "inf" { f64::INFINITY } else { parse_num(key, value)? };
            }
            "stride" => self.stride = parse_num(key, value)?,
            "embed_dim" => self.dims.embed = parse_num(key, value)?,
            "edge_hidden" => self.dims.edge_hidden = parse_num(key, value)?,
            "node_hidden" => self.dims.node_hidden = parse_num(key, value)?,
            "attention_dim" => self.dims.attention = parse_num(key, value)?,
            "shared_summary" => self.shared_summary = parse_bool(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "clip" => self.clip = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "decay_factor" => self.decay_factor = parse_num(key, value)?,
            "decay_every" => self.decay_every = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "scenario" => self.scenario.kind = ScenarioKind::parse(value)?,
            "vehicles" => self.scenario.vehicles = parse_num(key, value)?,
            "bicycles" => self.scenario.bicycles = parse_num(key, value)?,
            "pedestrians" => self.scenario.pedestrians = parse_num(key, value)?,
            "frame_rate_hz" => self.scenario.frame_rate_hz = parse_num(key, value)?,
            "duration_s" => self.scenario.duration_s = parse_num(key, value)?,
            "noise_std" => self.scenario.noise_std = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown configuration key {other:?}")))
            }
        }
        Ok(())
    }

    /// Cross-field checks shared by all commands.
    pub fn validate(&self) -> Result<()> {
        if self.t_obs < 1 {
            return Err(Error::Config("t_obs must be at least 1".into()));
        }
        if self.t_obs >= self.t_pred {
            return Err(Error::Config(format!(
                "t_obs ({}) must be smaller than t_pred ({})",
                self.t_obs, self.t_pred
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if self.stride < 1 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        self.dims.validate()?;
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !self.clip.is_finite() || self.clip <= 0.0 {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every < 1 {
            return Err(Error::Config("decay_every must be at least 1".into()));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        self.scenario.validate()?;
        if self.scenario.frame_count() < self.t_pred {
            return Err(Error::Config(format!(
                "scenario produces {} frames, fewer than t_pred = {}",
                self.scenario.frame_count(),
                self.t_pred
            )));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value {value:?} for key {key:?} (expected true or false)"
        ))),
    }
}

/// Derives an independent seed for a named random stream.
///
/// The role name is hashed with FNV-1a, mixed into the master seed, and
/// finished with a SplitMix64 scramble so nearby master seeds and similar
/// role names both produce unrelated outputs.
pub fn sub_seed(seed: u64, role: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in role.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
