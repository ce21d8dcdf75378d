use serde::Deserialize;

use crate::error::{Error, Result};

/// Slack for products like `R * (n + gamma)` that should land on an integer.
const ROUND_EPS: f64 = 1e-9;

/// Per-pass compression ratio `max(floor, r_init - alpha * min(steps, i))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSchedule {
    r_init: f64,
    alpha: f64,
    steps: usize,
    floor: f64,
}

impl RatioSchedule {
    pub const DEFAULT_FLOOR: f64 = 0.05;

    pub fn new(r_init: f64, alpha: f64, steps: usize, floor: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&floor) {
            return Err(Error::config(format!(
                "ratio floor must lie in [0, 0.5], got {floor}"
            )));
        }
        if !r_init.is_finite() || !alpha.is_finite() {
            return Err(Error::config("ratio schedule parameters must be finite"));
        }
        let s = RatioSchedule {
            r_init,
            alpha,
            steps,
            floor,
        };
        // the sequence is constant past `steps`, so checking 0..=steps covers all i
        for i in 0..=steps {
            let r = s.ratio(i);
            if !(0.0..=0.5).contains(&r) {
                return Err(Error::config(format!(
                    "ratio schedule yields r = {r} at step {i}, outside [0, 0.5]"
                )));
            }
        }
        Ok(s)
    }

    pub fn constant(r: f64) -> Result<Self> {
        RatioSchedule::new(r, 0.0, 0, 0.0)
    }

    /// r_init 0.45, alpha 0.05, 3 decreasing steps.
    pub fn llama2() -> Self {
        RatioSchedule::new(0.45, 0.05, 3, Self::DEFAULT_FLOOR).unwrap()
    }

    /// r_init 0.35, alpha 0.1, 2 decreasing steps.
    pub fn llama3() -> Self {
        RatioSchedule::new(0.35, 0.1, 2, Self::DEFAULT_FLOOR).unwrap()
    }

    /// r_init 0.2, alpha 0.1, 2 decreasing steps; reaches zero without the floor.
    pub fn qwen() -> Self {
        RatioSchedule::new(0.2, 0.1, 2, Self::DEFAULT_FLOOR).unwrap()
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "llama2" => Some(Self::llama2()),
            "llama3" => Some(Self::llama3()),
            "qwen" => Some(Self::qwen()),
            _ => None,
        }
    }

    pub fn ratio(&self, step: usize) -> f64 {
        let r = self.r_init - self.alpha * step.min(self.steps) as f64;
        r.max(self.floor)
    }

    pub fn r_init(&self) -> f64 {
        self.r_init
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

pub fn schedule_ratio(schedule: &RatioSchedule, step: usize) -> f64 {
    schedule.ratio(step)
}

/// Every tunable of the compressed-cache pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionConfig {
    /// Fraction of `prompt + max_decode` tokens the cache may hold.
    pub cache_ratio: f64,
    pub max_decode: usize,
    /// Leading rows never compressed.
    pub sinks: usize,
    /// Trailing rows never compressed.
    pub recent: usize,
    /// Decode steps allowed past the budget before compressing again.
    pub interval: usize,
    pub chunk_size: usize,
    pub schedule: RatioSchedule,
    pub head_count: usize,
    pub outlier_ratio: f64,
    /// Attention scale dimension; the key width when unset.
    pub head_dim: Option<usize>,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            cache_ratio: 0.2,
            max_decode: 0,
            sinks: 16,
            recent: 64,
            interval: 32,
            chunk_size: 256,
            schedule: RatioSchedule::llama2(),
            head_count: 1,
            outlier_ratio: 0.04,
            head_dim: None,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cache_ratio > 0.0 && self.cache_ratio <= 1.0) {
            return Err(Error::config(format!(
                "cache_ratio must lie in (0, 1], got {}",
                self.cache_ratio
            )));
        }
        if self.interval == 0 {
            return Err(Error::config("interval must be at least 1"));
        }
        if self.chunk_size < 2 {
            return Err(Error::config("chunk_size must be at least 2"));
        }
        if self.head_count == 0 {
            return Err(Error::config("head count must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return Err(Error::config(format!(
                "outlier_ratio must lie in [0, 1), got {}",
                self.outlier_ratio
            )));
        }
        if self.head_dim == Some(0) {
            return Err(Error::config("head_dim must be positive"));
        }
        Ok(())
    }

    /// Smallest budget that leaves at least two compressible rows.
    pub fn min_budget(&self) -> usize {
        self.sinks + self.recent + 2
    }

    /// `floor(cache_ratio * (prompt_len + max_decode))`, checked against [`Self::min_budget`].
    pub fn budget(&self, prompt_len: usize) -> Result<usize> {
        self.validate()?;
        let b =
            (self.cache_ratio * (prompt_len + self.max_decode) as f64 + ROUND_EPS).floor() as usize;
        if b < self.min_budget() {
            return Err(Error::config(format!(
                "budget {b} is below sinks + recent + 2 = {}",
                self.min_budget()
            )));
        }
        Ok(b)
    }

    pub fn scale_dim(&self, key_dim: usize) -> usize {
        self.head_dim.unwrap_or(key_dim)
    }

    /// Parses the flat `key = value` config format (TOML syntax, no tables).
    pub fn from_config_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)
            .map_err(|e| Error::config(format!("config parse: {}", e.message())))?;
        raw.into_config()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    cache_ratio: Option<f64>,
    max_decode: Option<usize>,
    sinks: Option<usize>,
    recent: Option<usize>,
    interval: Option<usize>,
    chunk_size: Option<usize>,
    heads: Option<usize>,
    outlier_ratio: Option<f64>,
    head_dim: Option<usize>,
    schedule: Option<String>,
    r_init: Option<f64>,
    alpha: Option<f64>,
    decay_steps: Option<usize>,
    ratio_floor: Option<f64>,
}

impl RawConfig {
    fn into_config(self) -> Result<CompressionConfig> {
        let d = CompressionConfig::default();
        let schedule = match self.schedule.as_deref().unwrap_or("llama2") {
            "custom" => {
                let (Some(r_init), Some(alpha), Some(steps)) =
                    (self.r_init, self.alpha, self.decay_steps)
                else {
                    return Err(Error::config(
                        "custom schedule needs r_init, alpha and decay_steps",
                    ));
                };
                RatioSchedule::new(
                    r_init,
                    alpha,
                    steps,
                    self.ratio_floor.unwrap_or(RatioSchedule::DEFAULT_FLOOR),
                )?
            }
            name => {
                let Some(p) = RatioSchedule::preset(name) else {
                    return Err(Error::config(format!("unknown schedule preset {name:?}")));
                };
                if self.r_init.is_some() || self.alpha.is_some() || self.decay_steps.is_some() {
                    return Err(Error::config(
                        "r_init/alpha/decay_steps apply only to schedule = \"custom\"",
                    ));
                }
                match self.ratio_floor {
                    Some(f) => RatioSchedule::new(p.r_init, p.alpha, p.steps, f)?,
                    None => p,
                }
            }
        };
        let cfg = CompressionConfig {
            cache_ratio: self.cache_ratio.unwrap_or(d.cache_ratio),
            max_decode: self.max_decode.unwrap_or(d.max_decode),
            sinks: self.sinks.unwrap_or(d.sinks),
            recent: self.recent.unwrap_or(d.recent),
            interval: self.interval.unwrap_or(d.interval),
            chunk_size: self.chunk_size.unwrap_or(d.chunk_size),
            schedule,
            head_count: self.heads.unwrap_or(d.head_count),
            outlier_ratio: self.outlier_ratio.unwrap_or(d.outlier_ratio),
            head_dim: self.head_dim.or(d.head_dim),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
