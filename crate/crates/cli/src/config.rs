//! Run configuration: a flat JSON object with dotted keys, overridable from
//! the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use convact_core::eval::{AblationConfig, SplitLevel, Task};
use convact_core::features::{ChannelCombo, DEFAULT_MAX_LEN};
use convact_core::model::AdnnConfig;
use convact_core::pipeline::ActSource;
use serde_json::{json, Value};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Vec<PathBuf>,
    pub task: Task,
    pub channels: ChannelCombo,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub jobs: usize,
    pub hidden_units: usize,
    pub attention_dim: usize,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub post_attention_dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub annotations: Option<PathBuf>,
    pub encoder: String,
    pub encoder_width: usize,
    pub max_len: usize,
    pub split_ratio: f64,
    pub split_level: SplitLevel,
    pub act_source: ActSource,
    pub speech_channels: ChannelCombo,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = AdnnConfig::new(2, ChannelCombo::FULL);
        let ablation = AblationConfig::new(Task::Speech);
        RunConfig {
            corpus: Vec::new(),
            task: Task::Speech,
            channels: ChannelCombo::FULL,
            seeds: ablation.seeds,
            output: PathBuf::from("out"),
            jobs: 0,
            hidden_units: model.hidden_units,
            attention_dim: model.attention_dim,
            dropout: model.dropout,
            recurrent_dropout: model.recurrent_dropout,
            post_attention_dropout: model.post_attention_dropout,
            learning_rate: model.learning_rate,
            batch_size: model.batch_size,
            epochs: model.epochs,
            seed: model.seed,
            annotations: None,
            encoder: "none".into(),
            encoder_width: 8,
            max_len: DEFAULT_MAX_LEN,
            split_ratio: ablation.split_ratio,
            split_level: ablation.split_level,
            act_source: ablation.act_source,
            speech_channels: ablation.speech_channels,
        }
    }
}

/// Parses `1..30` (inclusive), `1,2,7`, a single integer, or a mix such as
/// `1..3,10`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, UsageError> {
    let bad = || UsageError(format!("invalid seed list `{text}` (expected e.g. 1..30 or 1,2,3)"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
                let hi: u64 = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
                if hi < lo {
                    return Err(bad());
                }
                seeds.extend(lo..=hi);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn as_string(key: &str, v: &Value) -> Result<String, UsageError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(UsageError(format!("`{key}` expects a string"))),
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, UsageError> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| UsageError(format!("`{key}` expects a number")))
}

fn as_usize(key: &str, v: &Value) -> Result<usize, UsageError> {
    match v {
        Value::Number(n) => n.as_u64().map(|n| n as usize),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| UsageError(format!("`{key}` expects a non-negative integer")))
}

fn parsed<T: std::str::FromStr>(key: &str, v: &Value) -> Result<T, UsageError>
where
    T::Err: std::fmt::Display,
{
    as_string(key, v)?.parse().map_err(|e| UsageError(format!("`{key}`: {e}")))
}

fn combo(key: &str, v: &Value) -> Result<ChannelCombo, UsageError> {
    let c: ChannelCombo = parsed(key, v)?;
    if c.is_empty() {
        return Err(UsageError(format!("`{key}` must name at least one channel")));
    }
    Ok(c)
}

impl RunConfig {
    pub const KEYS: [&'static str; 23] = [
        "corpus",
        "task",
        "channels",
        "seeds",
        "output",
        "jobs",
        "model.hidden_units",
        "model.attention_dim",
        "model.dropout",
        "model.recurrent_dropout",
        "model.post_attention_dropout",
        "model.learning_rate",
        "model.batch_size",
        "model.epochs",
        "model.seed",
        "provider.annotations",
        "provider.encoder",
        "provider.encoder_width",
        "provider.max_len",
        "split.ratio",
        "split.level",
        "pipeline.act_source",
        "pipeline.speech_channels",
    ];

    pub fn from_file(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: invalid JSON: {e}", path.display())))?;
        let Value::Object(map) = value else {
            return Err(UsageError(format!("{}: expected a JSON object", path.display())));
        };
        let mut config = RunConfig::default();
        for (key, v) in &map {
            config.set(key, v)?;
        }
        Ok(config)
    }

    /// Applies one `key=value` override; the value is read as JSON when it
    /// parses, otherwise as a bare string.
    pub fn set_str(&mut self, assignment: &str) -> Result<(), UsageError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| UsageError(format!("expected key=value, got `{assignment}`")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key.trim(), &value)
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), UsageError> {
        match key {
            "corpus" => {
                self.corpus = match v {
                    Value::Array(items) => items.iter().map(|i| as_string(key, i).map(PathBuf::from)).collect::<Result<_, _>>()?,
                    other => vec![PathBuf::from(as_string(key, other)?)],
                }
            }
            "task" => self.task = parsed(key, v)?,
            "channels" => self.channels = combo(key, v)?,
            "seeds" => {
                self.seeds = match v {
                    Value::Array(items) => items
                        .iter()
                        .map(|i| i.as_u64().ok_or_else(|| UsageError("`seeds` entries must be integers".into())))
                        .collect::<Result<_, _>>()?,
                    Value::Number(n) => vec![n.as_u64().ok_or_else(|| UsageError("`seeds` must be non-negative".into()))?],
                    other => parse_seeds(&as_string(key, other)?)?,
                }
            }
            "output" => self.output = PathBuf::from(as_string(key, v)?),
            "jobs" => self.jobs = as_usize(key, v)?,
            "model.hidden_units" => self.hidden_units = as_usize(key, v)?,
            "model.attention_dim" => self.attention_dim = as_usize(key, v)?,
            "model.dropout" => self.dropout = as_f64(key, v)?,
            "model.recurrent_dropout" => self.recurrent_dropout = as_f64(key, v)?,
            "model.post_attention_dropout" => self.post_attention_dropout = as_f64(key, v)?,
            "model.learning_rate" => self.learning_rate = as_f64(key, v)?,
            "model.batch_size" => self.batch_size = as_usize(key, v)?,
            "model.epochs" => self.epochs = as_usize(key, v)?,
            "model.seed" => self.seed = as_usize(key, v)? as u64,
            "provider.annotations" => {
                self.annotations = match v {
                    Value::Null => None,
                    other => Some(PathBuf::from(as_string(key, other)?)),
                }
            }
            "provider.encoder" => self.encoder = as_string(key, v)?,
            "provider.encoder_width" => self.encoder_width = as_usize(key, v)?,
            "provider.max_len" => self.max_len = as_usize(key, v)?,
            "split.ratio" => self.split_ratio = as_f64(key, v)?,
            "split.level" => self.split_level = parsed(key, v)?,
            "pipeline.act_source" => self.act_source = parsed(key, v)?,
            "pipeline.speech_channels" => self.speech_channels = combo(key, v)?,
            other => {
                return Err(UsageError(format!(
                    "unknown config key `{other}` (known keys: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// The flat dotted-key form, as written to run manifests.
    pub fn to_flat(&self) -> BTreeMap<&'static str, Value> {
        let path = |p: &Path| p.display().to_string();
        let values = [
            json!(self.corpus.iter().map(|p| path(p)).collect::<Vec<_>>()),
            json!(self.task.name()),
            json!(self.channels.to_string()),
            json!(self.seeds),
            json!(path(&self.output)),
            json!(self.jobs),
            json!(self.hidden_units),
            json!(self.attention_dim),
            json!(self.dropout),
            json!(self.recurrent_dropout),
            json!(self.post_attention_dropout),
            json!(self.learning_rate),
            json!(self.batch_size),
            json!(self.epochs),
            json!(self.seed),
            json!(self.annotations.as_deref().map(path)),
            json!(self.encoder),
            json!(self.encoder_width),
            json!(self.max_len),
            json!(self.split_ratio),
            json!(match self.split_level {
                SplitLevel::Instance => "instance",
                SplitLevel::Session => "session",
            }),
            json!(self.act_source.to_string()),
            json!(self.speech_channels.to_string()),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    /// Model hyperparameters for `task` over `channels`.
    pub fn model(&self, n_classes: usize, channels: ChannelCombo) -> AdnnConfig {
        AdnnConfig {
            hidden_units: self.hidden_units,
            attention_dim: self.attention_dim,
            dropout: self.dropout,
            recurrent_dropout: self.recurrent_dropout,
            post_attention_dropout: self.post_attention_dropout,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            ..AdnnConfig::new(n_classes, channels)
        }
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            model: self.model(self.task.n_classes(), self.channels),
            seeds: self.seeds.clone(),
            combos: self.channels.subsets(),
            split_ratio: self.split_ratio,
            split_level: self.split_level,
            act_source: self.act_source,
            speech_channels: self.speech_channels,
            jobs: self.jobs,
        }
    }
}
