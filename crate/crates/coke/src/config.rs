//! Flat key=value run configuration. Every model, trainer, and sampler
//! field is addressable by its exact name; command-line flags override file
//! values, and the fully resolved set is echoed into the run manifest so a
//! run can be reproduced from the manifest alone.

use crate::error::{CokeError, Result};
use crate::model::ModelConfig;
use crate::sampler::{SamplerConfig, WalkScope};
use crate::train::{SelectionMetric, TrainConfig};
use std::collections::BTreeMap;

/// Ordered key=value pairs; later assignments win.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

pub const KNOWN_KEYS: &[&str] = &[
    // model
    "blocks",
    "heads",
    "hidden_size",
    "ffn_size",
    "max_seq_len",
    "dropout",
    "label_smoothing",
    "entity_count",
    "relation_count",
    // trainer
    "learning_rate",
    "batch_size",
    "max_epochs",
    "warmup_fraction",
    "dropout_grid",
    "label_smoothing_grid",
    "selection_metric",
    "seed",
    "grad_clip",
    // sampler
    "num_paths",
    "min_len",
    "max_len",
    "scope",
];

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CokeError::Malformed {
                file: "<config>".into(),
                line: lineno + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            kv.set(key.trim(), value.trim())?;
        }
        Ok(kv)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(CokeError::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, current: T) -> Result<T> {
        match self.get(key) {
            None => Ok(current),
            Some(raw) => raw
                .parse()
                .map_err(|_| CokeError::Config(format!("bad value `{raw}` for `{key}`"))),
        }
    }

    fn parse_list(&self, key: &str, current: Vec<f64>) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(current),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| CokeError::Config(format!("bad value `{raw}` for `{key}`")))
                })
                .collect(),
        }
    }

    /// Canonical sorted key=value text, for hashing and the manifest echo.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Fully resolved settings for one run. Vocabulary counts stay zero until a
/// dataset is loaded.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
}

impl RunSettings {
    /// Edge-task defaults overlaid with the provided keys.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut model = ModelConfig::edges(0, 0);
        model.entity_count = kv.parse_as("entity_count", model.entity_count)?;
        model.relation_count = kv.parse_as("relation_count", model.relation_count)?;
        model.blocks = kv.parse_as("blocks", model.blocks)?;
        model.heads = kv.parse_as("heads", model.heads)?;
        model.hidden_size = kv.parse_as("hidden_size", model.hidden_size)?;
        model.ffn_size = kv.parse_as("ffn_size", model.ffn_size)?;
        model.max_seq_len = kv.parse_as("max_seq_len", model.max_seq_len)?;
        model.dropout = kv.parse_as("dropout", model.dropout)?;
        model.label_smoothing = kv.parse_as("label_smoothing", model.label_smoothing)?;

        let mut train = TrainConfig::default();
        train.learning_rate = kv.parse_as("learning_rate", train.learning_rate)?;
        train.batch_size = kv.parse_as("batch_size", train.batch_size)?;
        train.max_epochs = kv.parse_as("max_epochs", train.max_epochs)?;
        train.warmup_fraction = kv.parse_as("warmup_fraction", train.warmup_fraction)?;
        train.dropout_grid = kv.parse_list("dropout_grid", train.dropout_grid)?;
        train.label_smoothing_grid =
            kv.parse_list("label_smoothing_grid", train.label_smoothing_grid)?;
        if let Some(metric) = kv.get("selection_metric") {
            train.selection_metric = metric.parse()?;
        }
        train.seed = kv.parse_as("seed", train.seed)?;
        train.grad_clip = match kv.get("grad_clip") {
            None | Some("none") | Some("") => None,
            Some(raw) => Some(raw.parse().map_err(|_| {
                CokeError::Config(format!("bad value `{raw}` for `grad_clip`"))
            })?),
        };

        let mut sampler = SamplerConfig {
            seed: train.seed,
            ..SamplerConfig::default()
        };
        sampler.num_paths = kv.parse_as("num_paths", sampler.num_paths)?;
        sampler.min_len = kv.parse_as("min_len", sampler.min_len)?;
        sampler.max_len = kv.parse_as("max_len", sampler.max_len)?;
        if let Some(scope) = kv.get("scope") {
            sampler.scope = match scope {
                "train" => WalkScope::Train,
                "train_and_test" => WalkScope::TrainAndTest,
                other => {
                    return Err(CokeError::Config(format!(
                        "scope `{other}` is neither `train` nor `train_and_test`"
                    )))
                }
            };
        }
        Ok(RunSettings {
            model,
            train,
            sampler,
        })
    }

    /// Every field written back out by exact name.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        let mut put = |k: &str, v: String| {
            kv.values.insert(k.to_string(), v);
        };
        put("blocks", self.model.blocks.to_string());
        put("heads", self.model.heads.to_string());
        put("hidden_size", self.model.hidden_size.to_string());
        put("ffn_size", self.model.ffn_size.to_string());
        put("max_seq_len", self.model.max_seq_len.to_string());
        put("dropout", self.model.dropout.to_string());
        put("label_smoothing", self.model.label_smoothing.to_string());
        put("entity_count", self.model.entity_count.to_string());
        put("relation_count", self.model.relation_count.to_string());
        put("learning_rate", self.train.learning_rate.to_string());
        put("batch_size", self.train.batch_size.to_string());
        put("max_epochs", self.train.max_epochs.to_string());
        put("warmup_fraction", self.train.warmup_fraction.to_string());
        put(
            "dropout_grid",
            self.train
                .dropout_grid
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put(
            "label_smoothing_grid",
            self.train
                .label_smoothing_grid
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put(
            "selection_metric",
            match self.train.selection_metric {
                SelectionMetric::Mrr => "mrr".into(),
                SelectionMetric::Mq => "mq".into(),
            },
        );
        put("seed", self.train.seed.to_string());
        put(
            "grad_clip",
            match self.train.grad_clip {
                Some(v) => v.to_string(),
                None => "none".into(),
            },
        );
        put("num_paths", self.sampler.num_paths.to_string());
        put("min_len", self.sampler.min_len.to_string());
        put("max_len", self.sampler.max_len.to_string());
        put(
            "scope",
            match self.sampler.scope {
                WalkScope::Train => "train".into(),
                WalkScope::TrainAndTest => "train_and_test".into(),
            },
        );
        kv
    }
}
