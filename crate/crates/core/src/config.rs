//! Run configuration.
//!
//! A run is described by one JSON document. Sections nest (`{"das": {"T": 3}}`)
//! and dotted keys are accepted anywhere a section is (`{"das.T": 3}`).
//! Missing keys take their defaults; unknown keys are rejected. Any key can be
//! overridden after loading with `key=value`, where the value is parsed as
//! JSON when possible and taken as a string otherwise.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::das::DasConfig;
use crate::dataset::{CsvSpec, GaussianSpec};
use crate::encoder::{Activation, OptimizerRule};
use crate::error::{DasError, Result};
use crate::losses::{LossKind, LossSpec};
use crate::sampling::{BatchSpec, Sampler, DISTANCE_CLIP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Gaussian,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    /// Generator seed; the run seed when absent.
    pub seed: Option<u64>,
    pub path: Option<String>,
    pub label_col: usize,
    pub header: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GaussianSpec::default();
        Self {
            source: DataSource::Gaussian,
            classes: g.classes,
            per_class: g.per_class,
            dim: g.dim,
            center_scale: g.center_scale,
            noise_sigma: g.noise_sigma,
            seed: None,
            path: None,
            label_col: 0,
            header: false,
        }
    }
}

impl DataConfig {
    pub fn gaussian(&self) -> GaussianSpec {
        GaussianSpec {
            classes: self.classes,
            per_class: self.per_class,
            dim: self.dim,
            center_scale: self.center_scale,
            noise_sigma: self.noise_sigma,
        }
    }

    pub fn csv(&self) -> Result<CsvSpec> {
        let path = self
            .path
            .clone()
            .ok_or_else(|| DasError::InvalidConfig("data.path is required for csv data".into()))?;
        Ok(CsvSpec {
            path,
            label_col: self.label_col,
            header: self.header,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    /// Embedding dimension.
    pub dim: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            dim: 16,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Window width of the semi-hard sampler.
    pub semihard_margin: f64,
    /// Lower distance clip of the distance-weighted sampler.
    pub distance_clip: f64,
    /// Whether produced embeddings may act as anchors.
    pub produced_as_anchors: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            semihard_margin: 0.2,
            distance_clip: DISTANCE_CLIP,
            produced_as_anchors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub rule: OptimizerRule,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            rule: OptimizerRule::Adam,
            lr: 1e-3,
            momentum: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub kmeans_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 4, 8],
            kmeans_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub steps: usize,
    /// Evaluate every this many steps (and always after the last step).
    pub eval_interval: usize,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub batch: BatchSpec,
    pub loss: LossSpec,
    pub sampler: Sampler,
    pub sampling: SamplingConfig,
    pub das: DasConfig,
    pub optimizer: OptimizerConfig,
    pub eval: EvalConfig,
    pub output_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            steps: 300,
            eval_interval: 100,
            data: DataConfig::default(),
            encoder: EncoderConfig::default(),
            batch: BatchSpec::default(),
            loss: LossSpec::default(),
            sampler: Sampler::Distance,
            sampling: SamplingConfig::default(),
            das: DasConfig::default(),
            optimizer: OptimizerConfig::default(),
            eval: EvalConfig::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Parses a config document on top of the defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| DasError::InvalidConfig(format!("config is not valid JSON: {e}")))?;
        Self::default().merged(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| DasError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Deep-merges `doc` (nested and/or dotted keys) into this config.
    pub fn merged(&self, doc: Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        let Value::Object(obj) = doc else {
            return Err(DasError::InvalidConfig("config must be a JSON object".into()));
        };
        merge_object(&mut base, obj)?;
        let cfg: RunConfig =
            serde_json::from_value(base).map_err(|e| DasError::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| DasError::InvalidConfig(format!("override {assignment:?} is not key=value")))?;
        self.with_value(key.trim(), parse_value(raw.trim()))
    }

    pub fn with_value(&self, key: &str, value: Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        set_path(&mut base, key, value)?;
        serde_json::from_value(base).map_err(|e| DasError::InvalidConfig(format!("{key}: {e}")))
    }

    pub fn with_overrides<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Self> {
        assignments
            .iter()
            .try_fold(self.clone(), |cfg, a| cfg.with_override(a.as_ref()))
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_interval == 0 {
            return Err(DasError::InvalidConfig("eval_interval must be >= 1".into()));
        }
        if self.encoder.dim == 0 || self.encoder.hidden.contains(&0) {
            return Err(DasError::InvalidConfig("encoder sizes must be positive".into()));
        }
        if !(self.optimizer.lr > 0.0) || !self.optimizer.lr.is_finite() {
            return Err(DasError::InvalidConfig("optimizer.lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return Err(DasError::InvalidConfig("optimizer.momentum must be in [0, 1)".into()));
        }
        self.batch.validate()?;
        self.loss.validate()?;
        if self.das.enabled {
            self.das.validate(self.encoder.dim)?;
        }
        let pair_loss = matches!(self.loss.kind, LossKind::Contrastive | LossKind::Margin);
        if self.sampler == Sampler::All && !pair_loss && self.loss.kind != LossKind::MultiSimilarity {
            return Err(DasError::InvalidConfig(
                "sampler \"all\" only applies to contrastive and margin losses".into(),
            ));
        }
        if !(self.sampling.semihard_margin > 0.0) || !(self.sampling.distance_clip >= 0.0) {
            return Err(DasError::InvalidConfig("sampling margins must be positive".into()));
        }
        if self.data.source == DataSource::Csv {
            self.data.csv()?;
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(DasError::InvalidConfig("eval.ks must be non-empty and >= 1".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn merge_object(base: &mut Value, obj: Map<String, Value>) -> Result<()> {
    for (key, value) in obj {
        match value {
            Value::Object(inner) if !key.contains('.') => {
                let slot = descend(base, &key)?;
                if slot.is_object() {
                    merge_object(slot, inner)?;
                } else {
                    *slot = Value::Object(inner);
                }
            }
            other => set_path(base, &key, other)?,
        }
    }
    Ok(())
}

fn descend<'a>(base: &'a mut Value, key: &str) -> Result<&'a mut Value> {
    let Value::Object(map) = base else {
        return Err(DasError::InvalidConfig(format!("cannot set {key:?} inside a non-object")));
    };
    Ok(map.entry(key.to_string()).or_insert(Value::Null))
}

fn set_path(base: &mut Value, dotted: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(DasError::InvalidConfig(format!("bad config key {dotted:?}")));
    }
    let mut cur = base;
    for p in &parts[..parts.len() - 1] {
        cur = descend(cur, p)?;
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
    }
    let last = descend(cur, parts[parts.len() - 1])?;
    match (last, value) {
        (slot @ Value::Object(_), Value::Object(inner)) => merge_object(slot, inner),
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}
