//! Run configuration: one JSON document, defaults for missing keys, and
//! dotted command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sidesense_core::data::{angle_slot, GeneratorConfig};
use sidesense_core::fusion::FusionConfig;
use sidesense_core::graph::GraphConfig;
use sidesense_core::model::ModelConfig;
use sidesense_core::neuro::EncoderConfig;
use sidesense_core::preprocess::PreprocessConfig;
use sidesense_core::sim::RandomScenarioConfig;
use sidesense_core::train::{FederatedConfig, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub trials: usize,
    pub batch_size: usize,
    /// Angle subset used by `evaluate` when `--angles` is not given.
    pub angles: Option<Vec<u16>>,
    pub pairs: Vec<[u16; 2]>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            batch_size: 32,
            angles: None,
            pairs: vec![[0, 45], [90, 135], [180, 225], [270, 315]],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Scenario file; a random scenario is drawn when absent.
    pub scenario: Option<PathBuf>,
    pub random: RandomScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for preprocessing, model initialisation, evaluation
    /// protocols and random scenarios.
    pub seed: u64,
    pub output: PathBuf,
    pub threads: Option<usize>,
    pub dataset: GeneratorConfig,
    pub preprocess: PreprocessConfig,
    pub graph: GraphConfig,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub federated: FederatedConfig,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output: PathBuf::from("runs/default"),
            threads: None,
            dataset: GeneratorConfig::default(),
            preprocess: PreprocessConfig::default(),
            graph: GraphConfig::default(),
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            federated: FederatedConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            graph: self.graph,
            encoder: self.encoder.clone(),
            fusion: self.fusion.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset.validate()?;
        self.preprocess.validate()?;
        self.model().validate()?;
        self.train.validate()?;
        self.federated.validate()?;
        if self.eval.trials == 0 || self.eval.batch_size == 0 {
            return Err(CliError::Config("eval.trials and eval.batch_size must be at least 1".into()));
        }
        let angles = self.eval.angles.iter().flatten();
        let paired = self.eval.pairs.iter().flatten();
        if let Some(a) = angles.chain(paired).find(|a| angle_slot(**a).is_none()) {
            return Err(CliError::Config(format!("unsupported angle {a} in eval section")));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Reads `path` (or the defaults), applies `overrides` and validates.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                let parsed: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::to_value(parsed).expect("config serializes")
            }
            None => serde_json::to_value(RunConfig::default()).expect("config serializes"),
        };
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets the dotted `key` in `root`. The value is parsed as JSON, falling
/// back to a plain string. Every path segment must already exist.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {} is not a section", segments[..i].join("."))))?;
        let slot = obj
            .get_mut(*seg)
            .ok_or_else(|| CliError::Config(format!("unknown config key {key}")))?;
        if i + 1 == segments.len() {
            *slot = parsed;
            return Ok(());
        }
        node = slot;
    }
    Err(CliError::Config(format!("empty config key {key:?}")))
}

/// Splits `--section.key value` and `--section.key=value` pairs off the
/// argument list. A flag is an override when its name contains a dot.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::Config(format!("--{name} needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}
