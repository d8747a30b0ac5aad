//! Experiment configuration: a flat JSON object holding every model
//! hyperparameter plus the dataset source, evaluation mode and output
//! directory. Unknown keys are rejected by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use wavebank::synth::SynthParams;
use wavebank::{EncoderMode, Error, ModelConfig};

/// Keys handled by [`ExperimentConfig`] itself; every other key belongs to
/// the model configuration.
const EXPERIMENT_KEYS: [&str; 4] = ["preset", "dataset", "eval", "out_dir"];

pub const PRESET_NAMES: [&str; 6] = [
    "house",
    "house-perturbed",
    "varied",
    "varied-perturbed",
    "proximal",
    "structural",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A named synthetic benchmark.
    Preset(String),
    /// A synthetic benchmark with explicit construction parameters.
    Synthetic(SynthParams),
    /// Explicit TSV paths.
    Files(FileDataset),
    /// A directory holding `edges.tsv`, `features.tsv` and optionally `labels.tsv`.
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDataset {
    pub edges: PathBuf,
    pub features: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

impl FileDataset {
    pub fn in_directory(dir: &Path) -> FileDataset {
        let labels = dir.join("labels.tsv");
        FileDataset {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.tsv"),
            labels: labels.exists().then_some(labels),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Cluster,
    Classify,
    #[default]
    Both,
    None,
}

impl EvalMode {
    pub fn clusters(self) -> bool {
        matches!(self, EvalMode::Cluster | EvalMode::Both)
    }

    pub fn classifies(self) -> bool {
        matches!(self, EvalMode::Classify | EvalMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub dataset: Option<DatasetSource>,
    pub eval: EvalMode,
    pub out_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub model: ModelConfig,
}

/// Settings pinned by a named preset. Synthetic presets train a dedicated
/// GCN per view on three filters and score clustering; `proximal` adds the
/// local adjacency to two filters and `structural` uses four filters, both
/// scored by the probe on a user-supplied dataset.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let synthetic = |dataset: &str| ExperimentConfig {
        preset: Some(name.to_string()),
        dataset: Some(DatasetSource::Preset(dataset.to_string())),
        eval: EvalMode::Cluster,
        out_dir: None,
        model: ModelConfig {
            k: 3,
            encoder_mode: EncoderMode::Dedicated,
            ..ModelConfig::default()
        },
    };
    let real = |k: usize, local: bool, mode: EncoderMode| ExperimentConfig {
        preset: Some(name.to_string()),
        dataset: None,
        eval: EvalMode::Classify,
        out_dir: None,
        model: ModelConfig {
            k,
            include_local_adjacency: local,
            encoder_mode: mode,
            ..ModelConfig::default()
        },
    };
    Some(match name {
        "house" | "house-perturbed" | "varied" | "varied-perturbed" => synthetic(name),
        "proximal" => real(2, true, EncoderMode::Shared),
        "structural" => real(4, false, EncoderMode::Dedicated),
        _ => return None,
    })
}

fn unknown_preset(name: &str) -> Error {
    Error::validation("preset", format!("unknown preset {name:?}; expected one of {PRESET_NAMES:?}"))
}

/// Pulls the offending key out of a serde error: the field path when there
/// is one, otherwise the name quoted in an "unknown field" message.
fn key_of(err: &serde_path_to_error::Error<serde_json::Error>, prefix: &str) -> String {
    let inner = err.inner().to_string();
    if let Some(rest) = inner.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            let mut path = err.path().to_string();
            let field = &rest[..end];
            // Newer path tracking already ends with the unknown field.
            if path == field || path.ends_with(&format!(".{field}")) {
                path.truncate(path.len() - field.len());
                path = path.trim_end_matches('.').to_string();
            }
            return match (prefix, path.as_str()) {
                ("", "." | "") => field.to_string(),
                ("", p) => format!("{p}.{field}"),
                (pre, "." | "") => format!("{pre}.{field}"),
                (pre, p) => format!("{pre}.{p}.{field}"),
            };
        }
    }
    let path = err.path().to_string();
    match (prefix, path.as_str()) {
        (pre, "." | "") => pre.to_string(),
        ("", p) => p.to_string(),
        (pre, p) => format!("{pre}.{p}"),
    }
}

fn decode<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T, Error> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let message = e.inner().to_string();
        Error::validation(key_of(&e, prefix), message)
    })
}

/// Builds a configuration from a parsed JSON object. `preset_override`
/// (from the command line) wins over a `"preset"` key in the object. Preset
/// values are applied first and explicit keys override them.
pub fn from_value(value: Value, preset_override: Option<&str>) -> Result<ExperimentConfig, Error> {
    let Value::Object(mut object) = value else {
        return Err(Error::validation("<root>", "configuration must be a JSON object"));
    };
    let named: Option<String> = match object.remove("preset") {
        None | Some(Value::Null) => None,
        Some(v) => Some(decode(v, "preset")?),
    };
    let name = preset_override.map(str::to_string).or(named);
    let mut config = match &name {
        Some(n) => preset(n).ok_or_else(|| unknown_preset(n))?,
        None => ExperimentConfig::default(),
    };

    if let Some(v) = object.remove("dataset") {
        config.dataset = decode(v, "dataset")?;
    }
    if let Some(v) = object.remove("eval") {
        config.eval = decode(v, "eval")?;
    }
    if let Some(v) = object.remove("out_dir") {
        config.out_dir = decode(v, "out_dir")?;
    }
    debug_assert!(EXPERIMENT_KEYS.iter().all(|k| !object.contains_key(*k)));

    let Value::Object(mut model) = serde_json::to_value(&config.model).map_err(Error::from)? else {
        unreachable!("ModelConfig serializes to an object");
    };
    model.extend(object);
    config.model = decode(Value::Object(model), "")?;
    config.model.validate()?;
    Ok(config)
}

pub fn from_str(text: &str, preset_override: Option<&str>) -> Result<ExperimentConfig, Error> {
    let value: Value = serde_json::from_str(text)?;
    from_value(value, preset_override)
}

/// Reads, fills and validates a configuration file.
pub fn load_config(path: &Path, preset_override: Option<&str>) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)?;
    from_str(&text, preset_override)
}

/// Re-validates after command-line overrides have been applied.
pub fn revalidate(config: &ExperimentConfig) -> Result<(), Error> {
    config.model.validate()
}

/// The echo written next to every run; loading it reproduces the run.
pub fn echo(config: &ExperimentConfig) -> Value {
    let mut value = serde_json::to_value(config).expect("configuration serializes");
    if let Value::Object(map) = &mut value {
        let sorted: Map<String, Value> = std::mem::take(map).into_iter().collect();
        *map = sorted;
    }
    value
}
