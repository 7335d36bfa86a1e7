//! Run configuration: a TOML file of `[section]` tables whose keys overlay the
//! built-in defaults, then `--set section.key=value` and named flags on top.

use std::path::Path;

use fiqa_core::degradations::Family;
use fiqa_core::dsl::EncoderConfig;
use fiqa_core::gfiqa::ModelConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const SECTIONS: [&str; 4] = ["data", "encoder", "model", "retrieval"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub size: usize,
    pub clean_fraction: f64,
    pub mos_noise: f64,
    /// Degradation families drawn for non-clean images.
    pub families: Vec<Family>,
    /// Capture-style pipeline instead of synthetic recipes for degraded images.
    pub real_style: bool,
    /// Held-out retrieval queries written next to the dataset; 0 disables.
    pub queries: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 500,
            size: 64,
            clean_fraction: 0.1,
            mos_noise: 0.02,
            families: Family::BENCHMARK.to_vec(),
            real_style: true,
            queries: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub retrieval: RetrievalConfig,
}

/// Raw key/value overrides per section, in the order they were given.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    sections: Vec<(String, toml::Table)>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let doc: toml::Table = text.parse().map_err(|e| CliError::Usage(format!("config syntax: {e}")))?;
        let mut out = Self::default();
        for (name, value) in doc {
            match value {
                toml::Value::Table(t) => out.push(&name, t)?,
                _ => return Err(CliError::Usage(format!("top-level key `{name}` must sit inside a [section]"))),
            }
        }
        Ok(out)
    }

    /// `section.key=value`, the value in TOML syntax (bare words are strings).
    pub fn push_assignment(&mut self, assignment: &str) -> Result<(), CliError> {
        let bad = || CliError::Usage(format!("`--set {assignment}`: expected section.key=value"));
        let (path, raw) = assignment.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        let raw = raw.trim();
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").ok_or_else(bad)?,
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut t = toml::Table::new();
        t.insert(key.to_string(), value);
        self.push(section, t)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<toml::Value>) {
        let mut t = toml::Table::new();
        t.insert(key.to_string(), value.into());
        self.sections.push((section.to_string(), t));
    }

    fn push(&mut self, section: &str, table: toml::Table) -> Result<(), CliError> {
        if !SECTIONS.contains(&section) {
            return Err(CliError::Usage(format!(
                "unknown config section `[{section}]` (expected one of {})",
                SECTIONS.join(", ")
            )));
        }
        self.sections.push((section.to_string(), table));
        Ok(())
    }

    pub fn extend(&mut self, other: Overrides) {
        self.sections.extend(other.sections);
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let base = RunConfig::default();
        let cfg = RunConfig {
            data: self.overlay("data", &base.data)?,
            encoder: self.overlay("encoder", &base.encoder)?,
            model: self.overlay("model", &base.model)?,
            retrieval: self.overlay("retrieval", &base.retrieval)?,
        };
        cfg.encoder.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if cfg.retrieval.k == 0 {
            return Err(CliError::Usage("retrieval.k must be positive".into()));
        }
        Ok(cfg)
    }

    fn overlay<T: Serialize + DeserializeOwned>(&self, section: &str, base: &T) -> Result<T, CliError> {
        let mut value = serde_json::to_value(base).expect("config serializes");
        let obj = value.as_object_mut().expect("config is a struct");
        for (name, table) in &self.sections {
            if name != section {
                continue;
            }
            for (k, v) in table {
                if !obj.contains_key(k) {
                    return Err(CliError::Usage(format!("unknown config key `{section}.{k}`")));
                }
                let v: Value = serde_json::to_value(v).map_err(|e| CliError::Usage(e.to_string()))?;
                obj.insert(k.clone(), v);
            }
        }
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("[{section}]: {e}")))
    }
}
