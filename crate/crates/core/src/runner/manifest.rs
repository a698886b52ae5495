//! Run manifest: the resolved config, seed scheme, timing and output digests.

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use super::config::{parse_config, ExperimentConfig};
use super::OutputFile;
use crate::error::{Error, Result};
use crate::seed::SEED_DERIVATION_ID;

pub const MANIFEST_FILE: &str = "manifest.toml";

const SEED_SCHEME: &str = "state = mix(master, [0, operator, state]); \
operator = mix(master, [1, operator]); auxiliary = mix(master, [2, tag]); \
mix folds each word into a splitmix64 state";

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub seed_derivation: String,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
    /// `(file name, SHA-256 hex)` in write order.
    pub outputs: Vec<(String, String)>,
    pub notes: Table,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(config: ExperimentConfig, seconds: f64, files: &[OutputFile], notes: Table) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed_derivation: SEED_DERIVATION_ID.to_string(),
            wall_clock_seconds: seconds,
            config,
            outputs: files
                .iter()
                .map(|f| (f.name.clone(), sha256_hex(f.contents.as_bytes())))
                .collect(),
            notes,
        }
    }

    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("version".into(), Value::String(self.version.clone()));
        root.insert("seed_derivation".into(), Value::String(self.seed_derivation.clone()));
        root.insert("seed_scheme".into(), Value::String(SEED_SCHEME.into()));
        root.insert("wall_clock_seconds".into(), Value::Float(self.wall_clock_seconds));
        root.insert("config".into(), Value::Table(self.config.to_table()));
        let outputs: Table = self
            .outputs
            .iter()
            .map(|(n, d)| (n.clone(), Value::String(d.clone())))
            .collect();
        root.insert("outputs".into(), Value::Table(outputs));
        root.insert("notes".into(), Value::Table(self.notes.clone()));
        toml::to_string(&root).expect("manifest tables serialise")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<manifest>", e.message().to_string()))?;
        let str_at = |key: &str| {
            root.get(key)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| Error::config(key, "missing or not a string"))
        };
        let table_at = |key: &str| {
            root.get(key)
                .and_then(Value::as_table)
                .ok_or_else(|| Error::config(key, "missing or not a table"))
        };
        let config_text = toml::to_string(table_at("config")?)
            .map_err(|e| Error::config("config", e.to_string()))?;
        let outputs = table_at("outputs")?
            .iter()
            .map(|(k, v)| {
                v.as_str()
                    .map(|d| (k.clone(), d.to_string()))
                    .ok_or_else(|| Error::config(format!("outputs.{k}"), "expected a digest"))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            version: str_at("version")?,
            seed_derivation: str_at("seed_derivation")?,
            wall_clock_seconds: root
                .get("wall_clock_seconds")
                .and_then(Value::as_float)
                .ok_or_else(|| Error::config("wall_clock_seconds", "missing or not a number"))?,
            config: parse_config(&config_text)?,
            outputs,
            notes: table_at("notes")?.clone(),
        })
    }

    pub fn digest(&self, name: &str) -> Option<&str> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_str())
    }
}
