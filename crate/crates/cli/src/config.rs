use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use gdasum::dataset::{Setting, SourceDataset, VideoRecord};
use gdasum::eval::ZetaNormalization;
use gdasum::kts::KtsConfig;
use gdasum::summary::DEFAULT_RATIO;
use gdasum::train::TrainConfig;
use gdasum::HyperParams;
use serde::{Deserialize, Serialize};

/// Version of every JSON document the CLI writes.
pub const OUTPUT_VERSION: u32 = 1;

/// Effective settings of a run: defaults, overlaid by the config file, then
/// by command-line flags. Written into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub setting: Setting,
    /// Dataset the splits are built for; inferred when the manifest holds one.
    pub target: Option<SourceDataset>,
    pub fold: Option<usize>,
    pub ratio: f64,
    pub jobs: Option<usize>,
    pub zeta: ZetaNormalization,
    pub train: TrainConfig,
    pub hyper: HyperParams,
    pub kts: KtsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            setting: Setting::Canonical,
            target: None,
            fold: None,
            ratio: DEFAULT_RATIO,
            jobs: None,
            zeta: ZetaNormalization::PerVideo,
            train: TrainConfig::default(),
            hyper: HyperParams::default(),
            kts: KtsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(gdasum::Error::from)
            .with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn target_for(&self, records: &[VideoRecord]) -> Result<SourceDataset> {
        if let Some(t) = self.target {
            return Ok(t);
        }
        let first = records.first().map_or(SourceDataset::Other, |r| r.source_dataset);
        if records.iter().all(|r| r.source_dataset == first) {
            Ok(first)
        } else {
            Err(gdasum::Error::InvalidArgument(
                "manifest mixes datasets; pass --target".into(),
            ))
            .context("choosing the target dataset")
        }
    }
}

/// Wraps a command result with its format tag, version and configuration.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub format: &'a str,
    pub version: u32,
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub body: T,
}

pub fn envelope<'a, T: Serialize>(format: &'a str, config: &'a RunConfig, body: T) -> Envelope<'a, T> {
    Envelope {
        format,
        version: OUTPUT_VERSION,
        config,
        body,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"ratio": 0.2, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.ratio, 0.2);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.sigma, TrainConfig::default().sigma);
        assert_eq!(c.setting, Setting::Canonical);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"ratoi": 0.2}"#).is_err());
    }

    #[test]
    fn envelope_flattens_body() {
        let c = RunConfig::default();
        let v = serde_json::to_value(envelope("x", &c, serde_json::json!({"n": 1}))).unwrap();
        assert_eq!(v["format"], "x");
        assert_eq!(v["version"], OUTPUT_VERSION);
        assert_eq!(v["n"], 1);
        assert!(v["config"].is_object());
    }
}
