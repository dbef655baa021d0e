//! Config-file layering.
//!
//! One TOML file serves both the gateway and the offline subcommands. The
//! gateway reads every top-level key except `[data]`; the offline commands
//! read `[router]` and `[data]`. Precedence, highest first: command-line
//! flags, the config file, built-in defaults. Relative paths under `[data]`
//! resolve against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fimroute::confidence::ConfidenceMetric;
use fimroute::routers::{Policy, RouterConfig};
use fimroute_gateway::config::GatewayConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dataset: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub local_model: Option<String>,
    pub remote_model: Option<String>,
    /// Calibration subset size.
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub router: RouterConfig,
    pub data: DataSection,
    /// Everything but `[data]`, for the gateway.
    rest: toml::Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<FileConfig> {
        let mut table: toml::Table = toml::from_str(text)?;
        let mut data: DataSection = match table.remove("data") {
            Some(value) => value.try_into().context("invalid [data] section")?,
            None => DataSection::default(),
        };
        for path in [&mut data.dataset, &mut data.predictions].into_iter().flatten() {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        let router: RouterConfig = match table.get("router") {
            Some(value) => value.clone().try_into().context("invalid [router] section")?,
            None => RouterConfig::default(),
        };
        Ok(FileConfig { router, data, rest: table })
    }

    /// The gateway view of the file. Fails when no backend is described.
    pub fn gateway(&self) -> Result<GatewayConfig> {
        if !self.rest.contains_key("local") {
            bail!("config file has no [local] backend section");
        }
        Ok(toml::Value::Table(self.rest.clone()).try_into()?)
    }
}

/// Router overrides accepted on the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct RouterOverrides {
    pub policy: Option<Policy>,
    pub threshold: Option<f64>,
    pub metric: Option<ConfidenceMetric>,
}

impl RouterOverrides {
    pub fn apply(&self, base: &RouterConfig) -> Result<RouterConfig> {
        let mut config = base.clone();
        if let Some(policy) = self.policy {
            config.policy = policy;
        }
        if let Some(t) = self.threshold {
            config.threshold = t;
        }
        if let Some(metric) = self.metric {
            config.confidence_metric = metric;
        }
        config.validate()?;
        Ok(config)
    }
}
