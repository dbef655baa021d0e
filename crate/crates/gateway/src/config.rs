//! Gateway configuration file (TOML).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use fimroute::backend::BackendConfig;
use fimroute::calibration::{load_artifact, CalibrationResult};
use fimroute::routers::RouterConfig;
use fimroute::syntax::{CheckerRegistry, CheckerSpec};
use serde::{Deserialize, Serialize};

use crate::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default)]
    pub router: RouterConfig,
    pub local: BackendConfig,
    #[serde(default)]
    pub remote: Option<BackendConfig>,
    /// Calibration artifact; its policy must match `router.policy`.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    /// Per-language checkers; empty means the built-in registry.
    #[serde(default)]
    pub checkers: BTreeMap<String, CheckerSpec>,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
    /// Environment variable holding a shared bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    /// JSONL file receiving one decision record per request.
    #[serde(default)]
    pub decision_log: Option<PathBuf>,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_concurrency() -> usize {
    64
}

impl GatewayConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, GatewayError> {
        toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        self.router.validate()?;
        if self.concurrency_limit == 0 {
            return Err(GatewayError::Config("concurrency_limit must be >= 1".into()));
        }
        if self.router.policy.can_escalate() && self.remote.is_none() {
            return Err(GatewayError::Config(format!(
                "policy `{}` can escalate but no remote backend is configured",
                self.router.policy
            )));
        }
        Ok(())
    }

    /// Loads the calibration artifact and applies it to the router config.
    pub fn resolve_calibration(&self) -> Result<(RouterConfig, Option<CalibrationResult>), GatewayError> {
        let Some(path) = &self.calibration else {
            return Ok((self.router.clone(), None));
        };
        let result = load_artifact(path)?;
        if result.policy != self.router.policy {
            return Err(GatewayError::Config(format!(
                "calibration artifact {} is for policy `{}` but the router is configured for `{}`",
                path.display(),
                result.policy,
                self.router.policy
            )));
        }
        Ok((result.apply_to(&self.router), Some(result)))
    }

    pub fn registry(&self) -> Result<CheckerRegistry, GatewayError> {
        if self.checkers.is_empty() {
            return Ok(CheckerRegistry::with_defaults());
        }
        Ok(CheckerRegistry::from_specs(
            self.checkers.iter().map(|(k, v)| (k.as_str(), v)),
        )?)
    }
}
