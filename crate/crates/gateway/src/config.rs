use std::path::{Path, PathBuf};
use std::time::Duration;

use holonsim_core::kernel::Tick;
use holonsim_core::reasoning::{ReasoningLayer, RemoteReasoner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("environment variable {var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("remote reasoner selected but no url configured")]
    MissingRemoteUrl,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Mock,
    Remote,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Backend::Mock),
            "remote" => Ok(Backend::Remote),
            other => Err(format!("unknown reasoner backend `{other}` (mock or remote)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerConfig {
    pub backend: Backend,
    pub url: Option<String>,
    /// Per-call time budget before falling back to the mock.
    pub budget_ms: u64,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            backend: Backend::Mock,
            url: None,
            budget_ms: 2000,
        }
    }
}

impl ReasonerConfig {
    pub fn layer(&self) -> Result<ReasoningLayer, ConfigError> {
        match self.backend {
            Backend::Mock => Ok(ReasoningLayer::mock()),
            Backend::Remote => {
                let url = self.url.clone().ok_or(ConfigError::MissingRemoteUrl)?;
                let budget = Duration::from_millis(self.budget_ms);
                Ok(ReasoningLayer::with_backend(Box::new(RemoteReasoner::new(url, budget))))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    /// Run logs and scenario copies go under this directory.
    pub runs_dir: PathBuf,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
            runs_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Wall-clock pacing of running runs. Zero or less runs flat out.
    pub ticks_per_second: f64,
    pub approval_timeout: Option<Tick>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            ticks_per_second: 2.0,
            approval_timeout: None,
        }
    }
}

/// Contents of `holonsim.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub server: ServerConfig,
    pub sim: SimConfig,
    pub reasoner: ReasonerConfig,
}

fn parse_env<T: std::str::FromStr>(var: &'static str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e: T::Err| ConfigError::Env {
        var,
        message: e.to_string(),
    })
}

impl GatewayConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    /// Reads `path` if given, otherwise `holonsim.toml` in the working
    /// directory when present, then applies `HOLONSIM_*` overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let default = Path::new("holonsim.toml");
        let chosen = path.or_else(|| default.exists().then_some(default));
        let mut cfg = match chosen {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_owned(),
                    source,
                })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    /// Environment overrides. Setting a reasoner url without naming a
    /// backend selects the remote one.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get("HOLONSIM_BIND") {
            self.server.bind = v;
        }
        if let Some(v) = get("HOLONSIM_PORT") {
            self.server.port = parse_env("HOLONSIM_PORT", &v)?;
        }
        if let Some(v) = get("HOLONSIM_RUNS_DIR") {
            self.server.runs_dir = PathBuf::from(v);
        }
        if let Some(v) = get("HOLONSIM_TICKS_PER_SECOND") {
            self.sim.ticks_per_second = parse_env("HOLONSIM_TICKS_PER_SECOND", &v)?;
        }
        if let Some(v) = get("HOLONSIM_APPROVAL_TIMEOUT") {
            self.sim.approval_timeout = Some(parse_env("HOLONSIM_APPROVAL_TIMEOUT", &v)?);
        }
        if let Some(v) = get("HOLONSIM_REASONER_URL") {
            self.reasoner.url = Some(v);
            self.reasoner.backend = Backend::Remote;
        }
        if let Some(v) = get("HOLONSIM_REASONER") {
            self.reasoner.backend = parse_env("HOLONSIM_REASONER", &v)?;
        }
        Ok(())
    }
}
