//! Gateway configuration: one TOML file plus environment overrides.
//!
//! Precedence is environment, then file, then built-in defaults.
//!
//! | variable               | field               |
//! |------------------------|---------------------|
//! | `MINIORC_CONFIG`       | path of the file    |
//! | `MINIORC_JOURNAL_DIR`  | `journal.dir`       |
//! | `MINIORC_CLOCK_MODE`   | `clock.mode`        |
//! | `MINIORC_LISTEN`       | `server.listen`     |
//! | `MINIORC_SIGNING_KEY`  | `auth.signing_key`  |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use miniorc_core::catalog::SiteDescriptor;
use miniorc_core::datamgr::{DatasetSpec, StorageQos};
use miniorc_core::iam::IdentityKind;
use miniorc_core::ids::{DatasetId, SiteId};
use miniorc_core::platform::{PlatformConfig, SiteSimulation};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{var}: {message}")]
    Env { var: &'static str, message: String },
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Manual,
    Realtime,
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "manual" => Ok(ClockMode::Manual),
            "realtime" => Ok(ClockMode::Realtime),
            other => Err(format!("unknown clock mode `{other}`, expected manual or realtime")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    /// Upper bound on a long-poll wait, seconds.
    pub poll_timeout: u64,
    pub max_body_bytes: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { listen: "127.0.0.1:8640".into(), poll_timeout: 30, max_body_bytes: 1 << 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JournalConfig {
    pub dir: PathBuf,
    pub fsync: bool,
    pub snapshot_every: u64,
}

impl Default for JournalConfig {
    fn default() -> Self {
        JournalConfig { dir: PathBuf::from("miniorc-data"), fsync: true, snapshot_every: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    pub mode: ClockMode,
    /// Wall-clock milliseconds per simulated second in realtime mode.
    pub tick_ms: u64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig { mode: ClockMode::Manual, tick_ms: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    /// Hex key; a random one is generated and kept in the journal directory
    /// when unset.
    pub signing_key: Option<String>,
    /// Create an account on first login of an unknown identity.
    pub auto_link: bool,
    pub default_audience: String,
}

impl Default for AuthConfig {
    fn default() -> Self {
        AuthConfig { signing_key: None, auto_link: true, default_audience: "miniorc".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapAccount {
    pub issuer: String,
    pub subject: String,
    #[serde(default = "default_kind")]
    pub kind: IdentityKind,
    #[serde(default)]
    pub groups: Vec<String>,
}

fn default_kind() -> IdentityKind {
    IdentityKind::Oidc
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    /// Site catalog file, relative to the config file.
    pub sites: Option<PathBuf>,
    /// Dataset file, relative to the config file.
    pub datasets: Option<PathBuf>,
    pub accounts: Vec<BootstrapAccount>,
    /// Rule documents keyed by `global`, `group:<name>` or `user:<account>`.
    pub rules: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub journal: JournalConfig,
    pub clock: ClockConfig,
    pub auth: AuthConfig,
    pub platform: PlatformConfig,
    pub bootstrap: BootstrapConfig,
    /// Directory relative bootstrap paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Config, ConfigError> {
        let mut cfg: Config =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Config::from_toml(&text, path)
    }

    /// Resolves the file from `explicit` or `MINIORC_CONFIG`, then applies
    /// the other environment overrides.
    pub fn load(explicit: Option<&Path>, env: &dyn Fn(&str) -> Option<String>) -> Result<Config, ConfigError> {
        let path = explicit.map(Path::to_path_buf).or_else(|| env("MINIORC_CONFIG").map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => Config::from_file(&p)?,
            None => Config::default(),
        };
        cfg.apply_env(env)?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, env: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(dir) = env("MINIORC_JOURNAL_DIR") {
            self.journal.dir = PathBuf::from(dir);
        }
        if let Some(mode) = env("MINIORC_CLOCK_MODE") {
            self.clock.mode = mode.parse().map_err(|message| ConfigError::Env { var: "MINIORC_CLOCK_MODE", message })?;
        }
        if let Some(listen) = env("MINIORC_LISTEN") {
            self.server.listen = listen;
        }
        if let Some(key) = env("MINIORC_SIGNING_KEY") {
            self.auth.signing_key = Some(key);
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }
}

/// Site catalog bootstrap document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteFile {
    #[serde(default, rename = "site")]
    pub sites: Vec<SiteEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteEntry {
    #[serde(flatten)]
    pub descriptor: SiteDescriptor,
    #[serde(default)]
    pub simulation: SiteSimulation,
}

/// Dataset bootstrap document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    #[serde(flatten)]
    pub spec: DatasetSpec,
    #[serde(default, rename = "replica")]
    pub replicas: Vec<ReplicaEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaEntry {
    pub site: SiteId,
    #[serde(default = "full")]
    pub fraction: f64,
    #[serde(default = "single")]
    pub qos: StorageQos,
}

fn full() -> f64 {
    1.0
}

fn single() -> StorageQos {
    StorageQos::SINGLE
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

impl DatasetEntry {
    pub fn id(&self) -> Option<&DatasetId> {
        self.spec.dataset_id.as_ref()
    }
}
