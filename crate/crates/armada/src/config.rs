//! Service configuration: a JSON file plus environment overrides.
//!
//! ```json
//! {
//!   "port": 8080,
//!   "data_dir": "./data",
//!   "batch_schedule": { "daily_at": "02:00" },
//!   "default_n_draws": 10000,
//!   "default_floor": 0.05,
//!   "api_token": null,
//!   "bots": { "ids": [], "prefixes": ["bot-"] }
//! }
//! ```
//!
//! `ARMADA_PORT` and `ARMADA_DATA_DIR` override the file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use armada_core::attribution::JoinConfig;
use armada_core::{DEFAULT_FLOOR, DEFAULT_N_DRAWS};
use chrono::{DateTime, NaiveTime, Utc};
use serde::{Deserialize, Serialize};

pub const PORT_ENV: &str = "ARMADA_PORT";
pub const DATA_DIR_ENV: &str = "ARMADA_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

/// When the scheduler runs batches. Manual triggers work under all three.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSchedule {
    /// Once a day at this UTC time (`HH:MM`).
    DailyAt(NaiveTime),
    IntervalSecs(u64),
    Manual,
}

impl Default for BatchSchedule {
    fn default() -> Self {
        Self::DailyAt(NaiveTime::from_hms_opt(2, 0, 0).expect("valid time"))
    }
}

impl BatchSchedule {
    /// Time to wait from `now` until the next scheduled run.
    pub fn next_delay(&self, now: DateTime<Utc>) -> Option<Duration> {
        match self {
            Self::Manual => None,
            Self::IntervalSecs(s) => Some(Duration::from_secs((*s).max(1))),
            Self::DailyAt(t) => {
                let today = now.date_naive().and_time(*t).and_utc();
                let next = if today > now { today } else { today + chrono::Duration::days(1) };
                Some((next - now).to_std().unwrap_or_default())
            }
        }
    }
}

/// Visitors whose records are dropped before counting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotConfig {
    #[serde(default)]
    pub ids: BTreeSet<String>,
    #[serde(default)]
    pub prefixes: Vec<String>,
}

impl BotConfig {
    pub fn is_bot(&self, visitor: &str) -> bool {
        self.ids.contains(visitor) || self.prefixes.iter().any(|p| visitor.starts_with(p.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub batch_schedule: BatchSchedule,
    pub default_n_draws: u32,
    pub default_floor: f64,
    /// When set, every request must send `Authorization: Bearer <token>`.
    pub api_token: Option<String>,
    pub bots: BotConfig,
    pub join: JoinConfig,
    /// Fixes the assignment RNG; entropy-seeded when absent.
    pub assign_seed: Option<u64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("./data"),
            batch_schedule: BatchSchedule::default(),
            default_n_draws: DEFAULT_N_DRAWS,
            default_floor: DEFAULT_FLOOR,
            api_token: None,
            bots: BotConfig::default(),
            join: JoinConfig::default(),
            assign_seed: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    /// Applies overrides from `lookup` (normally the process environment).
    pub fn with_env<F>(mut self, lookup: F) -> Result<Self, ConfigError>
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(port) = lookup(PORT_ENV) {
            self.port = port.parse().map_err(|_| ConfigError::Invalid(format!("{PORT_ENV}={port} is not a port")))?;
        }
        if let Some(dir) = lookup(DATA_DIR_ENV) {
            self.data_dir = PathBuf::from(dir);
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.default_n_draws == 0 {
            return Err(ConfigError::Invalid("default_n_draws must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.default_floor) {
            return Err(ConfigError::Invalid("default_floor must be in [0, 1)".into()));
        }
        if self.join.click_window_ms < 0 || self.join.purchase_window_ms < 0 {
            return Err(ConfigError::Invalid("join windows must be non-negative".into()));
        }
        Ok(())
    }
}
