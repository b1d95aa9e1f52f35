//! `key=value` service configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! listen = 127.0.0.1:8080
//! data_dir = ./data
//! fee_q = 5000
//! fee_a = 5000
//! clock = simulated
//! admin_token = change-me
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qx_core::Money;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Real,
    /// Time moves only through `POST /admin/tick`.
    Simulated,
}

impl FromStr for ClockMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(ClockMode::Real),
            "simulated" => Ok(ClockMode::Simulated),
            other => Err(ConfigError::BadValue { key: "clock".into(), value: other.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    /// Where the event log lives. `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub fee_q: Money,
    pub fee_a: Money,
    pub clock: ClockMode,
    pub admin_token: String,
    /// Seeds pseudonym and credential generation; entropy when unset.
    pub seed: Option<u64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            fee_q: Money(5_000),
            fee_a: Money(5_000),
            clock: ClockMode::Simulated,
            admin_token: "admin".into(),
            seed: None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {0}: expected key=value")]
    Syntax(usize),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}")]
    BadValue { key: String, value: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        text.parse()
    }

    pub fn event_log_path(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("events.jsonl"))
    }
}

impl FromStr for ServiceConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut cfg = ServiceConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::BadValue { key: key.into(), value: value.into() };
            match key {
                "listen" => cfg.listen = value.parse().map_err(|_| bad())?,
                "data_dir" => cfg.data_dir = Some(PathBuf::from(value)),
                "fee_q" => cfg.fee_q = Money(value.parse().map_err(|_| bad())?),
                "fee_a" => cfg.fee_a = Money(value.parse().map_err(|_| bad())?),
                "clock" => cfg.clock = value.parse()?,
                "admin_token" if !value.is_empty() => cfg.admin_token = value.into(),
                "admin_token" => return Err(bad()),
                "seed" => cfg.seed = Some(value.parse().map_err(|_| bad())?),
                other => return Err(ConfigError::UnknownKey(other.into())),
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let cfg: ServiceConfig = "
            # exchange
            listen = 0.0.0.0:9000
            data_dir=/tmp/x
            fee_q = 100
            fee_a = 250
            clock = real
            admin_token = s3cret
            seed = 7
        "
        .parse()
        .unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000".parse().unwrap());
        assert_eq!(cfg.event_log_path(), Some(PathBuf::from("/tmp/x/events.jsonl")));
        assert_eq!((cfg.fee_q, cfg.fee_a), (Money(100), Money(250)));
        assert_eq!(cfg.clock, ClockMode::Real);
        assert_eq!(cfg.admin_token, "s3cret");
        assert_eq!(cfg.seed, Some(7));
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!("listen".parse::<ServiceConfig>(), Err(ConfigError::Syntax(1)));
        assert_eq!("colour=blue".parse::<ServiceConfig>(), Err(ConfigError::UnknownKey("colour".into())));
        assert!(matches!("clock=lunar".parse::<ServiceConfig>(), Err(ConfigError::BadValue { .. })));
        assert!(matches!("fee_q=-1".parse::<ServiceConfig>(), Err(ConfigError::BadValue { .. })));
    }
}
