//! Service configuration: one TOML file plus `SEAM_*` environment overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use seam_core::{EngineConfig, ScoreConfig, DEFAULT_SENTENCES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("environment variable {name}: cannot parse {value:?}")]
    Env { name: &'static str, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// SQLite database path, or `:memory:`.
    pub store: String,
    pub n_sentences: u32,
    pub score: ScoreConfig,
    pub attention_check_rate: f64,
    pub session_ttl_secs: u64,
    /// Directory of the built UI bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            store: "seam.sqlite3".into(),
            n_sentences: DEFAULT_SENTENCES,
            score: ScoreConfig::default(),
            attention_check_rate: 0.10,
            session_ttl_secs: 24 * 60 * 60,
            static_dir: None,
        }
    }
}

fn parsed<T: std::str::FromStr>(name: &'static str, value: String) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Env { name, value })
}

impl ServiceConfig {
    /// Defaults, then the file if given, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load_with(path, |k| std::env::var(k).ok())
    }

    pub fn load_with<F>(path: Option<&Path>, env: F) -> Result<Self, ConfigError>
    where
        F: Fn(&str) -> Option<String>,
    {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: p.to_path_buf(),
                    source,
                })?
            }
            None => ServiceConfig::default(),
        };
        if let Some(v) = env("SEAM_BIND") {
            cfg.bind = v;
        }
        if let Some(v) = env("SEAM_STORE") {
            cfg.store = v;
        }
        if let Some(v) = env("SEAM_SENTENCES") {
            cfg.n_sentences = parsed("SEAM_SENTENCES", v)?;
        }
        if let Some(v) = env("SEAM_MAX_POINTS") {
            cfg.score.max_points = parsed("SEAM_MAX_POINTS", v)?;
        }
        if let Some(v) = env("SEAM_DECAY_PER_SENTENCE") {
            cfg.score.decay_per_sentence = parsed("SEAM_DECAY_PER_SENTENCE", v)?;
        }
        if let Some(v) = env("SEAM_ATTENTION_CHECK_RATE") {
            cfg.attention_check_rate = parsed("SEAM_ATTENTION_CHECK_RATE", v)?;
        }
        if let Some(v) = env("SEAM_SESSION_TTL_SECS") {
            cfg.session_ttl_secs = parsed("SEAM_SESSION_TTL_SECS", v)?;
        }
        if let Some(v) = env("SEAM_STATIC_DIR") {
            cfg.static_dir = Some(PathBuf::from(v));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_sentences < 2 {
            return Err(ConfigError::Invalid("n_sentences must be at least 2".into()));
        }
        self.score
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.attention_check_rate) {
            return Err(ConfigError::Invalid(
                "attention_check_rate must lie in [0, 1]".into(),
            ));
        }
        if self.session_ttl_secs == 0 {
            return Err(ConfigError::Invalid("session_ttl_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            n_sentences: self.n_sentences,
            score: self.score,
            attention_check_rate: self.attention_check_rate,
            session_ttl_ms: self.session_ttl_secs as i64 * 1000,
        }
    }
}
