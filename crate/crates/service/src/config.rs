//! Service configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use signdigit_core::imaging::HsvThreshold;

/// Environment variable naming a config file.
pub const CONFIG_ENV: &str = "SIGNDIGIT_CONFIG";
pub const DEFAULT_BODY_LIMIT: usize = 8 * 1024 * 1024;
const DEFAULT_TIMEOUT_MS: u64 = 5_000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TranslatorConfig {
    BuiltinLexicon,
    ExternalHttp {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TtsConfig {
    OfflineTone,
    ExternalHttp {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub model: PathBuf,
    pub skin: HsvThreshold,
    pub translator: TranslatorConfig,
    pub tts: TtsConfig,
    /// Directory with the browser UI; `/` answers 404 when unset.
    pub static_dir: Option<PathBuf>,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            model: PathBuf::from("model.sdb"),
            skin: HsvThreshold::default(),
            translator: TranslatorConfig::BuiltinLexicon,
            tts: TtsConfig::OfflineTone,
            static_dir: None,
            max_body_bytes: DEFAULT_BODY_LIMIT,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Reads `explicit` if given, else the file named by `SIGNDIGIT_CONFIG`,
    /// else returns the defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.port == 0 {
            return Err(ConfigError::Invalid("port must be in 1..=65535".into()));
        }
        if self.max_body_bytes == 0 {
            return Err(ConfigError::Invalid(
                "max_body_bytes must be positive".into(),
            ));
        }
        self.skin
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, endpoint) in [
            ("translator", self.translator_endpoint()),
            ("tts", self.tts_endpoint()),
        ] {
            if let Some((url, _)) = endpoint {
                if !url.starts_with("http://") {
                    return Err(ConfigError::Invalid(format!(
                        "{name} endpoint {url:?} must be a plain http:// URL"
                    )));
                }
            }
        }
        Ok(())
    }

    fn translator_endpoint(&self) -> Option<(&str, Duration)> {
        match &self.translator {
            TranslatorConfig::ExternalHttp {
                endpoint,
                timeout_ms,
            } => Some((endpoint, Duration::from_millis(*timeout_ms))),
            TranslatorConfig::BuiltinLexicon => None,
        }
    }

    fn tts_endpoint(&self) -> Option<(&str, Duration)> {
        match &self.tts {
            TtsConfig::ExternalHttp {
                endpoint,
                timeout_ms,
            } => Some((endpoint, Duration::from_millis(*timeout_ms))),
            TtsConfig::OfflineTone => None,
        }
    }
}
