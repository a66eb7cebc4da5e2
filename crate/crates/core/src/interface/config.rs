use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::BackendConfig;
use crate::decoding::GenerationConfig;
use crate::humaneval::PlanParams;
use crate::tokenizer::Tokenizer;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "MCQFORGE_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field} refers to {path}, which does not exist")]
    MissingFile { field: &'static str, path: PathBuf },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// SQuAD v2 JSON file.
    pub squad: Option<PathBuf>,
    /// RACE directory.
    pub race: Option<PathBuf>,
    /// GPT-2 style `vocab.json`; the byte-level tokenizer is used when absent.
    pub vocab: Option<PathBuf>,
    pub merges: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub qg: BackendConfig,
    pub dg: BackendConfig,
    pub qa: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaSettings {
    /// Maximum QA input length in tokens; the context is truncated first.
    pub max_len: Option<usize>,
}

impl Default for QaSettings {
    fn default() -> Self {
        Self { max_len: Some(512) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub bind: String,
    /// Show the context passage to assessors.
    pub show_context: bool,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            show_context: false,
        }
    }
}

/// Everything the pipeline stages need. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub generation: GenerationConfig,
    pub backends: Backends,
    pub qa: QaSettings,
    pub humaneval: PlanParams,
    pub service: ServiceSettings,
    /// Worker threads per stage.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths {
                out: PathBuf::from("out"),
                ..Paths::default()
            },
            generation: GenerationConfig::default(),
            backends: Backends::default(),
            qa: QaSettings::default(),
            humaneval: PlanParams::default(),
            service: ServiceSettings::default(),
            workers: 1,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Read, resolve and validate a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load `explicit`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.squad,
            &mut self.paths.race,
            &mut self.paths.vocab,
            &mut self.paths.merges,
        ] {
            resolve(base, p);
        }
        for b in [
            &mut self.backends.qg,
            &mut self.backends.dg,
            &mut self.backends.qa,
        ] {
            resolve(base, &mut b.script);
        }
        if self.paths.out.is_relative() {
            self.paths.out = base.join(&self.paths.out);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inputs = [
            ("paths.squad", &self.paths.squad),
            ("paths.race", &self.paths.race),
            ("paths.vocab", &self.paths.vocab),
            ("paths.merges", &self.paths.merges),
            ("backends.qg.script", &self.backends.qg.script),
            ("backends.dg.script", &self.backends.dg.script),
            ("backends.qa.script", &self.backends.qa.script),
        ];
        for (field, path) in inputs {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError::MissingFile {
                        field,
                        path: p.clone(),
                    });
                }
            }
        }
        if self.paths.vocab.is_some() != self.paths.merges.is_some() {
            return Err(ConfigError::Invalid(
                "paths.vocab and paths.merges must be given together".into(),
            ));
        }
        self.generation
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("generation: {e}")))?;
        for (role, b) in [
            ("qg", &self.backends.qg),
            ("dg", &self.backends.dg),
            ("qa", &self.backends.qa),
        ] {
            b.validate()
                .map_err(|e| ConfigError::Invalid(format!("backends.{role}: {e}")))?;
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> Result<Tokenizer, ConfigError> {
        match (&self.paths.vocab, &self.paths.merges) {
            (Some(v), Some(m)) => {
                Tokenizer::from_files(v, m).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            _ => Ok(Tokenizer::byte_level()),
        }
    }
}
