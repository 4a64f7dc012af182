//! Run configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};
use std::time::Duration;

use rtrc_core::analytics::{DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_TAU};
use rtrc_core::embedding::{DEFAULT_MAX_TOKENS, HASHED_DIM};
use rtrc_core::prompt::PromptSet;
use rtrc_core::{load_codebook, Codebook};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::RetryPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error(transparent)]
    Codebook(#[from] rtrc_core::CodebookError),
    #[error(transparent)]
    Prompt(#[from] rtrc_core::prompt::PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// JSONL script for the scripted backend.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

impl BackendConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.backoff_ms),
            request_timeout: Duration::from_secs(self.timeout_s),
        }
    }
}

fn default_parallelism() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_timeout_s() -> u64 {
    300
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Hashed,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            kind: EmbeddingKind::Hashed,
            dim: HASHED_DIM,
            max_tokens: DEFAULT_MAX_TOKENS,
            base_url: None,
            model: None,
            api_key_env: None,
        }
    }
}

fn default_dim() -> usize {
    HASHED_DIM
}
fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub bootstrap_seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            tau: DEFAULT_TAU,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            bootstrap_seed: 0,
        }
    }
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_resamples() -> usize {
    DEFAULT_BOOTSTRAP_RESAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    /// Segments as JSONL.
    pub input: PathBuf,
    /// Parent directory; the run lands in `<output>/<run_id>`.
    pub output: PathBuf,
    /// Codebook JSON; the bundled tutoring codebook when absent.
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    /// Directory with `coder.txt`, `consensus.txt`, `round1.txt`,
    /// `round2.txt` and `consensus_user.txt`; missing files fall back to
    /// the bundled templates.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub styles: Option<[String; 3]>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Reject turns without a think block instead of keeping them degraded.
    #[serde(default)]
    pub strict_parsing: bool,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_output_tokens() -> u32 {
    4096
}

impl RunConfig {
    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let invalid = |msg: String| ConfigError::Invalid {
            path: path.to_path_buf(),
            msg,
        };
        let mut cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| invalid(e.to_string()))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.input);
        rebase(&mut cfg.output);
        cfg.codebook.as_mut().map(rebase);
        cfg.prompts_dir.as_mut().map(rebase);
        cfg.backend.script.as_mut().map(rebase);
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(format!("run_id `{}` must be a plain name", self.run_id));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.backend.parallelism == 0 {
            return Err("backend.parallelism must be positive".into());
        }
        match self.backend.kind {
            BackendKind::Http if self.backend.base_url.is_none() || self.backend.model.is_none() => {
                return Err("http backend needs base_url and model".into());
            }
            BackendKind::Scripted if self.backend.script.is_none() => return Err("scripted backend needs script".into()),
            _ => {}
        }
        if self.embedding.kind == EmbeddingKind::Remote && self.embedding.base_url.is_none() {
            return Err("remote embedding needs base_url".into());
        }
        if !(0.0..=1.0).contains(&self.analysis.tau) {
            return Err(format!("tau {} outside [0, 1]", self.analysis.tau));
        }
        Ok(())
    }

    pub fn load_codebook(&self) -> Result<Codebook, ConfigError> {
        match &self.codebook {
            None => Ok(Codebook::tutoring()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.clone(),
                    source,
                })?;
                Ok(load_codebook(&text)?)
            }
        }
    }

    pub fn load_prompts(&self) -> Result<PromptSet, ConfigError> {
        let mut set = PromptSet::default();
        if let Some(dir) = &self.prompts_dir {
            let read = |name: &str, slot: &mut String| -> Result<(), ConfigError> {
                let p = dir.join(name);
                if p.exists() {
                    *slot = std::fs::read_to_string(&p).map_err(|source| ConfigError::Io { path: p, source })?;
                }
                Ok(())
            };
            let shared_coder = &mut set.coder_a.system_prompt_template;
            read("coder.txt", shared_coder)?;
            set.coder_b.system_prompt_template = set.coder_a.system_prompt_template.clone();
            read("consensus.txt", &mut set.consensus.system_prompt_template)?;
            read("round1.txt", &mut set.rounds.round1)?;
            read("round2.txt", &mut set.rounds.round2)?;
            read("consensus_user.txt", &mut set.rounds.consensus)?;
        }
        if let Some([a, b, c]) = &self.styles {
            set.coder_a.style_descriptor = a.clone();
            set.coder_b.style_descriptor = b.clone();
            set.consensus.style_descriptor = c.clone();
        }
        set.validate()?;
        Ok(set)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.join(&self.run_id)
    }
}
