use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    BudgetCounts, DecodingParams, Gateway, HttpProvider, HttpProviderConfig, ModelRole, Provider,
    ReplayError, ResponseCache, ScriptedProvider,
};
use crate::ops::{OpKind, OpSet};
use crate::planner::LoopLimits;
use crate::templates::{TemplateError, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Full,
    NoCoarse,
    NoFine,
    /// Coarse stage from fallbacks only; planner and final still query.
    Offline,
}

impl RunMode {
    pub const ALL: [RunMode; 4] = [RunMode::Full, RunMode::NoCoarse, RunMode::NoFine, RunMode::Offline];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Full => "full",
            RunMode::NoCoarse => "no_coarse",
            RunMode::NoFine => "no_fine",
            RunMode::Offline => "offline",
        }
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n = s.trim().to_ascii_lowercase().replace('-', "_");
        RunMode::ALL
            .into_iter()
            .find(|m| m.name() == n)
            .ok_or_else(|| format!("unknown mode `{s}` (expected full, no_coarse, no_fine or offline)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Scripted {
        script: PathBuf,
        #[serde(default = "yes")]
        strict: bool,
        #[serde(default = "yes")]
        vision: bool,
    },
    Http(HttpProviderConfig),
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub provider: String,
    pub model: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RoleConfig {
    fn decoding(&self) -> DecodingParams {
        let d = DecodingParams::default();
        DecodingParams {
            temperature: self.temperature.unwrap_or(d.temperature),
            max_tokens: self.max_tokens.unwrap_or(d.max_tokens),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    #[serde(default = "yes")]
    pub enforce: bool,
    #[serde(default = "default_limits")]
    pub limits: BudgetCounts,
}

fn default_limits() -> BudgetCounts {
    BudgetCounts {
        coarse: 4,
        fine: 10,
        final_: 1,
    }
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            enforce: true,
            limits: default_limits(),
        }
    }
}

fn default_workers() -> usize {
    4
}

/// A run configuration as written in TOML. Relative paths are resolved
/// against the directory of the file they were read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: RunMode,
    /// Operation names, with or without the `f_` prefix.
    #[serde(default)]
    pub disabled_ops: Vec<String>,
    #[serde(default)]
    pub limits: LoopLimitsConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    /// Template directory; the bundled set when absent.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Response cache directory; no cache when absent.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// Free-form split label recorded in every record.
    #[serde(default)]
    pub split: Option<String>,
    pub providers: BTreeMap<String, ProviderConfig>,
    /// Role name (`planner`, `final_answer`, ...) or `default` to binding.
    pub roles: BTreeMap<String, RoleConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopLimitsConfig {
    #[serde(default = "d_steps")]
    pub max_steps: usize,
    #[serde(default = "d_retries")]
    pub max_parse_retries: usize,
    #[serde(default = "d_window")]
    pub loop_guard_window: usize,
}

fn d_steps() -> usize {
    LoopLimits::default().max_steps
}
fn d_retries() -> usize {
    LoopLimits::default().max_parse_retries
}
fn d_window() -> usize {
    LoopLimits::default().loop_guard_window
}

impl Default for LoopLimitsConfig {
    fn default() -> Self {
        let l = LoopLimits::default();
        LoopLimitsConfig {
            max_steps: l.max_steps,
            max_parse_retries: l.max_parse_retries,
            loop_guard_window: l.loop_guard_window,
        }
    }
}

impl From<LoopLimitsConfig> for LoopLimits {
    fn from(c: LoopLimitsConfig) -> Self {
        LoopLimits {
            max_steps: c.max_steps,
            max_parse_retries: c.max_parse_retries,
            loop_guard_window: c.loop_guard_window,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown operation `{0}` in disabled_ops")]
    UnknownOperation(String),
    #[error("unknown role `{0}` (expected one of chart_spec, vision_describe, knowledge, summary, planner, final_answer, default)")]
    UnknownRole(String),
    #[error("role {0} is not bound and there is no `default` binding")]
    UnboundRole(ModelRole),
    #[error("role binding refers to unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error("workers must be at least 1")]
    ZeroWorkers,
    #[error("script {path}: {source}")]
    Script { path: PathBuf, source: ReplayError },
    #[error("provider `{id}`: {message}")]
    Provider { id: String, message: String },
    #[error("templates: {0}")]
    Templates(#[from] TemplateError),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunConfig {
    /// A config binding every role to one scripted replay file.
    pub fn scripted(script: impl Into<PathBuf>, mode: RunMode) -> RunConfig {
        RunConfig {
            mode,
            disabled_ops: Vec::new(),
            limits: LoopLimitsConfig::default(),
            budget: BudgetConfig::default(),
            templates: None,
            workers: default_workers(),
            cache: None,
            split: None,
            providers: BTreeMap::from([(
                "scripted".to_string(),
                ProviderConfig::Scripted {
                    script: script.into(),
                    strict: true,
                    vision: true,
                },
            )]),
            roles: BTreeMap::from([(
                "default".to_string(),
                RoleConfig {
                    provider: "scripted".into(),
                    model: "replay".into(),
                    temperature: None,
                    max_tokens: None,
                    seed: None,
                },
            )]),
        }
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = RunConfig::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = self.templates.as_mut() {
            fix(t);
        }
        if let Some(c) = self.cache.as_mut() {
            fix(c);
        }
        for p in self.providers.values_mut() {
            if let ProviderConfig::Scripted { script, .. } = p {
                fix(script);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.allowed_ops()?;
        if self.limits.max_steps == 0 {
            return Err(ConfigError::ZeroSteps);
        }
        if self.workers == 0 {
            return Err(ConfigError::ZeroWorkers);
        }
        for (name, role) in &self.roles {
            if name != "default" {
                ModelRole::from_str(name).map_err(|_| ConfigError::UnknownRole(name.clone()))?;
            }
            if !self.providers.contains_key(&role.provider) {
                return Err(ConfigError::UnknownProvider(role.provider.clone()));
            }
        }
        for role in ModelRole::ALL {
            self.role_config(role)?;
        }
        Ok(())
    }

    fn role_config(&self, role: ModelRole) -> Result<&RoleConfig, ConfigError> {
        self.roles
            .get(role.name())
            .or_else(|| self.roles.get("default"))
            .ok_or(ConfigError::UnboundRole(role))
    }

    pub fn disabled(&self) -> Result<Vec<OpKind>, ConfigError> {
        self.disabled_ops
            .iter()
            .map(|n| OpKind::from_name(n).ok_or_else(|| ConfigError::UnknownOperation(n.clone())))
            .collect()
    }

    /// Operations offered to the planner.
    pub fn allowed_ops(&self) -> Result<OpSet, ConfigError> {
        Ok(self.disabled()?.into_iter().fold(OpSet::all(), OpSet::without))
    }

    pub fn loop_limits(&self) -> LoopLimits {
        self.limits.into()
    }

    pub fn load_templates(&self) -> Result<TemplateSet, ConfigError> {
        match &self.templates {
            Some(dir) => Ok(TemplateSet::load(dir)?),
            None => Ok(TemplateSet::builtin()),
        }
    }

    /// Instantiates providers and binds every role.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let mut providers: BTreeMap<&str, Arc<dyn Provider>> = BTreeMap::new();
        for (id, p) in &self.providers {
            let provider: Arc<dyn Provider> = match p {
                ProviderConfig::Scripted { script, strict, vision } => {
                    let mut sp = ScriptedProvider::from_file(script, *strict).map_err(|source| {
                        ConfigError::Script {
                            path: script.clone(),
                            source,
                        }
                    })?;
                    if !vision {
                        sp = sp.without_vision();
                    }
                    Arc::new(sp)
                }
                ProviderConfig::Http(c) => Arc::new(HttpProvider::new(id.clone(), c.clone()).map_err(|e| {
                    ConfigError::Provider {
                        id: id.clone(),
                        message: e.to_string(),
                    }
                })?),
            };
            providers.insert(id, provider);
        }
        let mut gateway = Gateway::new();
        for role in ModelRole::ALL {
            let rc = self.role_config(role)?;
            let provider = providers
                .get(rc.provider.as_str())
                .ok_or_else(|| ConfigError::UnknownProvider(rc.provider.clone()))?;
            gateway.bind(role, provider.clone(), rc.model.clone(), rc.decoding());
        }
        if let Some(dir) = &self.cache {
            let cache = ResponseCache::open(dir).map_err(|source| ConfigError::Cache {
                path: dir.clone(),
                source,
            })?;
            gateway = gateway.with_cache(Arc::new(cache));
        }
        Ok(gateway)
    }
}
