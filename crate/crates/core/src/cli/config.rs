//! Declarative run configuration: a TOML file, then environment variables,
//! then command-line flags, each overriding the last.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::agent::{
    ChatEndpointPolicy, LoopConfig, PolicyBackend, ScriptedPolicy, DEFAULT_BUDGET, DEFAULT_MAX_MODEL_TURNS,
};
use crate::datagen::CurationConfig;
use crate::geodesy::ThresholdLadder;
use crate::rl::FilterConfig;
use crate::tools::{HttpSettings, MockCorpus, ToolRegistry, GEOCODE_TOOL, SEARCH_TOOL, ZOOM_TOOL};

pub const ENV_PREFIX: &str = "GEOAGENT_";
pub const POLICY_API_KEY_ENV: &str = "POLICY_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    #[default]
    Agent,
    Cot,
}

impl FromStr for ModeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "agent" => Ok(Self::Agent),
            "cot" => Ok(Self::Cot),
            other => Err(format!("unknown mode `{other}` (agent, cot)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
}

impl FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(Self::Mock),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown backend `{other}` (mock, live)")),
        }
    }
}

/// Where model turns come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicyConfig {
    Scripted { script: PathBuf },
    Chat {
        base_url: String,
        model: String,
        #[serde(default)]
        temperature: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolsConfig {
    pub enabled: Vec<String>,
    pub mock_corpus: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self {
            enabled: [GEOCODE_TOOL, SEARCH_TOOL, ZOOM_TOOL].map(String::from).to_vec(),
            mock_corpus: None,
            timeout_secs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: ModeArg,
    pub budget: usize,
    pub max_model_turns: usize,
    pub parallelism: usize,
    pub backend: BackendKind,
    pub out_dir: PathBuf,
    /// CSV with `image_id,lat,lon`.
    pub ground_truth: Option<PathBuf>,
    /// Image files named by id. Without it every image is a blank canvas of
    /// `blank_image_size`, which is enough for scripted runs.
    pub image_dir: Option<PathBuf>,
    pub blank_image_size: [u32; 2],
    pub thresholds_km: ThresholdLadder,
    pub policy: Option<PolicyConfig>,
    pub observer: Option<PolicyConfig>,
    pub tools: ToolsConfig,
    pub curation: CurationConfig,
    pub filter: FilterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: ModeArg::Agent,
            budget: DEFAULT_BUDGET,
            max_model_turns: DEFAULT_MAX_MODEL_TURNS,
            parallelism: 1,
            backend: BackendKind::Mock,
            out_dir: PathBuf::from("out"),
            ground_truth: None,
            image_dir: None,
            blank_image_size: [1024, 768],
            thresholds_km: ThresholdLadder::default(),
            policy: None,
            observer: None,
            tools: ToolsConfig::default(),
            curation: CurationConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

/// Values supplied on the command line; `None` leaves the lower layers
/// alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<ModeArg>,
    pub budget: Option<usize>,
    pub parallelism: Option<usize>,
    pub backend: Option<BackendKind>,
    pub thresholds: Option<Vec<f64>>,
    pub k_trials: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

pub(crate) fn parse_thresholds(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad threshold `{t}`: {e}")))
        .collect()
}

impl Overrides {
    /// Read `GEOAGENT_MODE`, `GEOAGENT_BUDGET`, `GEOAGENT_PARALLELISM`,
    /// `GEOAGENT_BACKEND`, `GEOAGENT_THRESHOLDS`, `GEOAGENT_K_TRIALS` and
    /// `GEOAGENT_OUT_DIR`.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let get = |name: &str| lookup(&format!("{ENV_PREFIX}{name}"));
        let bad = |name: &str, e: String| CliError::Config(format!("{ENV_PREFIX}{name}: {e}"));
        let num = |name: &str| -> Result<Option<usize>, CliError> {
            get(name).map(|v| v.trim().parse::<usize>().map_err(|e| bad(name, e.to_string()))).transpose()
        };
        Ok(Self {
            mode: get("MODE").map(|v| v.parse().map_err(|e| bad("MODE", e))).transpose()?,
            budget: num("BUDGET")?,
            parallelism: num("PARALLELISM")?,
            backend: get("BACKEND").map(|v| v.parse().map_err(|e| bad("BACKEND", e))).transpose()?,
            thresholds: get("THRESHOLDS").map(|v| parse_thresholds(&v).map_err(|e| bad("THRESHOLDS", e))).transpose()?,
            k_trials: num("K_TRIALS")?,
            out_dir: get("OUT_DIR").map(PathBuf::from),
        })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Load a config file and resolve its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [&mut self.ground_truth, &mut self.image_dir, &mut self.tools.mock_corpus].into_iter().flatten() {
            fix(p);
        }
        for pc in [&mut self.policy, &mut self.observer].into_iter().flatten() {
            if let PolicyConfig::Scripted { script } = pc {
                fix(script);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(b) = o.budget {
            self.budget = b;
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(b) = o.backend {
            self.backend = b;
        }
        if let Some(t) = &o.thresholds {
            let ladder = ThresholdLadder::new(t.clone()).map_err(|e| CliError::Config(e.to_string()))?;
            self.thresholds_km = ladder.clone();
            self.filter.regime_thresholds_km = ladder;
        }
        if let Some(k) = o.k_trials {
            self.filter.trials = k;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        Ok(())
    }

    /// Checks that hold for every subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        if self.mode == ModeArg::Agent && self.tools.enabled.is_empty() {
            return Err(CliError::Config("agent mode needs at least one enabled tool".into()));
        }
        if self.blank_image_size.contains(&0) {
            return Err(CliError::Config("blank_image_size must be nonzero".into()));
        }
        self.curation.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.filter.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let must_exist = |p: &Option<PathBuf>, what: &str| match p {
            Some(p) if !p.exists() => Err(CliError::Config(format!("{what} {} does not exist", p.display()))),
            _ => Ok(()),
        };
        must_exist(&self.ground_truth, "ground truth")?;
        must_exist(&self.image_dir, "image directory")?;
        must_exist(&self.tools.mock_corpus, "mock corpus")?;
        for pc in [&self.policy, &self.observer].into_iter().flatten() {
            if let PolicyConfig::Scripted { script } = pc {
                if !script.exists() {
                    return Err(CliError::Config(format!("policy script {} does not exist", script.display())));
                }
            }
        }
        if self.out_dir.exists() && !self.out_dir.is_dir() {
            return Err(CliError::Config(format!("{} exists and is not a directory", self.out_dir.display())));
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<ToolRegistry, CliError> {
        let full = match self.backend {
            BackendKind::Mock => {
                let corpus = match &self.tools.mock_corpus {
                    Some(p) => MockCorpus::load(p).map_err(|e| CliError::Config(e.to_string()))?,
                    None => MockCorpus::default(),
                };
                ToolRegistry::mock(&corpus)
            }
            BackendKind::Live => {
                let settings = HttpSettings { timeout: Duration::from_secs(self.tools.timeout_secs), ..HttpSettings::default() };
                ToolRegistry::live_from_env(settings).map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        full.retain(&self.tools.enabled).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn loop_config(&self, policy: Arc<dyn PolicyBackend>) -> Result<LoopConfig, CliError> {
        let registry = Arc::new(self.registry()?);
        LoopConfig::new(policy, registry)
            .with_limits(self.budget, self.max_model_turns)
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn build_policy(
    pc: Option<&PolicyConfig>,
    what: &str,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<Arc<dyn PolicyBackend>, CliError> {
    match pc {
        None => Err(CliError::Config(format!("no [{what}] section configured"))),
        Some(PolicyConfig::Scripted { script }) => ScriptedPolicy::load(script)
            .map(|p| Arc::new(p) as Arc<dyn PolicyBackend>)
            .map_err(|e| CliError::Config(e.to_string())),
        Some(PolicyConfig::Chat { base_url, model, temperature }) => {
            let mut p = ChatEndpointPolicy::new(base_url, model.clone()).map_err(|e| CliError::Config(e.to_string()))?;
            if let Some(key) = lookup(POLICY_API_KEY_ENV) {
                p = p.with_api_key(key);
            }
            if let Some(t) = temperature {
                p = p.with_temperature(*t);
            }
            Ok(Arc::new(p))
        }
    }
}
