//! Run configuration: TOML file, then `MLPROMPT_*` environment, then flags.
//! Clap resolves flag-over-env; the file only fills what both left unset.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use mlprompt_core::autogen::LoopConfig;
use mlprompt_core::llm::{Backend, BackendError, HttpBackend, HttpConfig, RequestParams, ScriptEntry, ScriptedBackend};
use mlprompt_core::prompt::{LanguagePolicy, Strategy};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{CliError, Common};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub strategy: Option<String>,
    pub strategies: Vec<String>,
    pub languages: Vec<String>,
    /// Rotate through `languages` inside one generation instead of fixing the first.
    pub rotate_languages: Option<bool>,
    pub seed: Option<u64>,
    pub seeds: Vec<u64>,
    pub budget: Option<usize>,
    pub runs_per_problem: Option<usize>,
    pub parallelism: Option<usize>,
    pub dataset_dir: Option<PathBuf>,
    pub results_dir: Option<PathBuf>,
    pub reassert_format: Option<bool>,
    pub sc_samples: Option<usize>,
    pub max_param_gap: Option<String>,
    pub request: RequestSection,
    pub backend: Option<BackendSection>,
    pub backends: Vec<BackendSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestSection {
    pub model_name: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub id: Option<String>,
    pub kind: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub base_url: Option<String>,
    pub path: Option<String>,
    pub api_key_env: Option<String>,
    pub auth_header: Option<String>,
    pub auth_scheme: Option<String>,
    pub model_name: Option<String>,
    pub max_retries: Option<u32>,
    pub single_flight: Option<bool>,
}

/// A backend with every path and default settled.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackendSpec {
    Http(HttpConfig),
    Scripted { id: String, script: PathBuf },
}

impl BackendSpec {
    pub fn id(&self) -> &str {
        match self {
            BackendSpec::Http(c) => &c.id,
            BackendSpec::Scripted { id, .. } => id,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Backend>, BackendError> {
        match self {
            BackendSpec::Http(c) => Ok(Arc::new(HttpBackend::from_env(c.clone())?)),
            BackendSpec::Scripted { id, script } => Ok(Arc::new(load_script(script)?.with_id(id.clone()))),
        }
    }
}

/// A script file is a JSON list of entries, or `{"entries": [...], "cycle": true}`.
pub fn load_script(path: &Path) -> Result<ScriptedBackend, BackendError> {
    let bad = |m: String| BackendError::Config(format!("script {}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let (entries, cycle) = match value {
        Value::Array(_) => (value, false),
        Value::Object(mut m) => {
            let cycle = m.get("cycle").and_then(Value::as_bool).unwrap_or(false);
            (m.remove("entries").ok_or_else(|| bad("missing `entries`".into()))?, cycle)
        }
        _ => return Err(bad("expected a list or an object".into())),
    };
    let entries: Vec<ScriptEntry> = serde_json::from_value(entries).map_err(|e| bad(e.to_string()))?;
    if entries.is_empty() {
        return Err(bad("no entries".into()));
    }
    let b = ScriptedBackend::new(entries);
    Ok(if cycle { b.cycling() } else { b })
}

/// Effective settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub config_file: Option<PathBuf>,
    pub strategies: Vec<Strategy>,
    pub languages: Vec<String>,
    pub rotate_languages: bool,
    pub seeds: Vec<u64>,
    pub budget: usize,
    pub runs_per_problem: usize,
    pub parallelism: usize,
    pub dataset_dir: Option<PathBuf>,
    pub results_dir: Option<PathBuf>,
    pub loop_config: LoopConfig,
    pub backends: Vec<BackendSpec>,
}

fn split_list(items: &[String]) -> Vec<String> {
    items
        .iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(common: &Common) -> Result<RunConfig, CliError> {
        let (file, base) = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
                let file: FileConfig = toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, base)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let cwd = std::env::current_dir().map_err(|e| CliError::Config(e.to_string()))?;
        let file_path = |p: &Option<PathBuf>| p.as_ref().map(|p| resolve(&cwd, &resolve(&base, p)));
        let flag_path = |p: &Option<PathBuf>| p.as_ref().map(|p| resolve(&cwd, p));

        let strategy_names = if !common.strategy.is_empty() {
            split_list(&common.strategy)
        } else if !file.strategies.is_empty() {
            file.strategies.clone()
        } else if let Some(s) = &file.strategy {
            vec![s.clone()]
        } else {
            vec![Strategy::MlReplace.to_string()]
        };
        let strategies = strategy_names
            .iter()
            .map(|s| s.parse::<Strategy>().map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;

        let mut languages = split_list(&common.language);
        if languages.is_empty() {
            languages = file.languages.clone();
        }
        if languages.is_empty() {
            languages = vec!["zh".into()];
        }
        let rotate_languages = common.rotate || file.rotate_languages.unwrap_or(false);

        let mut seeds = match common.seed {
            Some(s) => vec![s],
            None if !file.seeds.is_empty() => file.seeds.clone(),
            None => file.seed.into_iter().collect(),
        };
        seeds.dedup();

        let budget = common.budget.or(file.budget).unwrap_or(3);
        if budget == 0 {
            return Err(CliError::Config("budget must be at least 1".into()));
        }
        let runs_per_problem = common.runs.or(file.runs_per_problem).unwrap_or(3);
        if runs_per_problem == 0 {
            return Err(CliError::Config("runs per problem must be at least 1".into()));
        }

        let mut request = RequestParams::default();
        if let Some(m) = common.model_name.clone().or(file.request.model_name.clone()) {
            request.model_name = m;
        }
        if let Some(t) = common.temperature.or(file.request.temperature) {
            request.temperature = t;
        }
        if let Some(t) = file.request.max_tokens {
            request.max_tokens = t;
        }
        if let Some(ms) = file.request.timeout_ms {
            request.timeout = Duration::from_millis(ms);
        }
        request.seed = seeds.first().copied();

        let mut loop_config = LoopConfig {
            budget,
            request,
            ..LoopConfig::default()
        };
        loop_config.policy = if rotate_languages {
            LanguagePolicy::Rotation(languages.clone())
        } else {
            LanguagePolicy::Fixed(languages[0].clone())
        };
        if let Some(r) = file.reassert_format {
            loop_config.reassert_format = r;
        }
        if let Some(n) = file.sc_samples {
            loop_config.sc_samples = n;
        }
        if let Some(gap) = common.max_gap.clone().or(file.max_param_gap.clone()) {
            loop_config.rules = loop_config
                .rules
                .with_max_gap(&gap)
                .map_err(|_| CliError::Config(format!("max gap `{gap}` is not a decimal")))?;
        }

        let backends = Self::backends(common, &file, &|p| file_path(p), &|p| flag_path(p))?;

        Ok(RunConfig {
            config_file: common.config.clone(),
            strategies,
            languages,
            rotate_languages,
            seeds,
            budget,
            runs_per_problem,
            parallelism: common.parallelism.or(file.parallelism).unwrap_or(4),
            dataset_dir: flag_path(&common.dataset).or_else(|| file_path(&file.dataset_dir)),
            results_dir: flag_path(&common.results_dir).or_else(|| file_path(&file.results_dir)),
            loop_config,
            backends,
        })
    }

    fn backends(
        common: &Common,
        file: &FileConfig,
        file_path: &dyn Fn(&Option<PathBuf>) -> Option<PathBuf>,
        flag_path: &dyn Fn(&Option<PathBuf>) -> Option<PathBuf>,
    ) -> Result<Vec<BackendSpec>, CliError> {
        // flags describe a single backend and replace whatever the file lists
        if let Some(script) = flag_path(&common.script) {
            return Ok(vec![BackendSpec::Scripted {
                id: common.backend_id.clone().unwrap_or_else(|| "scripted".into()),
                script,
            }]);
        }
        let sections: Vec<BackendSection> = if !file.backends.is_empty() {
            file.backends.clone()
        } else {
            file.backend.clone().into_iter().collect()
        };
        let mut specs = Vec::new();
        if sections.is_empty() {
            let mut http = HttpConfig::default();
            if let Some(u) = &common.base_url {
                http.base_url = u.clone();
            }
            if let Some(id) = &common.backend_id {
                http.id = id.clone();
            }
            specs.push(BackendSpec::Http(http));
            return Ok(specs);
        }
        let single = sections.len() == 1;
        for (i, s) in sections.into_iter().enumerate() {
            let kind = s.kind.clone().unwrap_or(if s.script.is_some() {
                BackendKind::Scripted
            } else {
                BackendKind::Http
            });
            let mut id = s.id.clone();
            if single && common.backend_id.is_some() {
                id = common.backend_id.clone();
            }
            match kind {
                BackendKind::Scripted => {
                    let script = file_path(&s.script)
                        .ok_or_else(|| CliError::Config(format!("scripted backend #{i} has no script")))?;
                    specs.push(BackendSpec::Scripted {
                        id: id.unwrap_or_else(|| "scripted".into()),
                        script,
                    });
                }
                BackendKind::Http => {
                    let mut http = HttpConfig::default();
                    if let Some(id) = id {
                        http.id = id;
                    }
                    let url = if single { common.base_url.clone().or(s.base_url) } else { s.base_url };
                    if let Some(u) = url {
                        http.base_url = u;
                    }
                    if let Some(p) = s.path {
                        http.path = p;
                    }
                    if let Some(k) = s.api_key_env {
                        http.api_key_env = k;
                    }
                    if let Some(h) = s.auth_header {
                        http.auth_header = h;
                    }
                    if let Some(a) = s.auth_scheme {
                        http.auth_scheme = a;
                    }
                    if let Some(r) = s.max_retries {
                        http.max_retries = r;
                    }
                    if let Some(f) = s.single_flight {
                        http.single_flight = f;
                    }
                    http.model_name = s.model_name;
                    specs.push(BackendSpec::Http(http));
                }
            }
        }
        let mut ids: Vec<&str> = specs.iter().map(BackendSpec::id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("backend ids must be unique".into()));
        }
        Ok(specs)
    }

    pub fn strategy(&self) -> Strategy {
        self.strategies[0]
    }

    pub fn seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn backend(&self) -> Result<Arc<dyn Backend>, CliError> {
        self.backends[0].build().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
