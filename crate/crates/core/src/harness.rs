//! Experiment grids, aggregation and comparison tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autogen::{GenerationOutcome, Generator, LoopConfig, OutcomeStatus};
use crate::bounds::FormatError;
use crate::llm::{Backend, BackendError, Transcript};
use crate::model::{load_model, ModelSpec};
use crate::prompt::{LanguagePolicy, PromptError, PromptForge, Strategy, DOMINANT_LANGUAGE};
use crate::rules::{score_rules, RuleId, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("dataset {0} contains no model files")]
    EmptyDataset(PathBuf),
    #[error("model {path}: {message}")]
    Model { path: PathBuf, message: String },
    #[error("backend `{id}`: {source}")]
    Backend { id: String, source: BackendError },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid plan: {0}")]
    Plan(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dataset_dir: PathBuf,
    pub results_dir: PathBuf,
    pub backends: Vec<String>,
    pub strategies: Vec<Strategy>,
    /// Languages for the multilingual strategies; others always run in the
    /// dominant language only.
    pub languages: Vec<String>,
    pub runs_per_problem: usize,
    /// Request seed for run k is `seeds[k]` when given.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub loop_config: LoopConfig,
    /// Worker threads for backends that allow concurrent calls.
    pub parallelism: usize,
    /// Stop after this many newly executed cells.
    #[serde(default)]
    pub max_new_cells: Option<usize>,
    /// Caller's effective configuration, copied into every transcript header.
    #[serde(default)]
    pub provenance: Option<Value>,
}

impl ExperimentPlan {
    pub fn new(dataset_dir: impl Into<PathBuf>, results_dir: impl Into<PathBuf>) -> Self {
        ExperimentPlan {
            dataset_dir: dataset_dir.into(),
            results_dir: results_dir.into(),
            backends: Vec::new(),
            strategies: vec![Strategy::ZeroShot, Strategy::MlReplace],
            languages: vec!["zh".into()],
            runs_per_problem: 3,
            seeds: Vec::new(),
            loop_config: LoopConfig::default(),
            parallelism: 4,
            max_new_cells: None,
            provenance: None,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.runs_per_problem == 0 {
            return Err(HarnessError::Plan("runs_per_problem must be at least 1".into()));
        }
        if self.backends.is_empty() {
            return Err(HarnessError::Plan("no backends".into()));
        }
        if self.strategies.is_empty() {
            return Err(HarnessError::Plan("no strategies".into()));
        }
        if self.strategies.iter().any(|s| s.is_multilingual()) && self.languages.is_empty() {
            return Err(HarnessError::Plan("multilingual strategy without languages".into()));
        }
        Ok(())
    }
}

/// Coordinates of one grid cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub problem: String,
    pub backend: String,
    pub strategy: Strategy,
    pub language: String,
    pub run: usize,
}

fn file_part(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

impl CellKey {
    pub fn stem(&self) -> String {
        format!(
            "{}__{}__{}__{}__r{}",
            file_part(&self.problem),
            file_part(&self.backend),
            self.strategy,
            file_part(&self.language),
            self.run
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: CellKey,
    pub seed: Option<u64>,
    pub status: OutcomeStatus,
    pub iterations: usize,
    pub backend_calls: usize,
    /// Sum of per-call latencies as logged; zero for deterministic backends.
    pub latency_ms: u64,
    pub wall_ms: u64,
    pub final_report: Option<ValidationReport>,
    pub final_bounds: Option<Value>,
    pub transcript: PathBuf,
    pub outcome: GenerationOutcome,
}

impl RunRecord {
    /// Final report, or an all-fail one when the run never got an answer.
    pub fn effective_report(&self) -> ValidationReport {
        self.final_report.clone().unwrap_or_else(|| {
            ValidationReport::invalid_json(&FormatError {
                key: None,
                message: self.outcome.error.clone().unwrap_or_else(|| "no output".into()),
            })
        })
    }
}

/// Supplies a backend for each id named in a plan.
pub trait BackendFactory: Sync {
    fn create(&self, id: &str) -> Result<Arc<dyn Backend>, BackendError>;
}

impl<F> BackendFactory for F
where
    F: Fn(&str) -> Result<Arc<dyn Backend>, BackendError> + Sync,
{
    fn create(&self, id: &str) -> Result<Arc<dyn Backend>, BackendError> {
        self(id)
    }
}

/// Model files in `dir`, sorted by file name; the problem id is the stem.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, ModelSpec)>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::EmptyDataset(dir.to_path_buf()));
    }
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
            let model = load_model(&text).map_err(|e| HarnessError::Model {
                path: p.clone(),
                message: e.to_string(),
            })?;
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, model))
        })
        .collect()
}

pub fn grid(plan: &ExperimentPlan, problems: &[String]) -> Vec<CellKey> {
    let mut cells = Vec::new();
    for problem in problems {
        for backend in &plan.backends {
            for &strategy in &plan.strategies {
                let langs: Vec<String> = if strategy.is_multilingual() {
                    plan.languages.clone()
                } else {
                    vec![DOMINANT_LANGUAGE.to_string()]
                };
                for language in langs {
                    for run in 0..plan.runs_per_problem {
                        cells.push(CellKey {
                            problem: problem.clone(),
                            backend: backend.clone(),
                            strategy,
                            language: language.clone(),
                            run,
                        });
                    }
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    /// Every finished cell, loaded or new, in grid order.
    pub records: Vec<RunRecord>,
    pub newly_run: usize,
    pub skipped: usize,
}

fn read_record(path: &Path) -> Option<RunRecord> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_atomic(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

struct Ctx<'a> {
    plan: &'a ExperimentPlan,
    forge: &'a PromptForge,
    models: HashMap<String, ModelSpec>,
    backends: HashMap<String, Arc<dyn Backend>>,
}

impl Ctx<'_> {
    fn run_cell(&self, key: &CellKey) -> Result<RunRecord, HarnessError> {
        let model = &self.models[&key.problem];
        let backend = &self.backends[&key.backend];
        let mut config = self.plan.loop_config.clone();
        if key.strategy.is_multilingual() {
            config.policy = LanguagePolicy::Fixed(key.language.clone());
        }
        let seed = self
            .plan
            .seeds
            .get(key.run)
            .copied()
            .or_else(|| config.request.seed.map(|s| s.wrapping_add(key.run as u64)));
        config.request.seed = seed;
        let header = json!({
            "cell": key,
            "backend": backend.descriptor(),
            "config": config,
            "run_config": self.plan.provenance,
        });
        let transcript = Transcript::with_header(header);
        let started = Instant::now();
        let outcome = Generator::new(self.forge, config).run(model, key.strategy, backend.as_ref(), &transcript)?;
        let wall_ms = started.elapsed().as_millis() as u64;
        let tpath = self
            .plan
            .results_dir
            .join("transcripts")
            .join(format!("{}.jsonl", key.stem()));
        transcript.write_jsonl(&tpath).map_err(io_err(&tpath))?;
        let latency_ms = transcript.records().iter().filter_map(|r| r.latency_ms).sum();
        Ok(RunRecord {
            key: key.clone(),
            seed,
            status: outcome.status,
            iterations: outcome.iterations.len(),
            backend_calls: outcome.backend_calls,
            latency_ms,
            wall_ms,
            final_report: outcome.final_report().cloned(),
            final_bounds: outcome.final_bounds.as_ref().map(|b| b.to_value()),
            transcript: tpath,
            outcome,
        })
    }
}

/// Runs every grid cell that has no record on disk yet.
pub fn run_experiment(
    plan: &ExperimentPlan,
    forge: &PromptForge,
    factory: &dyn BackendFactory,
) -> Result<ExperimentRun, HarnessError> {
    plan.validate()?;
    let dataset = load_dataset(&plan.dataset_dir)?;
    let problems: Vec<String> = dataset.iter().map(|(id, _)| id.clone()).collect();
    let mut backends = HashMap::new();
    for id in &plan.backends {
        let b = factory.create(id).map_err(|source| HarnessError::Backend {
            id: id.clone(),
            source,
        })?;
        backends.insert(id.clone(), b);
    }
    let ctx = Ctx {
        plan,
        forge,
        models: dataset.into_iter().collect(),
        backends,
    };
    let records_dir = plan.results_dir.join("records");
    let cells = grid(plan, &problems);
    let mut done: BTreeMap<usize, RunRecord> = BTreeMap::new();
    let mut todo = Vec::new();
    for (i, key) in cells.iter().enumerate() {
        match read_record(&records_dir.join(format!("{}.json", key.stem()))) {
            Some(r) if r.key == *key => {
                done.insert(i, r);
            }
            _ => todo.push(i),
        }
    }
    let skipped = done.len();
    if let Some(limit) = plan.max_new_cells {
        todo.truncate(limit);
    }
    let execute = |i: usize| -> Result<(usize, RunRecord), HarnessError> {
        let key = &cells[i];
        let record = ctx.run_cell(key)?;
        let path = records_dir.join(format!("{}.json", key.stem()));
        let text = serde_json::to_string_pretty(&record).expect("record serializes");
        write_atomic(&path, &text)?;
        log::info!("{} -> {}", key.stem(), record.status.as_str());
        Ok((i, record))
    };
    // single-flight backends run in grid order, the rest on the pool
    let (serial, parallel): (Vec<usize>, Vec<usize>) = todo
        .iter()
        .partition(|&&i| ctx.backends[&cells[i].backend].descriptor().single_flight);
    let newly_run = serial.len() + parallel.len();
    let collected = Mutex::new(Vec::new());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::Plan(e.to_string()))?;
    let (serial_res, parallel_res) = pool.join(
        || -> Result<(), HarnessError> {
            for &i in &serial {
                let r = execute(i)?;
                collected.lock().unwrap_or_else(|e| e.into_inner()).push(r);
            }
            Ok(())
        },
        || -> Result<(), HarnessError> {
            let rs: Vec<_> = parallel.par_iter().map(|&i| execute(i)).collect::<Result<_, _>>()?;
            collected.lock().unwrap_or_else(|e| e.into_inner()).extend(rs);
            Ok(())
        },
    );
    serial_res?;
    parallel_res?;
    done.extend(collected.into_inner().unwrap_or_else(|e| e.into_inner()));
    Ok(ExperimentRun {
        records: done.into_values().collect(),
        newly_run,
        skipped,
    })
}

/// Loads every record under `results_dir/records`.
pub fn load_records(results_dir: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let dir = results_dir.join("records");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| HarnessError::Model {
                path: p.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub backend: String,
    pub strategy: Strategy,
    pub language: String,
    pub runs: usize,
    pub json_validity_rate: f64,
    pub r4: f64,
    pub r7: f64,
    pub r8: f64,
    pub final_score: f64,
    pub mean_iterations: f64,
    pub mean_backend_calls: f64,
    pub mean_latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by (backend, strategy, language).
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, backend: &str, strategy: Strategy, language: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.backend == backend && r.strategy == strategy && r.language == language)
    }

    pub fn backends(&self) -> Vec<&str> {
        let s: BTreeSet<&str> = self.rows.iter().map(|r| r.backend.as_str()).collect();
        s.into_iter().collect()
    }
}

/// Groups by (backend, strategy, language). Order of `records` is irrelevant.
pub fn summarize(records: &[RunRecord]) -> EvalReport {
    let mut groups: BTreeMap<(String, Strategy, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.key.backend.clone(), r.key.strategy, r.key.language.clone()))
            .or_default()
            .push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((backend, strategy, language), rs)| {
            let reports: Vec<ValidationReport> = rs.iter().map(|r| r.effective_report()).collect();
            let scores = score_rules(&reports).expect("groups are never empty");
            let n = rs.len();
            let mean = |total: u64| total as f64 / n as f64;
            ReportRow {
                backend,
                strategy,
                language,
                runs: n,
                json_validity_rate: reports.iter().filter(|r| r.json_valid).count() as f64 / n as f64,
                r4: scores.r4,
                r7: scores.r7,
                r8: scores.r8,
                final_score: scores.final_score,
                mean_iterations: mean(rs.iter().map(|r| r.iterations as u64).sum()),
                mean_backend_calls: mean(rs.iter().map(|r| r.backend_calls as u64).sum()),
                mean_latency_ms: mean(rs.iter().map(|r| r.latency_ms).sum()),
            }
        })
        .collect();
    EvalReport { rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}` (expected markdown or csv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    FinalScore,
    JsonValidity,
    R4,
    R7,
    R8,
    MeanIterations,
    MeanBackendCalls,
    MeanLatencyMs,
}

impl Metric {
    pub fn of(self, row: &ReportRow) -> f64 {
        match self {
            Metric::FinalScore => row.final_score,
            Metric::JsonValidity => row.json_validity_rate,
            Metric::R4 => row.r4,
            Metric::R7 => row.r7,
            Metric::R8 => row.r8,
            Metric::MeanIterations => row.mean_iterations,
            Metric::MeanBackendCalls => row.mean_backend_calls,
            Metric::MeanLatencyMs => row.mean_latency_ms,
        }
    }

    pub fn rule(rule: RuleId) -> Option<Metric> {
        match rule {
            RuleId::R4 => Some(Metric::R4),
            RuleId::R7 => Some(Metric::R7),
            RuleId::R8 => Some(Metric::R8),
            _ => None,
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.replace('-', "_")))
            .map_err(|_| format!("unknown metric `{s}`"))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("metric serializes");
        f.write_str(v.as_str().unwrap_or_default())
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    render_metric(report, format, Metric::FinalScore)
}

/// One row per (strategy, language), one column per backend.
pub fn render_metric(report: &EvalReport, format: ReportFormat, metric: Metric) -> String {
    let backends = report.backends();
    let mut table: BTreeMap<(Strategy, &str), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in &report.rows {
        table
            .entry((r.strategy, r.language.as_str()))
            .or_default()
            .insert(r.backend.as_str(), metric.of(r));
    }
    let cell = |v: Option<&f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    match format {
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str("| strategy | language |");
            for b in &backends {
                out.push_str(&format!(" {b} |"));
            }
            out.push_str("\n|---|---|");
            for _ in &backends {
                out.push_str("---:|");
            }
            out.push('\n');
            for ((s, l), vals) in &table {
                out.push_str(&format!("| {s} | {l} |"));
                for b in &backends {
                    out.push_str(&format!(" {} |", cell(vals.get(b))));
                }
                out.push('\n');
            }
            out
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["strategy".to_string(), "language".to_string()];
            header.extend(backends.iter().map(|b| b.to_string()));
            w.write_record(&header).expect("in-memory csv");
            for ((s, l), vals) in &table {
                let mut rec = vec![s.to_string(), l.to_string()];
                rec.extend(backends.iter().map(|b| cell(vals.get(b))));
                w.write_record(&rec).expect("in-memory csv");
            }
            String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub backend: String,
    pub strategy: Strategy,
    pub language: String,
    pub value: f64,
    pub baseline: f64,
    pub delta: f64,
}

/// Each row's metric minus the baseline row of the same backend.
pub fn deltas_vs_baseline(
    report: &EvalReport,
    baseline: (Strategy, &str),
    metric: Metric,
) -> Vec<DeltaRow> {
    report
        .rows
        .iter()
        .filter(|r| (r.strategy, r.language.as_str()) != baseline)
        .filter_map(|r| {
            let base = report.row(&r.backend, baseline.0, baseline.1)?;
            let (v, b) = (metric.of(r), metric.of(base));
            Some(DeltaRow {
                backend: r.backend.clone(),
                strategy: r.strategy,
                language: r.language.clone(),
                value: v,
                baseline: b,
                delta: v - b,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let mut plan = ExperimentPlan::new("d", "r");
        plan.backends = vec!["a".into()];
        plan.strategies = vec![Strategy::ZeroShot, Strategy::MlReplace];
        plan.languages = vec!["zh".into(), "ko".into()];
        plan.runs_per_problem = 2;
        let cells = grid(&plan, &["p1".into(), "p2".into()]);
        assert_eq!(cells.len(), 2 * (1 + 2) * 2);
        assert_eq!(cells[0].stem(), "p1__a__zero_shot__en__r0");
    }

    #[test]
    fn empty_report_renders_header() {
        let md = render_report(&EvalReport::default(), ReportFormat::Markdown);
        assert_eq!(md.lines().count(), 2);
        let csv = render_report(&EvalReport::default(), ReportFormat::Csv);
        assert_eq!(csv.trim(), "strategy,language");
    }

    #[test]
    fn metric_names() {
        assert_eq!("final_score".parse::<Metric>().unwrap(), Metric::FinalScore);
        assert_eq!(Metric::R4.to_string(), "r4");
    }
}
