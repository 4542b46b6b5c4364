use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mlprompt_core::harness::{self, ExperimentPlan, Metric, ReportFormat};
use mlprompt_core::instance::{build_instance, emit_lp, sample_data_with};
use mlprompt_core::llm::{Backend, BackendError, Transcript};
use mlprompt_core::prompt::{build_prompt, tot_step_prompts, LanguagePolicy, PromptForge, Strategy, TranslationTable};
use mlprompt_core::rules::{check_output, RuleId, ValidationReport};
use mlprompt_core::sql::{self, SqlRuleSet, SqlTask};
use mlprompt_core::{load_bounds, load_model, ModelSpec};
use serde_json::{json, Value};

mod config;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Input was read fine but failed a check.
    Validation(String),
    /// Bad flags, config, missing files, unreachable backend setup.
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

type CliResult = Result<Outcome, CliError>;

/// What a subcommand produced: text for people, JSON for `--json`.
struct Outcome {
    text: String,
    json: Value,
    /// Print the output, then exit 1.
    failed: bool,
}

impl Outcome {
    fn ok(text: String, json: Value) -> CliResult {
        Ok(Outcome { text, json, failed: false })
    }
}

#[derive(Parser, Debug)]
#[command(name = "mlprompt", version, about = "Rule-checked bounds generation and MIP instance synthesis")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true, env = "MLPROMPT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Base URL of an OpenAI-compatible endpoint.
    #[arg(long, global = true, env = "MLPROMPT_BASE_URL")]
    pub base_url: Option<String>,
    #[arg(long, global = true, env = "MLPROMPT_MODEL")]
    pub model_name: Option<String>,
    #[arg(long, global = true, env = "MLPROMPT_BACKEND_ID")]
    pub backend_id: Option<String>,
    /// Replay canned replies from a JSON script instead of calling a service.
    #[arg(long, global = true, env = "MLPROMPT_SCRIPT")]
    pub script: Option<PathBuf>,
    /// Strategy, or a comma list for `eval`.
    #[arg(long, global = true, env = "MLPROMPT_STRATEGY")]
    pub strategy: Vec<String>,
    /// Target language(s) for rewritten rules.
    #[arg(long, global = true, env = "MLPROMPT_LANGUAGES")]
    pub language: Vec<String>,
    /// Try the listed languages in turn instead of always the first.
    #[arg(long, global = true)]
    pub rotate: bool,
    #[arg(long, global = true, env = "MLPROMPT_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "MLPROMPT_BUDGET")]
    pub budget: Option<usize>,
    #[arg(long, global = true, env = "MLPROMPT_TEMPERATURE")]
    pub temperature: Option<f64>,
    #[arg(long, global = true, env = "MLPROMPT_RUNS")]
    pub runs: Option<usize>,
    #[arg(long, global = true, env = "MLPROMPT_PARALLELISM")]
    pub parallelism: Option<usize>,
    #[arg(long, global = true, env = "MLPROMPT_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, env = "MLPROMPT_RESULTS_DIR")]
    pub results_dir: Option<PathBuf>,
    /// Largest allowed ub - lb for parameters.
    #[arg(long, global = true)]
    pub max_gap: Option<String>,
    /// Extra translations, a JSON map like {"R8.de": "..."}.
    #[arg(long, global = true)]
    pub translations: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a model file and summarize it.
    Parse { model: PathBuf },
    /// Check a bounds file (or raw model output) against a model.
    Validate { model: PathBuf, bounds: PathBuf },
    /// Print the prompt a strategy would send.
    Prompt {
        model: PathBuf,
        /// Rules to show translated, e.g. R8,R4.
        #[arg(long)]
        translate: Vec<String>,
    },
    /// Run one generation and print the final bounds.
    Generate {
        model: PathBuf,
        /// Write the final bounds here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the call transcript (JSONL) here.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Sample concrete data and write an LP file.
    Instantiate {
        model: PathBuf,
        bounds: PathBuf,
        /// LP output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the sampled data as JSON.
        #[arg(long)]
        data_out: Option<PathBuf>,
    },
    /// Run an experiment grid over a dataset directory.
    Eval {
        /// Stop after this many new cells.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Error rate of generated SQL over repeated runs.
    SqlEval {
        task: PathBuf,
        /// Translate a rule, e.g. S4:ko.
        #[arg(long)]
        translate: Vec<String>,
        /// Repeat a rule, e.g. S4:2.
        #[arg(long)]
        repeat: Vec<String>,
        /// Leave the rules out of the prompt.
        #[arg(long)]
        no_rules: bool,
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Print the prompt instead of running it.
        #[arg(long)]
        dry_run: bool,
    },
    /// Render the table for a results directory.
    Report {
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long, default_value = "final_score")]
        metric: Metric,
        /// Show differences against this cell, e.g. zero_shot:en.
        #[arg(long)]
        baseline: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let json_mode = cli.common.json;
    match dispatch(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = if json_mode {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&out.json).expect("output serializes"))
            } else {
                write!(stdout, "{}", out.text)
            };
            ExitCode::from(if out.failed { 1 } else { 0 })
        }
        Err(e) => {
            let msg = match &e {
                CliError::Validation(m) | CliError::Config(m) => m,
            };
            if json_mode {
                println!("{}", json!({"ok": false, "error": msg, "exit_code": e.code()}));
            } else {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let common = &cli.common;
    match cli.command {
        Command::Parse { model } => cmd_parse(&model),
        Command::Validate { model, bounds } => cmd_validate(common, &model, &bounds),
        Command::Prompt { model, translate } => cmd_prompt(common, &model, &translate),
        Command::Generate { model, out, transcript } => cmd_generate(common, &model, out, transcript),
        Command::Instantiate {
            model,
            bounds,
            out,
            data_out,
        } => cmd_instantiate(common, &model, &bounds, out, data_out),
        Command::Eval { limit, format } => cmd_eval(common, limit, format),
        Command::SqlEval {
            task,
            translate,
            repeat,
            no_rules,
            transcript,
            dry_run,
        } => cmd_sql_eval(common, &task, &translate, &repeat, no_rules, transcript, dry_run),
        Command::Report {
            format,
            metric,
            baseline,
        } => cmd_report(common, format, metric, baseline),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn model_file(path: &Path) -> Result<ModelSpec, CliError> {
    load_model(&read(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn forge(common: &Common) -> Result<PromptForge, CliError> {
    let table = match &common.translations {
        Some(p) => TranslationTable::builtin_with_overrides(&read(p)?).map_err(|e| CliError::Config(e.to_string()))?,
        None => TranslationTable::builtin(),
    };
    Ok(PromptForge::new(table))
}

fn report_text(report: &ValidationReport) -> String {
    let mut s = String::new();
    if report.is_compliant() {
        s.push_str("compliant\n");
    } else {
        s.push_str("violations:\n");
        for v in &report.violations {
            s.push_str(&format!("  {} at {}: {}\n", v.rule.as_str(), v.location, v.message));
        }
    }
    s
}

fn cmd_parse(path: &Path) -> CliResult {
    let m = model_file(path)?;
    let text = format!(
        "{}: {} set(s), {} parameter(s), {} variable(s), {} objective(s), {} constraint(s)\n",
        m.title,
        m.sets.len(),
        m.parameters.len(),
        m.variables.len(),
        m.objectives.len(),
        m.constraints.len()
    );
    let json = json!({
        "ok": true,
        "counts": {
            "sets": m.sets.len(),
            "parameters": m.parameters.len(),
            "variables": m.variables.len(),
            "objectives": m.objectives.len(),
            "constraints": m.constraints.len(),
        },
        "model": m.to_value(),
    });
    Outcome::ok(text, json)
}

fn cmd_validate(common: &Common, model: &Path, bounds: &Path) -> CliResult {
    let cfg = RunConfig::load(common)?;
    let m = model_file(model)?;
    let (_, report) = check_output(&m, &read(bounds)?, &cfg.loop_config.rules);
    let ok = report.is_compliant();
    Ok(Outcome {
        text: report_text(&report),
        json: json!({"ok": ok, "report": report.to_transcript_json()}),
        failed: !ok,
    })
}

fn parse_rules(items: &[String]) -> Result<BTreeSet<RuleId>, CliError> {
    items
        .iter()
        .flat_map(|s| s.split(','))
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<RuleId>().map_err(CliError::Config))
        .collect()
}

fn cmd_prompt(common: &Common, model: &Path, translate: &[String]) -> CliResult {
    let cfg = RunConfig::load(common)?;
    let m = model_file(model)?;
    let forge = forge(common)?;
    let strategy = cfg.strategy();
    let cfg_err = |e: mlprompt_core::prompt::PromptError| CliError::Config(e.to_string());
    let mut plan = forge.initial_plan(strategy).map_err(cfg_err)?;
    let rules = parse_rules(translate)?;
    if !rules.is_empty() {
        let policy = LanguagePolicy::Fixed(cfg.languages[0].clone());
        plan = forge.apply_mlprompt(&plan, &rules, &policy).map_err(cfg_err)?;
    }
    let prompts: Vec<String> = if strategy == Strategy::Tot {
        tot_step_prompts(&m, &plan)
            .map_err(cfg_err)?
            .iter()
            .map(|s| s.prompt(&[]))
            .collect()
    } else {
        vec![build_prompt(&m, &plan).map_err(cfg_err)?]
    };
    let mut text = prompts.join("\n\n----\n\n");
    text.push('\n');
    Outcome::ok(text, json!({"ok": true, "strategy": strategy, "plan": plan, "prompts": prompts}))
}

fn cmd_generate(common: &Common, model: &Path, out: Option<PathBuf>, transcript_path: Option<PathBuf>) -> CliResult {
    let cfg = RunConfig::load(common)?;
    let m = model_file(model)?;
    let forge = forge(common)?;
    let backend = cfg.backend()?;
    let transcript = Transcript::with_header(json!({"run_config": cfg.to_json()}));
    let generator = mlprompt_core::Generator::new(&forge, cfg.loop_config.clone());
    let outcome = generator
        .run(&m, cfg.strategy(), backend.as_ref(), &transcript)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(p) = &transcript_path {
        write(p, &transcript.to_jsonl())?;
    }
    let bounds = outcome.final_bounds.as_ref().map(mlprompt_core::serialize_bounds);
    if let (Some(p), Some(b)) = (&out, &bounds) {
        write(p, b)?;
    }
    let compliant = outcome.status == mlprompt_core::OutcomeStatus::Compliant;
    let mut text = format!(
        "status: {}\niterations: {}\nbackend calls: {}\n",
        outcome.status.as_str(),
        outcome.iterations.len(),
        outcome.backend_calls
    );
    if let Some(e) = &outcome.error {
        text.push_str(&format!("error: {e}\n"));
    }
    if let Some(r) = outcome.final_report() {
        text.push_str(&report_text(r));
    }
    if let Some(b) = &bounds {
        text.push_str(b);
        text.push('\n');
    }
    let json = json!({
        "ok": compliant,
        "status": outcome.status.as_str(),
        "iterations": outcome.iterations.len(),
        "backend_calls": outcome.backend_calls,
        "final_bounds": outcome.final_bounds.as_ref().map(|b| b.to_value()),
        "final_report": outcome.final_report().map(|r| r.to_transcript_json()),
        "error": outcome.error,
    });
    Ok(Outcome {
        text,
        json,
        failed: !compliant,
    })
}

fn cmd_instantiate(
    common: &Common,
    model: &Path,
    bounds: &Path,
    out: Option<PathBuf>,
    data_out: Option<PathBuf>,
) -> CliResult {
    let cfg = RunConfig::load(common)?;
    let m = model_file(model)?;
    let b = load_bounds(&read(bounds)?).map_err(|e| CliError::Validation(format!("{}: {e}", bounds.display())))?;
    let seed = cfg.seed();
    let data = sample_data_with(&m, &b, seed, &cfg.loop_config.rules).map_err(|e| CliError::Validation(e.to_string()))?;
    let inst = build_instance(&m, &data).map_err(|e| CliError::Validation(e.to_string()))?;
    let lp = emit_lp(&inst);
    if let Some(p) = &data_out {
        write(p, &data.to_json_pretty())?;
    }
    let text = match &out {
        Some(p) => {
            write(p, &lp)?;
            format!("wrote {} ({} variables, {} rows)\n", p.display(), inst.n, inst.m)
        }
        None => lp.clone(),
    };
    let json = json!({
        "ok": true,
        "seed": seed,
        "n": inst.n,
        "m": inst.m,
        "lp_path": out,
        "lp": if out.is_none() { Some(lp) } else { None },
    });
    Outcome::ok(text, json)
}

fn cmd_eval(common: &Common, limit: Option<usize>, format: ReportFormat) -> CliResult {
    let cfg = RunConfig::load(common)?;
    let dataset = cfg
        .dataset_dir
        .clone()
        .ok_or_else(|| CliError::Config("eval needs --dataset or dataset_dir in the config".into()))?;
    let results = cfg
        .results_dir
        .clone()
        .ok_or_else(|| CliError::Config("eval needs --results-dir or results_dir in the config".into()))?;
    let forge = forge(common)?;
    let mut plan = ExperimentPlan::new(dataset, results.clone());
    plan.backends = cfg.backends.iter().map(|b| b.id().to_string()).collect();
    plan.strategies = cfg.strategies.clone();
    plan.languages = cfg.languages.clone();
    plan.runs_per_problem = cfg.runs_per_problem;
    plan.seeds = cfg.seeds.clone();
    plan.loop_config = cfg.loop_config.clone();
    plan.parallelism = cfg.parallelism;
    plan.max_new_cells = limit;
    plan.provenance = Some(cfg.to_json());
    let specs = cfg.backends.clone();
    let factory = move |id: &str| -> Result<Arc<dyn Backend>, BackendError> {
        specs
            .iter()
            .find(|s| s.id() == id)
            .ok_or_else(|| BackendError::Config(format!("unknown backend {id}")))?
            .build()
    };
    let run = harness::run_experiment(&plan, &forge, &factory).map_err(|e| CliError::Config(e.to_string()))?;
    let report = harness::summarize(&run.records);
    write(
        &results.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    let mut text = format!(
        "{} cells ({} new, {} already done)\n\n",
        run.records.len(),
        run.newly_run,
        run.skipped
    );
    text.push_str(&harness::render_report(&report, format));
    let json = json!({
        "ok": true,
        "cells": run.records.len(),
        "newly_run": run.newly_run,
        "skipped": run.skipped,
        "report": report,
    });
    Outcome::ok(text, json)
}

fn split_pair<'a>(item: &'a str, what: &str) -> Result<(u8, &'a str), CliError> {
    let (rule, value) = item
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("{what} `{item}` should look like S4:value")))?;
    let n = rule
        .trim()
        .trim_start_matches(['S', 's'])
        .parse::<u8>()
        .map_err(|_| CliError::Config(format!("bad rule in `{item}`")))?;
    Ok((n, value.trim()))
}

fn cmd_sql_eval(
    common: &Common,
    task_path: &Path,
    translate: &[String],
    repeat: &[String],
    no_rules: bool,
    transcript_path: Option<PathBuf>,
    dry_run: bool,
) -> CliResult {
    let cfg = RunConfig::load(common)?;
    let task = SqlTask::load(task_path).map_err(|e| CliError::Config(e.to_string()))?;
    let table = forge(common)?.table;
    let sql_err = |e: sql::SqlError| CliError::Config(e.to_string());
    let mut rules = if no_rules {
        SqlRuleSet::empty()
    } else {
        SqlRuleSet::standard(&table).map_err(sql_err)?
    };
    for t in translate {
        let (n, lang) = split_pair(t, "--translate")?;
        rules = rules.with_language(n, lang, &table).map_err(sql_err)?;
    }
    for r in repeat {
        let (n, count) = split_pair(r, "--repeat")?;
        let count = count
            .parse()
            .map_err(|_| CliError::Config(format!("bad count in `{r}`")))?;
        rules = rules.with_repeat(n, count).map_err(sql_err)?;
    }
    if dry_run {
        let prompt = sql::build_sql_prompt(&task, &rules);
        return Outcome::ok(format!("{prompt}\n"), json!({"ok": true, "prompt": prompt}));
    }
    let runs = common.runs.unwrap_or(20);
    let backend = cfg.backend()?;
    let before = sql::checksum(&task.database).map_err(|e| CliError::Config(e.to_string()))?;
    let transcript = Transcript::with_header(json!({"run_config": cfg.to_json(), "rules": rules}));
    let summary = sql::error_rate(&task, backend.as_ref(), &rules, runs, &cfg.loop_config.request, &transcript)
        .map_err(sql_err)?;
    let after = sql::checksum(&task.database).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(p) = &transcript_path {
        write(p, &transcript.to_jsonl())?;
    }
    let text = format!(
        "rules: {}\nruns: {}\nerror rate: {:.2}\n",
        summary.rules,
        summary.runs.len(),
        summary.error_rate
    );
    let json = json!({
        "ok": true,
        "rules": summary.rules,
        "error_rate": summary.error_rate,
        "runs": summary.runs,
        "database_unchanged": before == after,
    });
    Outcome::ok(text, json)
}

fn cmd_report(common: &Common, format: ReportFormat, metric: Metric, baseline: Option<String>) -> CliResult {
    let cfg = RunConfig::load(common)?;
    let results = cfg
        .results_dir
        .ok_or_else(|| CliError::Config("report needs --results-dir".into()))?;
    let records = harness::load_records(&results).map_err(|e| CliError::Config(e.to_string()))?;
    let report = harness::summarize(&records);
    let mut text = harness::render_metric(&report, format, metric);
    let mut deltas = Vec::new();
    if let Some(b) = baseline {
        let (s, l) = b.split_once(':').unwrap_or((b.as_str(), "en"));
        let s: Strategy = s.parse().map_err(|e: String| CliError::Config(e))?;
        deltas = harness::deltas_vs_baseline(&report, (s, l), metric);
        text.push_str(&format!("\nchange vs {s}:{l}\n"));
        for d in &deltas {
            text.push_str(&format!(
                "{} {}:{} {:.3} ({:+.3})\n",
                d.backend, d.strategy, d.language, d.value, d.delta
            ));
        }
    }
    Outcome::ok(
        text,
        json!({"ok": true, "metric": metric, "report": report, "deltas": deltas}),
    )
}
