//! Rule-conditioned synthetic data generation for optimization models.

pub mod autogen;
pub mod bounds;
pub mod expr;
pub mod harness;
pub mod instance;
pub mod llm;
pub mod model;
pub mod number;
pub mod prompt;
pub mod rng;
pub mod rules;
pub mod sql;

pub use bounds::{load_bounds, serialize_bounds, BoundPair, BoundsKey, BoundsSpec, FormatError, ParamBound, ParamType};
pub use expr::{evaluate, parse_domain, parse_expr, render, DomainBinding, ExprNode};
pub use model::{load_model, ModelError, ModelSpec};
pub use number::{Num, NumKind};
pub use rules::{check, check_output, score_rules, RuleConfig, RuleId, RuleStatus, ValidationReport, Violation};
pub use autogen::{run_generation, GenerationOutcome, Generator, IterationRecord, LoopConfig, OutcomeStatus};
pub use harness::{
    deltas_vs_baseline, render_metric, render_report, run_experiment, summarize, BackendFactory, EvalReport,
    ExperimentPlan, Metric, ReportFormat, RunRecord,
};
pub use instance::{build_instance, emit_lp, sample_data, MipInstance, RealizedData};
pub use llm::{
    extract_json, Backend, BackendError, GenerationRequest, GenerationResult, HttpBackend, HttpConfig,
    RequestParams, ScriptedBackend, Transcript,
};
pub use prompt::{build_prompt, LanguagePolicy, PromptForge, PromptPlan, RuleSlot, Strategy, TranslationTable};
pub use sql::{build_sql_prompt, error_rate, execute_and_compare, SqlRuleSet, SqlTask, Verdict};
