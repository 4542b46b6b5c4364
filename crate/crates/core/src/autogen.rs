//! The generate / validate / rewrite loop and the multi-call baselines.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bounds::{BoundsKey, BoundsSpec, FormatError};
use crate::llm::{extract_json_array, Backend, GenerationRequest, RequestParams, Transcript};
use crate::model::ModelSpec;
use crate::prompt::{
    build_prompt, sc_aggregate_prompt, tot_step_prompts, LanguagePolicy, PromptError, PromptForge, PromptPlan,
    Strategy,
};
use crate::rules::{check_output, check_with, RuleConfig, ValidationReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Upper bound on validated attempts for the iterative strategies.
    pub budget: usize,
    pub policy: LanguagePolicy,
    /// Add a format reminder after an answer without usable JSON.
    pub reassert_format: bool,
    pub sc_samples: usize,
    /// Label self-consistency samples by a full rule check instead of by
    /// whether they parse.
    pub sc_full_check: bool,
    pub rules: RuleConfig,
    pub request: RequestParams,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            budget: 3,
            policy: LanguagePolicy::default(),
            reassert_format: true,
            sc_samples: 5,
            sc_full_check: false,
            rules: RuleConfig::default(),
            request: RequestParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Compliant,
    BudgetExhausted,
    ExtractionFailed,
    BackendError,
}

impl OutcomeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeStatus::Compliant => "compliant",
            OutcomeStatus::BudgetExhausted => "budget_exhausted",
            OutcomeStatus::ExtractionFailed => "extraction_failed",
            OutcomeStatus::BackendError => "backend_error",
        }
    }
}

/// One validated attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub prompt: String,
    pub raw_output: String,
    pub report: ValidationReport,
    pub plan: PromptPlan,
}

/// A backend call whose output was not validated on its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCall {
    pub stage: String,
    pub prompt: String,
    pub raw_output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub final_bounds: Option<BoundsSpec>,
    pub iterations: Vec<IterationRecord>,
    pub status: OutcomeStatus,
    pub backend_calls: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationOutcome {
    fn new() -> Self {
        GenerationOutcome {
            final_bounds: None,
            iterations: Vec::new(),
            status: OutcomeStatus::BudgetExhausted,
            backend_calls: 0,
            stages: Vec::new(),
            error: None,
        }
    }

    pub fn final_report(&self) -> Option<&ValidationReport> {
        self.iterations.last().map(|it| &it.report)
    }

    pub fn final_plan(&self) -> Option<&PromptPlan> {
        self.iterations.last().map(|it| &it.plan)
    }
}

// the failed call still counts as made
fn backend_failure(mut out: GenerationOutcome, err: impl ToString) -> GenerationOutcome {
    out.backend_calls += 1;
    out.status = OutcomeStatus::BackendError;
    out.error = Some(err.to_string());
    out
}

/// Runs one strategy on one model.
#[derive(Debug, Clone)]
pub struct Generator<'a> {
    pub forge: &'a PromptForge,
    pub config: LoopConfig,
}

impl<'a> Generator<'a> {
    pub fn new(forge: &'a PromptForge, config: LoopConfig) -> Self {
        Generator { forge, config }
    }

    /// Starts from the all-dominant plan for `strategy`.
    pub fn run(
        &self,
        model: &ModelSpec,
        strategy: Strategy,
        backend: &dyn Backend,
        transcript: &Transcript,
    ) -> Result<GenerationOutcome, PromptError> {
        let plan = self.forge.initial_plan(strategy)?;
        self.run_plan(model, plan, backend, transcript)
    }

    pub fn run_plan(
        &self,
        model: &ModelSpec,
        plan: PromptPlan,
        backend: &dyn Backend,
        transcript: &Transcript,
    ) -> Result<GenerationOutcome, PromptError> {
        match plan.strategy {
            Strategy::Tot => self.run_tot(model, plan, backend, transcript),
            Strategy::Sc => self.run_sc(model, plan, backend, transcript),
            _ => self.run_loop(model, plan, backend, transcript),
        }
    }

    fn request(&self, prompt: String, offset: u64) -> GenerationRequest {
        let mut req = GenerationRequest::new(prompt, &self.config.request);
        req.seed = req.seed.map(|s| s.wrapping_add(offset));
        req
    }

    fn run_loop(
        &self,
        model: &ModelSpec,
        plan0: PromptPlan,
        backend: &dyn Backend,
        transcript: &Transcript,
    ) -> Result<GenerationOutcome, PromptError> {
        let budget = if plan0.strategy.is_iterative() {
            self.config.budget.max(1)
        } else {
            1
        };
        let mut out = GenerationOutcome::new();
        let mut plan = plan0;
        for i in 0..budget {
            let prompt = build_prompt(model, &plan)?;
            let result = match transcript.call(backend, &self.request(prompt.clone(), i as u64)) {
                Ok(r) => r,
                Err(e) => return Ok(backend_failure(out, e)),
            };
            out.backend_calls += 1;
            let (bounds, report) = check_output(model, &result.text, &self.config.rules);
            let compliant = report.is_compliant();
            let violated = report.violated_rules();
            let json_valid = report.json_valid;
            out.final_bounds = bounds;
            out.iterations.push(IterationRecord {
                prompt,
                raw_output: result.text,
                report,
                plan: plan.clone(),
            });
            if compliant {
                out.status = OutcomeStatus::Compliant;
                return Ok(out);
            }
            out.status = if json_valid {
                OutcomeStatus::BudgetExhausted
            } else {
                OutcomeStatus::ExtractionFailed
            };
            if i + 1 == budget {
                break;
            }
            if !json_valid {
                // nothing localized to rewrite; only remind about the format
                plan.reassert_format = self.config.reassert_format;
                continue;
            }
            plan.reassert_format = false;
            let next = match plan.strategy {
                Strategy::RepeatRule => self.forge.apply_repeat(&plan, &violated),
                _ => self.forge.apply_mlprompt(&plan, &violated, &self.config.policy),
            };
            plan = match next {
                Ok(p) => p,
                Err(PromptError::PolicyExhausted(rule)) => {
                    out.status = OutcomeStatus::BudgetExhausted;
                    out.error = Some(format!("language policy exhausted for {rule}"));
                    return Ok(out);
                }
                Err(e) => return Err(e),
            };
        }
        Ok(out)
    }

    /// One call per bounds key, each seeing the parts produced before it.
    fn run_tot(
        &self,
        model: &ModelSpec,
        plan: PromptPlan,
        backend: &dyn Backend,
        transcript: &Transcript,
    ) -> Result<GenerationOutcome, PromptError> {
        let mut out = GenerationOutcome::new();
        let mut parts: Vec<(BoundsKey, String)> = Vec::new();
        let mut assembled = Map::new();
        let mut missing = Vec::new();
        let mut last_prompt = String::new();
        for (i, step) in tot_step_prompts(model, &plan)?.into_iter().enumerate() {
            let prompt = step.prompt(&parts);
            let result = match transcript.call(backend, &self.request(prompt.clone(), i as u64)) {
                Ok(r) => r,
                Err(e) => return Ok(backend_failure(out, e)),
            };
            out.backend_calls += 1;
            let text = match extract_json_array(&result.text) {
                Ok(v) => {
                    let text = serde_json::to_string(&v).expect("value serializes");
                    assembled.insert(step.key.as_str().to_string(), v);
                    text
                }
                Err(_) => {
                    missing.push(step.key.as_str());
                    result.text.trim().to_string()
                }
            };
            out.stages.push(StageCall {
                stage: format!("tot:{}", step.key.as_str()),
                prompt: prompt.clone(),
                raw_output: result.text,
            });
            parts.push((step.key, text));
            last_prompt = prompt;
        }
        let whole = Value::Object(assembled);
        let raw = serde_json::to_string(&whole).expect("value serializes");
        let (bounds, report) = if missing.is_empty() {
            match BoundsSpec::from_value(&whole) {
                Ok(b) => {
                    let r = check_with(model, &b, &self.config.rules);
                    (Some(b), r)
                }
                Err(e) => (None, ValidationReport::invalid_json(&e)),
            }
        } else {
            let err = FormatError {
                key: None,
                message: format!("no JSON list for {}", missing.join(", ")),
            };
            (None, ValidationReport::invalid_json(&err))
        };
        self.finish_single(&mut out, last_prompt, raw, bounds, report, plan);
        Ok(out)
    }

    /// N full samples, labelled, then one aggregating call.
    fn run_sc(
        &self,
        model: &ModelSpec,
        plan: PromptPlan,
        backend: &dyn Backend,
        transcript: &Transcript,
    ) -> Result<GenerationOutcome, PromptError> {
        let mut out = GenerationOutcome::new();
        let prompt = build_prompt(model, &plan)?;
        let mut labeled = Vec::with_capacity(self.config.sc_samples);
        for i in 0..self.config.sc_samples {
            let result = match transcript.call(backend, &self.request(prompt.clone(), i as u64)) {
                Ok(r) => r,
                Err(e) => return Ok(backend_failure(out, e)),
            };
            out.backend_calls += 1;
            let (_, report) = check_output(model, &result.text, &self.config.rules);
            let ok = if self.config.sc_full_check {
                report.is_compliant()
            } else {
                report.json_valid
            };
            out.stages.push(StageCall {
                stage: format!("sc:sample{}", i + 1),
                prompt: prompt.clone(),
                raw_output: result.text.clone(),
            });
            labeled.push((result.text, ok));
        }
        let agg = sc_aggregate_prompt(model, &plan, &labeled)?;
        let offset = self.config.sc_samples as u64;
        let result = match transcript.call(backend, &self.request(agg.clone(), offset)) {
            Ok(r) => r,
            Err(e) => return Ok(backend_failure(out, e)),
        };
        out.backend_calls += 1;
        let (bounds, report) = check_output(model, &result.text, &self.config.rules);
        self.finish_single(&mut out, agg, result.text, bounds, report, plan);
        Ok(out)
    }

    fn finish_single(
        &self,
        out: &mut GenerationOutcome,
        prompt: String,
        raw: String,
        bounds: Option<BoundsSpec>,
        report: ValidationReport,
        plan: PromptPlan,
    ) {
        out.status = if report.is_compliant() {
            OutcomeStatus::Compliant
        } else if report.json_valid {
            OutcomeStatus::BudgetExhausted
        } else {
            OutcomeStatus::ExtractionFailed
        };
        out.final_bounds = bounds;
        out.iterations.push(IterationRecord {
            prompt,
            raw_output: raw,
            report,
            plan,
        });
    }
}

/// The loop with default settings and a throwaway transcript.
pub fn run_generation(
    model: &ModelSpec,
    plan0: PromptPlan,
    backend: &dyn Backend,
    budget: usize,
) -> Result<GenerationOutcome, PromptError> {
    let forge = PromptForge::default();
    let config = LoopConfig {
        budget,
        ..LoopConfig::default()
    };
    Generator::new(&forge, config).run_plan(model, plan0, backend, &Transcript::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptEntry, ScriptedBackend};
    use crate::model::load_model;
    use crate::rules::RuleId;

    const GOOD: &str = "{'set': [[1, 8]], 'hyper-parameter': [[null, null]], 'parameter': [[2, 9], [20, 30]], 'parameter_types': ['integer', 'integer']}";
    const WIDE: &str = "{'set': [[1, 8]], 'hyper-parameter': [[null, null]], 'parameter': [[2, 9], [20, 37]], 'parameter_types': ['integer', 'integer']}";

    fn binpacking() -> ModelSpec {
        load_model(include_str!("../../../data/complexor/binpacking.json")).unwrap()
    }

    #[test]
    fn converges_after_translation() {
        let forge = PromptForge::default();
        let zh = forge.table.get("R8", "zh").unwrap().to_string();
        let backend = ScriptedBackend::new(vec![
            ScriptEntry::reply(WIDE).rejecting(zh.clone()),
            ScriptEntry::reply(GOOD).expecting(zh),
        ]);
        let plan0 = forge.initial_plan(Strategy::MlReplace).unwrap();
        let out = Generator::new(&forge, LoopConfig::default())
            .run_plan(&binpacking(), plan0.clone(), &backend, &Transcript::new())
            .unwrap();
        assert_eq!(out.status, OutcomeStatus::Compliant);
        assert_eq!(out.iterations.len(), 2);
        assert_eq!(out.backend_calls, 2);
        assert_eq!(plan0.diff(out.final_plan().unwrap()), [RuleId::R8].into());
    }

    #[test]
    fn budget_runs_out() {
        let backend = ScriptedBackend::constant(WIDE);
        let forge = PromptForge::default();
        let plan0 = forge.initial_plan(Strategy::MlReplace).unwrap();
        let out = run_generation(&binpacking(), plan0, &backend, 3).unwrap();
        assert_eq!(out.status, OutcomeStatus::BudgetExhausted);
        assert_eq!(out.iterations.len(), 3);
    }

    #[test]
    fn extraction_failure_reasserts_format() {
        let backend = ScriptedBackend::new(vec![ScriptEntry::reply("sorry"), ScriptEntry::reply(GOOD)]);
        let forge = PromptForge::default();
        let plan0 = forge.initial_plan(Strategy::MlAppend).unwrap();
        let out = run_generation(&binpacking(), plan0.clone(), &backend, 3).unwrap();
        assert_eq!(out.status, OutcomeStatus::Compliant);
        assert!(out.iterations[1].plan.reassert_format);
        assert!(plan0.diff(&out.iterations[1].plan).is_empty());
    }

    #[test]
    fn backend_error_keeps_partial_records() {
        let backend = ScriptedBackend::new(vec![ScriptEntry::reply(WIDE), ScriptEntry::fail("boom")]);
        let forge = PromptForge::default();
        let plan0 = forge.initial_plan(Strategy::MlReplace).unwrap();
        let out = run_generation(&binpacking(), plan0, &backend, 3).unwrap();
        assert_eq!(out.status, OutcomeStatus::BackendError);
        assert_eq!(out.iterations.len(), 1);
    }
}
