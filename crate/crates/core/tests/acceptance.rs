//! One line per acceptance criterion; exits non-zero if any fails.

// `ensure!` negates float comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use mlprompt_core::autogen::{Generator, LoopConfig, OutcomeStatus};
use mlprompt_core::harness::{self, ExperimentPlan, ReportFormat};
use mlprompt_core::instance::{build_instance, emit_lp, sample_data};
use mlprompt_core::llm::{
    extract_json, Backend, BackendError, ExtractError, FnBackend, HttpBackend, HttpConfig, ScriptEntry,
    ScriptedBackend, Transcript,
};
use mlprompt_core::prompt::{LanguagePolicy, PromptForge, Strategy, TranslationTable};
use mlprompt_core::rules::{check, RuleStatus, ValidationReport};
use mlprompt_core::sql::{self, SqlRuleSet, SqlTask};
use mlprompt_core::{load_bounds, load_model, score_rules, RuleId};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn c1_corpus_parse() -> Check {
    let t = Instant::now();
    let m = corpus_model("binpacking");
    ensure!(m.sets.len() == 1, "binpacking has {} sets", m.sets.len());
    ensure!(m.parameters.len() == 2, "binpacking has {} parameters", m.parameters.len());
    let binaries = m
        .variables
        .iter()
        .filter(|v| v.var_type == mlprompt_core::model::VarType::Binary)
        .count();
    ensure!(m.variables.len() == 2 && binaries == 2, "binpacking variables wrong");
    ensure!(
        m.objectives.len() == 1 && m.objectives[0].sense == mlprompt_core::model::Sense::Min,
        "binpacking objective wrong"
    );
    ensure!(m.constraints.len() == 2, "binpacking has {} constraints", m.constraints.len());
    let files = corpus_files();
    for f in &files {
        let once = load_model(&std::fs::read_to_string(f).unwrap()).map_err(|e| format!("{}: {e}", f.display()))?;
        let twice = load_model(&once.to_json_pretty()).map_err(|e| format!("reparse {}: {e}", f.display()))?;
        ensure!(once == twice, "{} is not a render/reparse fixpoint", f.display());
        ensure!(
            twice.to_json_pretty() == once.to_json_pretty(),
            "{} renders differently the second time",
            f.display()
        );
    }
    let elapsed = t.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{} corpus files round-trip in {elapsed:.2?}", files.len()))
}

fn c2_rule_fixtures() -> Check {
    let cases = rule_cases();
    ensure!(cases.len() >= 30, "only {} fixtures", cases.len());
    let mut wrong = Vec::new();
    for c in &cases {
        let model = corpus_model(&c.model);
        let bounds = load_bounds(&c.bounds_text()).map_err(|e| format!("{}: {e}", c.name))?;
        let got: Vec<RuleId> = check(&model, &bounds).violated_rules().into_iter().collect();
        if got != c.expected() {
            wrong.push(format!("{} expected {:?} got {:?}", c.name, c.expected(), got));
        }
    }
    ensure!(wrong.is_empty(), "{}", wrong.join("; "));
    Ok(format!("{} fixtures labelled exactly", cases.len()))
}

fn synthetic_report(r4: bool, r7: bool, r8: bool) -> ValidationReport {
    let status = |ok: bool| if ok { RuleStatus::Pass } else { RuleStatus::Fail };
    let mut per_rule = std::collections::BTreeMap::new();
    per_rule.insert(RuleId::R4, status(r4));
    per_rule.insert(RuleId::R7, status(r7));
    per_rule.insert(RuleId::R8, status(r8));
    ValidationReport {
        json_valid: true,
        per_rule,
        violations: Vec::new(),
    }
}

fn c3_scoring() -> Check {
    // 9/10, 8/10 and 7/10 passes
    let mut reports: Vec<ValidationReport> = (0..10).map(|i| synthetic_report(i < 9, i < 8, i < 7)).collect();
    let s = score_rules(&reports).map_err(|e| e.to_string())?;
    ensure!(s.r4 == 0.9 && s.r7 == 0.8 && s.r8 == 0.7, "rule accuracies {} {} {}", s.r4, s.r7, s.r8);
    ensure!(s.final_score == 0.8, "final score {}", s.final_score);
    ensure!(format!("{:.3}", s.final_score) == "0.800", "formatted {:.3}", s.final_score);
    let mut rng = TestRng::new(3);
    for _ in 0..100 {
        rng.shuffle(&mut reports);
        let t = score_rules(&reports).map_err(|e| e.to_string())?;
        ensure!(t == s, "shuffled score differs: {t:?}");
    }
    Ok("final 0.800, stable over 100 shuffles".into())
}

const BIN_COMPLIANT: &str = r#"{"set": [[3, 3]], "hyper-parameter": [[null, null]], "parameter": [[5, 10], [20, 30]], "parameter_types": ["integer", "integer"]}"#;
const BIN_WIDE: &str = r#"{"set": [[3, 3]], "hyper-parameter": [[null, null]], "parameter": [[5, 100], [20, 30]], "parameter_types": ["integer", "integer"]}"#;

fn c4_loop_convergence() -> Check {
    let model = corpus_model("binpacking");
    let table = TranslationTable::builtin();
    let r8_zh = table.get("R8", "zh").map_err(|e| e.to_string())?.to_string();
    let r8_en = table.get("R8", "en").map_err(|e| e.to_string())?.to_string();
    let forge = PromptForge::new(table);
    let config = LoopConfig {
        policy: LanguagePolicy::Fixed("zh".into()),
        ..LoopConfig::default()
    };
    let mut first: Option<String> = None;
    for rep in 0..10 {
        let backend = ScriptedBackend::new(vec![
            ScriptEntry::reply(BIN_WIDE).rejecting(r8_zh.clone()),
            ScriptEntry::reply(BIN_COMPLIANT)
                .expecting(r8_zh.clone())
                .rejecting(r8_en.clone()),
        ]);
        let out = Generator::new(&forge, config.clone())
            .run(&model, Strategy::MlReplace, &backend, &Transcript::new())
            .map_err(|e| e.to_string())?;
        ensure!(out.status == OutcomeStatus::Compliant, "status {:?}: {:?}", out.status, out.error);
        ensure!(out.iterations.len() == 2, "{} iterations", out.iterations.len());
        ensure!(out.backend_calls == 2 && backend.calls() == 2, "{} calls", backend.calls());
        let diff = out.iterations[0].plan.diff(&out.iterations[1].plan);
        ensure!(diff == BTreeSet::from([RuleId::R8]), "plan diff {diff:?}");
        let snapshot = serde_json::to_string(&out).unwrap();
        match &first {
            None => first = Some(snapshot),
            Some(f) => ensure!(*f == snapshot, "repetition {rep} differs"),
        }
    }
    Ok("compliant after 2 iterations and 2 calls, only R8 rewritten, 10 identical repetitions".into())
}

fn tot_backend() -> FnBackend {
    FnBackend::new("tot", |req| {
        let p = req.prompt_text();
        let answer = if p.contains("value of the 'set' key") {
            "[[3, 3]]"
        } else if p.contains("value of the 'hyper-parameter' key") {
            "[[null, null]]"
        } else if p.contains("value of the 'parameter' key") {
            "[[5, 10], [20, 30]]"
        } else if p.contains("value of the 'parameter_types' key") {
            "['integer', 'integer']"
        } else {
            return Err(BackendError::Config("unexpected stage".into()));
        };
        Ok(answer.to_string())
    })
}

fn c5_call_counts() -> Check {
    let model = corpus_model("binpacking");
    let forge = PromptForge::default();
    let config = LoopConfig::default();
    let gen = Generator::new(&forge, config.clone());

    let sc = ScriptedBackend::constant(BIN_COMPLIANT);
    let out = gen
        .run(&model, Strategy::Sc, &sc, &Transcript::new())
        .map_err(|e| e.to_string())?;
    ensure!(sc.calls() == 6 && out.backend_calls == 6, "SC made {} calls", sc.calls());

    let tot = tot_backend();
    let out = gen
        .run(&model, Strategy::Tot, &tot, &Transcript::new())
        .map_err(|e| e.to_string())?;
    ensure!(tot.calls() == 4 && out.backend_calls == 4, "ToT made {} calls", tot.calls());
    ensure!(out.status == OutcomeStatus::Compliant, "ToT assembled {:?}", out.status);

    let mut worst = 0;
    for strategy in [Strategy::MlReplace, Strategy::MlAppend] {
        for reply in [BIN_WIDE, BIN_COMPLIANT, "no json here"] {
            let b = ScriptedBackend::constant(reply);
            gen.run(&model, strategy, &b, &Transcript::new()).map_err(|e| e.to_string())?;
            ensure!(b.calls() <= config.budget, "{strategy} made {} calls", b.calls());
            worst = worst.max(b.calls());
        }
    }
    Ok(format!("SC 6 calls, ToT 4 calls, multilingual at most {worst} (budget {})", config.budget))
}

fn c6_instance_oracle() -> Check {
    let t = Instant::now();
    let mut rng = TestRng::new(99);
    for seed in 0..50u64 {
        let rm = random_model(seed);
        let model = load_model(&rm.json).map_err(|e| format!("model {seed}: {e}\n{}", rm.json))?;
        let bounds = load_bounds(&rm.bounds).map_err(|e| format!("bounds {seed}: {e}"))?;
        let data = sample_data(&model, &bounds, seed).map_err(|e| format!("sample {seed}: {e}"))?;
        let inst = build_instance(&model, &data).map_err(|e| format!("build {seed}: {e}"))?;
        let (n, m) = oracle_dims(&rm);
        ensure!((inst.n, inst.m) == (n, m), "model {seed}: got ({}, {}), oracle ({n}, {m})", inst.n, inst.m);
        for _ in 0..100 {
            let x: Vec<f64> = (0..inst.n).map(|_| rng.float(-5.0, 5.0)).collect();
            let d = row_disagreement(&model, &data, &inst, &x);
            ensure!(d <= 1e-9, "model {seed}: row disagreement {d}");
        }
    }
    let model = corpus_model("binpacking");
    let data = sample_data(&model, &load_bounds(BIN_COMPLIANT).unwrap(), 1).map_err(|e| e.to_string())?;
    let inst = build_instance(&model, &data).map_err(|e| e.to_string())?;
    ensure!((inst.n, inst.m) == (12, 6), "binpacking |I|=3 gave ({}, {})", inst.n, inst.m);
    let elapsed = t.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("50 random models match the oracle, binpacking 12x6, {elapsed:.2?}"))
}

fn c7_sampling() -> Check {
    let model = corpus_model("lot_sizing");
    let text = r#"{"set": [[1, 4]], "hyper-parameter": [[2, 4]], "parameter": [[10, 12], [0.5, 1.5], [2, 3], [7.25, 9.75]], "parameter_types": ["integer", "float", "integer", "float"]}"#;
    let bounds = load_bounds(text).map_err(|e| e.to_string())?;
    let limits = [(10.0, 12.0), (0.5, 1.5), (2.0, 3.0), (7.25, 9.75)];
    let names = ["d", "sc", "h", "M"];
    for seed in 0..10_000u64 {
        let data = sample_data(&model, &bounds, seed).map_err(|e| e.to_string())?;
        for (name, (lb, ub)) in names.iter().zip(limits) {
            let t = &data.param_values[*name];
            for i in 0..t.values.len() {
                let v = t.values.get(i).unwrap();
                ensure!(v >= lb && v < ub, "seed {seed}: {name} = {v} outside [{lb}, {ub})");
            }
        }
    }
    let a = sample_data(&model, &bounds, 42).unwrap();
    let b = sample_data(&model, &bounds, 42).unwrap();
    ensure!(a.to_json_pretty() == b.to_json_pretty(), "same seed, different data");
    let lp_a = emit_lp(&build_instance(&model, &a).map_err(|e| e.to_string())?);
    let lp_b = emit_lp(&build_instance(&model, &b).map_err(|e| e.to_string())?);
    ensure!(lp_a == lp_b, "same seed, different LP");
    Ok("10000 samples inside [lb, ub), same-seed LP byte-identical".into())
}

fn c8_extraction() -> Check {
    let cases = extraction_cases();
    ensure!(cases.len() == 20, "{} extraction fixtures", cases.len());
    for c in &cases {
        let got = extract_json(&c.text);
        let kind = match &got {
            Ok(_) => "ok",
            Err(ExtractError::NotFound(_)) => "not_found",
            Err(ExtractError::Unbalanced(_)) => "unbalanced",
            Err(ExtractError::Parse(_)) => "parse",
        };
        ensure!(kind == c.expect, "{}: expected {} got {kind}", c.name, c.expect);
        if let Ok(v) = got {
            let text = serde_json::to_string(&v).unwrap();
            for lit in &c.literals {
                ensure!(text.contains(lit.as_str()), "{}: literal {lit} altered in {text}", c.name);
            }
        }
    }
    Ok("20 raw outputs classified, literals intact".into())
}

fn c9_sql() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = repo_root().join("data/spider/pets_1");
    for f in ["task.json", "schema.sql", "data.sql"] {
        std::fs::copy(src.join(f), dir.path().join(f)).map_err(|e| e.to_string())?;
    }
    let task = SqlTask::load(&dir.path().join("task.json")).map_err(|e| e.to_string())?;
    let gold = match &task.gold {
        sql::Gold::Sql(s) => s.clone(),
        sql::Gold::Rows(_) => return Err("manifest should carry gold SQL".into()),
    };
    let before = sql::checksum(&task.database).map_err(|e| e.to_string())?;
    let rules = SqlRuleSet::standard(&TranslationTable::builtin()).map_err(|e| e.to_string())?;
    let params = Default::default();
    let good = ScriptedBackend::constant(format!("```sql\n{gold}\n```"));
    let ok = sql::error_rate(&task, &good, &rules, 20, &params, &Transcript::new()).map_err(|e| e.to_string())?;
    let bad = ScriptedBackend::constant("SELECT fname age FROM student WHERE");
    let ko = sql::error_rate(&task, &bad, &rules, 20, &params, &Transcript::new()).map_err(|e| e.to_string())?;
    let after = sql::checksum(&task.database).map_err(|e| e.to_string())?;
    ensure!(ok.error_rate == 0.0, "gold error rate {}", ok.error_rate);
    ensure!(ko.error_rate == 1.0, "malformed error rate {}", ko.error_rate);
    ensure!(before == after, "database checksum changed");
    Ok("error rate 0.00 for gold, 1.00 for malformed, database untouched".into())
}

fn c10_live() -> Option<Check> {
    let config = HttpConfig::default();
    if std::env::var(&config.api_key_env).map_or(true, |k| k.is_empty()) {
        return None;
    }
    Some((|| {
        let backend: Arc<dyn Backend> = Arc::new(HttpBackend::from_env(config.clone()).map_err(|e| e.to_string())?);
        let results = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut plan = ExperimentPlan::new(corpus_dir(), results.path());
        plan.backends = vec![config.id.clone()];
        plan.strategies = vec![Strategy::ZeroShot, Strategy::MlReplace];
        plan.runs_per_problem = 1;
        let factory = move |_: &str| -> Result<Arc<dyn Backend>, BackendError> { Ok(backend.clone()) };
        let run = harness::run_experiment(&plan, &PromptForge::default(), &factory).map_err(|e| e.to_string())?;
        let problems: BTreeSet<&str> = run.records.iter().map(|r| r.key.problem.as_str()).collect();
        ensure!(problems.len() >= 5, "only {} problems", problems.len());
        for r in &run.records {
            ensure!(r.transcript.exists(), "missing transcript {}", r.transcript.display());
        }
        let table = harness::render_report(&harness::summarize(&run.records), ReportFormat::Markdown);
        ensure!(table.lines().count() >= 3, "report too short");
        Ok(format!("{} live cells over {} problems", run.records.len(), problems.len()))
    })())
}

fn main() {
    let checks: Vec<Criterion> = vec![
        ("corpus parse and render fixpoint", c1_corpus_parse),
        ("rule checker fixture suite", c2_rule_fixtures),
        ("scoring", c3_scoring),
        ("auto-loop convergence", c4_loop_convergence),
        ("strategy call counts", c5_call_counts),
        ("instance oracle equivalence", c6_instance_oracle),
        ("sampling bounds and determinism", c7_sampling),
        ("JSON extraction robustness", c8_extraction),
        ("SQL evaluation", c9_sql),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.into_iter().enumerate() {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: panicked", i + 1);
            }
        }
    }
    match c10_live() {
        None => println!("criterion 10 SKIP  live end-to-end smoke: no API credential in the environment"),
        Some(Ok(detail)) => println!("criterion 10 PASS  live end-to-end smoke: {detail}"),
        Some(Err(why)) => {
            failed += 1;
            println!("criterion 10 FAIL  live end-to-end smoke: {why}");
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
