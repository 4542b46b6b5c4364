//! Rule checkers for generated bounds.
//!
//! Rules 1 and 6 instruct the generator and the sampler; they have no
//! output checker. Rules 4, 7 and 8 are the scored rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use bigdecimal::BigDecimal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{BoundPair, BoundsSpec, FormatError, ParamType};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
    R9,
}

impl RuleId {
    pub const ALL: [RuleId; 9] = [
        RuleId::R1,
        RuleId::R2,
        RuleId::R3,
        RuleId::R4,
        RuleId::R5,
        RuleId::R6,
        RuleId::R7,
        RuleId::R8,
        RuleId::R9,
    ];

    /// Rules with an output checker.
    pub const CHECKABLE: [RuleId; 7] = [
        RuleId::R2,
        RuleId::R3,
        RuleId::R4,
        RuleId::R5,
        RuleId::R7,
        RuleId::R8,
        RuleId::R9,
    ];

    /// Rules that enter the final score.
    pub const SCORED: [RuleId; 3] = [RuleId::R4, RuleId::R7, RuleId::R8];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn is_checkable(self) -> bool {
        !matches!(self, RuleId::R1 | RuleId::R6)
    }

    pub fn as_str(self) -> &'static str {
        ["R1", "R2", "R3", "R4", "R5", "R6", "R7", "R8", "R9"][self as usize]
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().trim_start_matches(['R', 'r']);
        match t.parse::<usize>() {
            Ok(n @ 1..=9) => Ok(RuleId::ALL[n - 1]),
            _ => Err(format!("unknown rule `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: RuleId,
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(rule: RuleId, location: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            rule,
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.rule, self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub json_valid: bool,
    pub per_rule: BTreeMap<RuleId, RuleStatus>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// Report for output that never produced a bounds object.
    pub fn invalid_json(err: &FormatError) -> Self {
        let mut per_rule: BTreeMap<_, _> = RuleId::ALL
            .iter()
            .map(|&r| (r, RuleStatus::NotApplicable))
            .collect();
        per_rule.insert(RuleId::R9, RuleStatus::Fail);
        ValidationReport {
            json_valid: false,
            per_rule,
            violations: vec![Violation::new(RuleId::R9, "output", err.to_string())],
        }
    }

    pub fn status(&self, rule: RuleId) -> RuleStatus {
        self.per_rule.get(&rule).copied().unwrap_or(RuleStatus::NotApplicable)
    }

    pub fn passes(&self, rule: RuleId) -> bool {
        self.json_valid && self.status(rule) == RuleStatus::Pass
    }

    /// Valid JSON and no violation of any checkable rule.
    pub fn is_compliant(&self) -> bool {
        self.json_valid && self.violations.is_empty()
    }

    /// Rules that failed, in rule order.
    pub fn violated_rules(&self) -> BTreeSet<RuleId> {
        self.violations.iter().map(|v| v.rule).collect()
    }

    /// Transcript form: `{"json_valid", "rules": [{"rule", "status", "violations": []}]}`.
    pub fn to_transcript_json(&self) -> Value {
        let rules: Vec<Value> = RuleId::ALL
            .iter()
            .map(|&r| {
                let vs: Vec<Value> = self
                    .violations
                    .iter()
                    .filter(|v| v.rule == r)
                    .map(|v| json!({"location": v.location, "message": v.message}))
                    .collect();
                json!({"rule": r, "status": self.status(r), "violations": vs})
            })
            .collect();
        json!({"json_valid": self.json_valid, "rules": rules})
    }
}

/// Tunable thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    /// Largest allowed `ub - lb` for a parameter.
    pub max_param_gap: BigDecimal,
    /// Minimum distinct `(lb, ub)` pairs as a fraction of the parameter
    /// count, rounded up; applies when there are two or more parameters.
    pub diversity_numerator: u32,
    pub diversity_denominator: u32,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            max_param_gap: BigDecimal::from(15),
            diversity_numerator: 1,
            diversity_denominator: 2,
        }
    }
}

impl RuleConfig {
    pub fn min_distinct_pairs(&self, params: usize) -> usize {
        if params < 2 {
            return 0;
        }
        let num = params * self.diversity_numerator as usize;
        num.div_ceil(self.diversity_denominator.max(1) as usize)
    }
}

fn show(p: &BoundPair) -> String {
    let side = |n: &Option<crate::number::Num>| n.as_ref().map_or("null".to_string(), |n| n.to_string());
    format!("[{}, {}]", side(&p.lb), side(&p.ub))
}

/// `|hyper| = |set bounds| = |sets|`.
pub fn check_r2(model: &ModelSpec, bounds: &BoundsSpec) -> Vec<Violation> {
    let sets = model.sets.len();
    let mut out = Vec::new();
    if bounds.hyper_bounds.len() != sets {
        out.push(Violation::new(
            RuleId::R2,
            "hyper-parameter",
            format!(
                "{} hyper-parameter entries for {} sets",
                bounds.hyper_bounds.len(),
                sets
            ),
        ));
    }
    if bounds.set_bounds.len() != bounds.hyper_bounds.len() {
        out.push(Violation::new(
            RuleId::R2,
            "set",
            format!(
                "{} set entries but {} hyper-parameter entries",
                bounds.set_bounds.len(),
                bounds.hyper_bounds.len()
            ),
        ));
    }
    out
}

/// One numeric `[lb, ub]` per set, in declaration order, with `lb <= ub`.
pub fn check_r3(model: &ModelSpec, bounds: &BoundsSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if bounds.set_bounds.len() != model.sets.len() {
        out.push(Violation::new(
            RuleId::R3,
            "set",
            format!(
                "{} set entries for {} sets",
                bounds.set_bounds.len(),
                model.sets.len()
            ),
        ));
    }
    for (k, p) in bounds.set_bounds.iter().enumerate() {
        match p.both() {
            None => out.push(Violation::new(
                RuleId::R3,
                format!("set[{k}]"),
                format!("set bound {} is not a numeric pair", show(p)),
            )),
            Some((lb, ub)) if lb.value() > ub.value() => out.push(Violation::new(
                RuleId::R3,
                format!("set[{k}]"),
                format!("lower bound {lb} exceeds upper bound {ub}"),
            )),
            Some(_) => {}
        }
    }
    out
}

/// Range-less sets get `[null, null]`; ranged sets get numeric bounds.
/// Skipped when the hyper list does not align with the sets (reported under R2).
pub fn check_r4(model: &ModelSpec, bounds: &BoundsSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if bounds.hyper_bounds.len() != model.sets.len() {
        return out;
    }
    for (k, (set, p)) in model.sets.iter().zip(&bounds.hyper_bounds).enumerate() {
        let loc = format!("hyper-parameter[{k}]");
        match &set.range {
            None if !p.is_null() => out.push(Violation::new(
                RuleId::R4,
                loc,
                format!(
                    "set `{}` has no range field, expected [null, null], found {}",
                    set.name,
                    show(p)
                ),
            )),
            None => {}
            Some(_) => match p.both() {
                None => out.push(Violation::new(
                    RuleId::R4,
                    loc,
                    format!(
                        "set `{}` has a range field, expected numeric bounds, found {}",
                        set.name,
                        show(p)
                    ),
                )),
                Some((lb, ub)) if lb.value() > ub.value() => out.push(Violation::new(
                    RuleId::R4,
                    loc,
                    format!("set `{}`: lower bound {lb} exceeds upper bound {ub}", set.name),
                )),
                Some(_) => {}
            },
        }
    }
    out
}

/// Set bounds must be numbers, never null.
pub fn check_r5(_model: &ModelSpec, bounds: &BoundsSpec) -> Vec<Violation> {
    bounds
        .set_bounds
        .iter()
        .enumerate()
        .filter(|(_, p)| p.lb.is_none() || p.ub.is_none())
        .map(|(k, p)| {
            Violation::new(
                RuleId::R5,
                format!("set[{k}]"),
                format!("set bound {} contains null", show(p)),
            )
        })
        .collect()
}

/// Types align with parameters; endpoints are both integers or both floats;
/// integer parameters have integral bounds.
pub fn check_r7(_model: &ModelSpec, bounds: &BoundsSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if bounds.param_types.len() != bounds.param_bounds.len() {
        out.push(Violation::new(
            RuleId::R7,
            "parameter_types",
            format!(
                "{} types for {} parameter bounds",
                bounds.param_types.len(),
                bounds.param_bounds.len()
            ),
        ));
    }
    for (k, (p, ty)) in bounds.param_bounds.iter().zip(&bounds.param_types).enumerate() {
        let loc = format!("parameter[{k}]");
        if p.lb.kind() != p.ub.kind() {
            out.push(Violation::new(
                RuleId::R7,
                loc.clone(),
                format!(
                    "[{}, {}] mixes an integer and a float endpoint",
                    p.lb, p.ub
                ),
            ));
        }
        // integer literals under a float type are accepted
        if *ty == ParamType::Integer && (!p.lb.is_integral() || !p.ub.is_integral()) {
            out.push(Violation::new(
                RuleId::R7,
                loc,
                format!("[{}, {}] has a fractional endpoint but type is integer", p.lb, p.ub),
            ));
        }
    }
    out
}

/// Gap `0 < ub - lb <= max_gap` per parameter, plus the diversity proxy.
pub fn check_r8_with(_model: &ModelSpec, bounds: &BoundsSpec, config: &RuleConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    for (k, p) in bounds.param_bounds.iter().enumerate() {
        let gap = p.ub.value() - p.lb.value();
        if gap > config.max_param_gap {
            out.push(Violation::new(
                RuleId::R8,
                format!("parameter[{k}]"),
                format!(
                    "gap ub-lb = {} - {} = {} exceeds {}",
                    p.ub,
                    p.lb,
                    gap.normalized(),
                    config.max_param_gap
                ),
            ));
        } else if p.ub.value() <= p.lb.value() {
            out.push(Violation::new(
                RuleId::R8,
                format!("parameter[{k}]"),
                format!("upper bound {} must be greater than lower bound {}", p.ub, p.lb),
            ));
        }
    }
    let needed = config.min_distinct_pairs(bounds.param_bounds.len());
    let distinct: BTreeSet<(BigDecimal, BigDecimal)> = bounds
        .param_bounds
        .iter()
        .map(|p| (p.lb.value().normalized(), p.ub.value().normalized()))
        .collect();
    if distinct.len() < needed {
        out.push(Violation::new(
            RuleId::R8,
            "parameter",
            format!(
                "only {} distinct [lb, ub] pairs among {} parameters, at least {} required",
                distinct.len(),
                bounds.param_bounds.len(),
                needed
            ),
        ));
    }
    out
}

pub fn check_r8(model: &ModelSpec, bounds: &BoundsSpec) -> Vec<Violation> {
    check_r8_with(model, bounds, &RuleConfig::default())
}

/// Structure beyond what parsing enforces: one parameter entry per declared parameter.
pub fn check_r9(model: &ModelSpec, bounds: &BoundsSpec) -> Vec<Violation> {
    if bounds.param_bounds.len() != model.parameters.len() {
        vec![Violation::new(
            RuleId::R9,
            "parameter",
            format!(
                "{} parameter entries for {} declared parameters",
                bounds.param_bounds.len(),
                model.parameters.len()
            ),
        )]
    } else {
        Vec::new()
    }
}

pub fn check(model: &ModelSpec, bounds: &BoundsSpec) -> ValidationReport {
    check_with(model, bounds, &RuleConfig::default())
}

pub fn check_with(model: &ModelSpec, bounds: &BoundsSpec, config: &RuleConfig) -> ValidationReport {
    let mut per_rule = BTreeMap::new();
    let mut violations = Vec::new();
    for rule in RuleId::ALL {
        let found = match rule {
            RuleId::R1 | RuleId::R6 => {
                per_rule.insert(rule, RuleStatus::NotApplicable);
                continue;
            }
            RuleId::R2 => check_r2(model, bounds),
            RuleId::R3 => check_r3(model, bounds),
            RuleId::R4 => {
                if bounds.hyper_bounds.len() != model.sets.len() {
                    per_rule.insert(rule, RuleStatus::NotApplicable);
                    continue;
                }
                check_r4(model, bounds)
            }
            RuleId::R5 => check_r5(model, bounds),
            RuleId::R7 => check_r7(model, bounds),
            RuleId::R8 => check_r8_with(model, bounds, config),
            RuleId::R9 => check_r9(model, bounds),
        };
        per_rule.insert(
            rule,
            if found.is_empty() {
                RuleStatus::Pass
            } else {
                RuleStatus::Fail
            },
        );
        violations.extend(found);
    }
    ValidationReport {
        json_valid: true,
        per_rule,
        violations,
    }
}

/// Extract, parse and check raw model output in one step.
pub fn check_output(model: &ModelSpec, raw: &str, config: &RuleConfig) -> (Option<BoundsSpec>, ValidationReport) {
    let parsed = crate::llm::extract_json(raw)
        .map_err(|e| FormatError {
            key: None,
            message: e.to_string(),
        })
        .and_then(|v| BoundsSpec::from_value(&v));
    match parsed {
        Ok(b) => {
            let report = check_with(model, &b, config);
            (Some(b), report)
        }
        Err(e) => (None, ValidationReport::invalid_json(&e)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleScores {
    pub runs: usize,
    pub r4: f64,
    pub r7: f64,
    pub r8: f64,
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot score an empty report set")]
pub struct EmptyReports;

/// Per-rule pass fractions and their mean. Invalid JSON fails every rule.
pub fn score_rules(reports: &[ValidationReport]) -> Result<RuleScores, EmptyReports> {
    if reports.is_empty() {
        return Err(EmptyReports);
    }
    let count = |r: RuleId| reports.iter().filter(|rep| rep.passes(r)).count();
    let (p4, p7, p8) = (count(RuleId::R4), count(RuleId::R7), count(RuleId::R8));
    let n = reports.len();
    Ok(RuleScores {
        runs: n,
        r4: p4 as f64 / n as f64,
        r7: p7 as f64 / n as f64,
        r8: p8 as f64 / n as f64,
        // one rounding step keeps the mean exact where it is representable
        final_score: (p4 + p7 + p8) as f64 / (3 * n) as f64,
    })
}

impl RuleConfig {
    pub fn with_max_gap(mut self, gap: &str) -> Result<Self, bigdecimal::ParseBigDecimalError> {
        self.max_param_gap = BigDecimal::from_str(gap)?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{load_bounds, ParamBound};
    use crate::model::load_model;
    use crate::number::Num;

    fn binpacking() -> ModelSpec {
        load_model(include_str!("../../../data/complexor/binpacking.json")).unwrap()
    }

    fn n(s: &str) -> Num {
        Num::parse(s).unwrap()
    }

    fn base() -> BoundsSpec {
        load_bounds(
            r#"{"set": [[3,8]], "hyper-parameter": [[null,null]], "parameter": [[1,10],[15,25]], "parameter_types": ["integer","integer"]}"#,
        )
        .unwrap()
    }

    #[test]
    fn binpacking_compliant_example() {
        let r = check(&binpacking(), &base());
        assert!(r.is_compliant(), "{:?}", r.violations);
        assert_eq!(r.status(RuleId::R4), RuleStatus::Pass);
        assert_eq!(r.status(RuleId::R7), RuleStatus::Pass);
        assert_eq!(r.status(RuleId::R8), RuleStatus::Pass);
        assert_eq!(r.status(RuleId::R1), RuleStatus::NotApplicable);
        assert_eq!(r.status(RuleId::R6), RuleStatus::NotApplicable);
    }

    #[test]
    fn r4_hyper_for_rangeless_set() {
        let mut b = base();
        b.hyper_bounds = vec![BoundPair::numbers(1, 5)];
        let v = check_r4(&binpacking(), &b);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].location, "hyper-parameter[0]");
        assert!(v[0].message.contains("[1, 5]"));
    }

    #[test]
    fn r2_arity_suppresses_r4() {
        let mut b = base();
        b.hyper_bounds.clear();
        let r = check(&binpacking(), &b);
        assert_eq!(r.status(RuleId::R2), RuleStatus::Fail);
        assert_eq!(r.status(RuleId::R4), RuleStatus::NotApplicable);
        assert!(r.violations.iter().all(|v| v.rule != RuleId::R4));
    }

    #[test]
    fn r7_mixed_and_fractional() {
        let m = binpacking();
        let mut b = base();
        b.param_bounds[1] = ParamBound::new(n("2"), n("20.5"));
        let v = check_r7(&m, &b);
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v.iter().all(|v| v.location == "parameter[1]"));

        b.param_bounds[1] = ParamBound::new(n("1.5"), n("3.5"));
        b.param_types[1] = ParamType::Float;
        assert!(check_r7(&m, &b).is_empty());

        b.param_bounds[1] = ParamBound::new(n("1"), n("10"));
        b.param_types[1] = ParamType::Integer;
        assert!(check_r7(&m, &b).is_empty());

        b.param_types.pop();
        let v = check_r7(&m, &b);
        assert_eq!(v[0].location, "parameter_types");
    }

    #[test]
    fn r8_gap_boundaries() {
        let m = binpacking();
        let mut b = base();
        b.param_bounds[0] = ParamBound::new(n("3"), n("20"));
        assert_eq!(check_r8(&m, &b).len(), 1);
        b.param_bounds[0] = ParamBound::new(n("0"), n("15"));
        assert!(check_r8(&m, &b).is_empty());
        b.param_bounds[0] = ParamBound::new(n("0.0"), n("15.000001"));
        b.param_types[0] = ParamType::Float;
        assert_eq!(check_r8(&m, &b).len(), 1);
        b.param_bounds[0] = ParamBound::new(n("4"), n("4"));
        assert_eq!(check_r8(&m, &b).len(), 1);
    }

    #[test]
    fn r8_diversity() {
        let cfg = RuleConfig::default();
        assert_eq!(cfg.min_distinct_pairs(0), 0);
        assert_eq!(cfg.min_distinct_pairs(1), 0);
        assert_eq!(cfg.min_distinct_pairs(2), 1);
        assert_eq!(cfg.min_distinct_pairs(3), 2);
        assert_eq!(cfg.min_distinct_pairs(4), 2);
        assert_eq!(cfg.min_distinct_pairs(5), 3);
        let m = binpacking();
        let mut b = base();
        b.param_bounds = vec![ParamBound::new(1, 10); 4];
        b.param_types = vec![ParamType::Integer; 4];
        let v = check_r8(&m, &b);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].location, "parameter");
        // 1 vs 1.0 count as the same pair
        b.param_bounds = vec![ParamBound::new(n("1"), n("10")), ParamBound::new(n("1.0"), n("10.00"))];
        b.param_types = vec![ParamType::Integer; 2];
        assert!(check_r8(&m, &b).is_empty());
    }

    #[test]
    fn r5_and_r3_on_null_set_bound() {
        let mut b = base();
        b.set_bounds = vec![BoundPair::new(None, Some(n("5")))];
        let r = check(&binpacking(), &b);
        assert_eq!(r.violated_rules(), [RuleId::R3, RuleId::R5].into());
    }

    #[test]
    fn empty_model_passes_vacuously() {
        let m = load_model(
            r#"{"id": 1, "title": "", "model": {"set": [], "parameter": [], "variable": [{"name": "x", "type": "integer"}],
               "objective": [{"name": "o", "sense": "min", "function": "x"}]}}"#,
        )
        .unwrap();
        let r = check(&m, &BoundsSpec::default());
        assert!(r.is_compliant());
        assert!(RuleId::CHECKABLE.iter().all(|&id| r.status(id) == RuleStatus::Pass));
    }

    #[test]
    fn invalid_json_report() {
        let r = ValidationReport::invalid_json(&FormatError {
            key: None,
            message: "x".into(),
        });
        assert!(!r.json_valid);
        assert_eq!(r.violated_rules(), [RuleId::R9].into());
        assert!(!r.passes(RuleId::R4));
    }

    #[test]
    fn scoring() {
        let m = binpacking();
        let good = check(&m, &base());
        assert_eq!(score_rules(std::slice::from_ref(&good)).unwrap().final_score, 1.0);
        let bad = ValidationReport::invalid_json(&FormatError { key: None, message: "x".into() });
        assert_eq!(score_rules(&[bad.clone(), bad]).unwrap().final_score, 0.0);
        assert_eq!(score_rules(&[]), Err(EmptyReports));
    }

    #[test]
    fn transcript_json_shape() {
        let mut b = base();
        b.param_bounds[0] = ParamBound::new(3, 20);
        let v = check(&binpacking(), &b).to_transcript_json();
        let rules = v["rules"].as_array().unwrap();
        assert_eq!(rules.len(), 9);
        assert_eq!(rules[7]["rule"], "R8");
        assert_eq!(rules[7]["status"], "fail");
        assert_eq!(rules[7]["violations"][0]["location"], "parameter[0]");
    }

    #[test]
    fn rule_id_parsing() {
        assert_eq!("R4".parse::<RuleId>().unwrap(), RuleId::R4);
        assert_eq!("8".parse::<RuleId>().unwrap(), RuleId::R8);
        assert!("R10".parse::<RuleId>().is_err());
        assert_eq!(RuleId::R7.number(), 7);
    }
}
