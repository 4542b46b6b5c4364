//! Concrete data from bounds, and the expanded linear program.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsSpec, ParamType};
use crate::expr::{self, ArithOp, Assignment, Environment, EvalError, ExprNode, MapEnv, RelOp};
use crate::model::{ModelSpec, RangeEndpoint, Sense, VarType};
use crate::rng::SeededRng;
use crate::rules::{check_with, RuleConfig, ValidationReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InstanceError {
    #[error("bounds do not pass validation: {}", .0.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidBounds(Box<ValidationReport>),
    #[error("set `{0}` realized with no elements")]
    EmptySet(String),
    #[error("{0}")]
    Bounds(String),
    #[error("nonlinear term in {context}: {detail}")]
    Nonlinear { context: String, detail: String },
    #[error("evaluating {context}: {source}")]
    Eval { context: String, source: EvalError },
    #[error("model has no objective")]
    NoObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamValues {
    Integer(Vec<i64>),
    Float(Vec<f64>),
}

impl ParamValues {
    pub fn len(&self) -> usize {
        match self {
            ParamValues::Integer(v) => v.len(),
            ParamValues::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        match self {
            ParamValues::Integer(v) => v.get(i).map(|&x| x as f64),
            ParamValues::Float(v) => v.get(i).copied(),
        }
    }
}

/// Values of one parameter, flattened over its domain in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    /// Cardinality of each domain set; empty for scalars.
    pub shape: Vec<usize>,
    pub values: ParamValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedData {
    pub set_elements: BTreeMap<String, Vec<i64>>,
    pub hyper_values: BTreeMap<String, i64>,
    pub param_values: BTreeMap<String, ParamTensor>,
    pub seed: u64,
}

fn integral(n: &crate::number::Num, what: &str) -> Result<i64, InstanceError> {
    n.to_i64()
        .ok_or_else(|| InstanceError::Bounds(format!("{what}: {n} is not an integer")))
}

/// Draws concrete sets and parameter values. Bounds must pass `check`.
pub fn sample_data(model: &ModelSpec, bounds: &BoundsSpec, seed: u64) -> Result<RealizedData, InstanceError> {
    sample_data_with(model, bounds, seed, &RuleConfig::default())
}

pub fn sample_data_with(
    model: &ModelSpec,
    bounds: &BoundsSpec,
    seed: u64,
    config: &RuleConfig,
) -> Result<RealizedData, InstanceError> {
    let report = check_with(model, bounds, config);
    if !report.is_compliant() {
        return Err(InstanceError::InvalidBounds(Box::new(report)));
    }
    let mut rng = SeededRng::new(seed);
    let mut data = RealizedData {
        set_elements: BTreeMap::new(),
        hyper_values: BTreeMap::new(),
        param_values: BTreeMap::new(),
        seed,
    };
    for (k, set) in model.sets.iter().enumerate() {
        let elems = match &set.range {
            Some(range) => {
                // hyper bounds govern ranged sets; the set entry was only format-checked
                let hb = &bounds.hyper_bounds[k];
                let (lb, ub) = hb
                    .both()
                    .ok_or_else(|| InstanceError::Bounds(format!("hyper bound of `{}` is null", set.name)))?;
                let (lb, ub) = (integral(lb, &set.name)?, integral(ub, &set.name)?);
                let mut endpoint = |e: &RangeEndpoint| match e {
                    RangeEndpoint::Literal(v) => *v,
                    RangeEndpoint::Symbol(s) => *data
                        .hyper_values
                        .entry(s.clone())
                        .or_insert_with(|| rng.int_inclusive(lb, ub)),
                };
                let lo = endpoint(&range.low);
                let hi = endpoint(&range.high);
                (lo..=hi).collect::<Vec<_>>()
            }
            None => {
                let sb = &bounds.set_bounds[k];
                let (lb, ub) = sb
                    .both()
                    .ok_or_else(|| InstanceError::Bounds(format!("set bound of `{}` is null", set.name)))?;
                let (lb, ub) = (integral(lb, &set.name)?, integral(ub, &set.name)?);
                let card = rng.int_inclusive(lb, ub);
                (lb..lb.saturating_add(card)).collect()
            }
        };
        if elems.is_empty() {
            return Err(InstanceError::EmptySet(set.name.clone()));
        }
        data.set_elements.insert(set.name.clone(), elems);
    }
    let sets: HashMap<String, Vec<i64>> = data.set_elements.clone().into_iter().collect();
    for (k, p) in model.parameters.iter().enumerate() {
        let pb = &bounds.param_bounds[k];
        let shape: Vec<usize> = p.domain.iter().map(|b| sets[&b.set_name].len()).collect();
        let count: usize = shape.iter().product();
        let values = match bounds.param_types[k] {
            ParamType::Integer => {
                let (lb, ub) = (integral(&pb.lb, &p.name)?, integral(&pb.ub, &p.name)?);
                ParamValues::Integer((0..count).map(|_| rng.int_inclusive(lb, ub - 1)).collect())
            }
            ParamType::Float => {
                let (lb, ub) = (pb.lb.to_f64(), pb.ub.to_f64());
                ParamValues::Float((0..count).map(|_| rng.float_half_open(lb, ub)).collect())
            }
        };
        data.param_values.insert(p.name.clone(), ParamTensor { shape, values });
    }
    Ok(data)
}

impl RealizedData {
    fn sets(&self) -> HashMap<String, Vec<i64>> {
        self.set_elements.clone().into_iter().collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("realized data serializes")
    }

    /// Parameters, hyper-parameters and set sizes as a plain environment.
    pub fn to_map_env(&self, model: &ModelSpec) -> MapEnv {
        let mut env = MapEnv {
            sets: self.sets(),
            values: HashMap::new(),
        };
        for (name, elems) in &self.set_elements {
            env.set_value(name, vec![], elems.len() as f64);
        }
        for (name, v) in &self.hyper_values {
            env.set_value(name, vec![], *v as f64);
        }
        for p in &model.parameters {
            let Some(t) = self.param_values.get(&p.name) else { continue };
            let tuples = expr::expand_domain(&p.domain, &env.sets).unwrap_or_default();
            for (i, a) in tuples.iter().enumerate() {
                let idx: Vec<i64> = p.domain.iter().map(|b| a[&b.index_var]).collect();
                if let Some(v) = t.values.get(i) {
                    env.set_value(&p.name, idx, v);
                }
            }
        }
        env
    }
}

/// One constraint row: `coeffs · x  relation  rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub coeffs: BTreeMap<usize, f64>,
    pub relation: RelOp,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipInstance {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub sense: Sense,
    pub c: Vec<f64>,
    pub objective_constant: f64,
    pub rows: Vec<Row>,
    pub integrality: BTreeSet<usize>,
    pub binaries: BTreeSet<usize>,
    pub var_names: Vec<String>,
}

impl MipInstance {
    pub fn row_activity(&self, row: usize, x: &[f64]) -> f64 {
        self.rows[row].coeffs.iter().map(|(&j, &a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct LinExpr {
    constant: f64,
    terms: BTreeMap<usize, f64>,
}

impl LinExpr {
    fn constant(v: f64) -> Self {
        LinExpr {
            constant: v,
            terms: BTreeMap::new(),
        }
    }

    fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    fn add(mut self, other: LinExpr, sign: f64) -> Self {
        self.constant += sign * other.constant;
        for (j, a) in other.terms {
            *self.terms.entry(j).or_insert(0.0) += sign * a;
        }
        self
    }

    fn scale(mut self, k: f64) -> Self {
        self.constant *= k;
        self.terms.values_mut().for_each(|a| *a *= k);
        self
    }
}

struct DataEnv<'a> {
    sets: HashMap<String, Vec<i64>>,
    values: &'a MapEnv,
}

impl Environment for DataEnv<'_> {
    fn set_elements(&self, set: &str) -> Option<&[i64]> {
        self.sets.get(set).map(Vec::as_slice)
    }

    fn value(&self, name: &str, index: &[i64]) -> Option<f64> {
        self.values.value(name, index)
    }
}

struct Linearizer<'a> {
    env: DataEnv<'a>,
    var_index: HashMap<(String, Vec<i64>), usize>,
    var_names: HashSet<String>,
}

impl Linearizer<'_> {
    fn lin(&self, node: &ExprNode, scope: &Assignment, ctx: &str) -> Result<LinExpr, InstanceError> {
        let eval_err = |source| InstanceError::Eval {
            context: ctx.to_string(),
            source,
        };
        match node {
            ExprNode::Number(v) => Ok(LinExpr::constant(*v)),
            ExprNode::Symbol { name, subscripts } if self.var_names.contains(name) => {
                let idx = expr::resolve_index(subscripts, scope).map_err(eval_err)?;
                let j = self
                    .var_index
                    .get(&(name.clone(), idx.clone()))
                    .copied()
                    .ok_or_else(|| eval_err(EvalError::MissingSymbol { name: name.clone(), index: idx }))?;
                Ok(LinExpr {
                    constant: 0.0,
                    terms: BTreeMap::from([(j, 1.0)]),
                })
            }
            ExprNode::Symbol { .. } => expr::evaluate_in(node, &self.env, scope)
                .map(LinExpr::constant)
                .map_err(eval_err),
            ExprNode::Sum { bindings, body } => {
                let mut acc = LinExpr::default();
                for a in expr::expand_in_env(bindings, &self.env, scope).map_err(eval_err)? {
                    acc = acc.add(self.lin(body, &a, ctx)?, 1.0);
                }
                Ok(acc)
            }
            ExprNode::Neg(child) => Ok(self.lin(child, scope, ctx)?.scale(-1.0)),
            ExprNode::Arith { op, left, right } => {
                let l = self.lin(left, scope, ctx)?;
                let r = self.lin(right, scope, ctx)?;
                match op {
                    ArithOp::Add => Ok(l.add(r, 1.0)),
                    ArithOp::Sub => Ok(l.add(r, -1.0)),
                    ArithOp::Mul => match (l.is_constant(), r.is_constant()) {
                        (true, _) => Ok(r.scale(l.constant)),
                        (_, true) => Ok(l.scale(r.constant)),
                        _ => Err(InstanceError::Nonlinear {
                            context: ctx.to_string(),
                            detail: format!("product of variables in `{}`", expr::render(node)),
                        }),
                    },
                    ArithOp::Div => {
                        if !r.is_constant() {
                            return Err(InstanceError::Nonlinear {
                                context: ctx.to_string(),
                                detail: format!("division by a variable in `{}`", expr::render(node)),
                            });
                        }
                        if r.constant == 0.0 {
                            return Err(eval_err(EvalError::DivisionByZero));
                        }
                        Ok(l.scale(1.0 / r.constant))
                    }
                }
            }
            ExprNode::Relation { .. } => Err(eval_err(EvalError::Relation)),
        }
    }
}

fn label(name: &str, idx: &[i64]) -> String {
    if idx.is_empty() {
        name.to_string()
    } else {
        let parts: Vec<String> = idx.iter().map(i64::to_string).collect();
        format!("{name}[{}]", parts.join(","))
    }
}

/// Expands the model over `data` into rows of a linear program.
pub fn build_instance(model: &ModelSpec, data: &RealizedData) -> Result<MipInstance, InstanceError> {
    let objective = model.objectives.first().ok_or(InstanceError::NoObjective)?;
    let values = data.to_map_env(model);
    let sets = data.sets();
    let mut var_index = HashMap::new();
    let mut var_names = Vec::new();
    let mut integrality = BTreeSet::new();
    let mut binaries = BTreeSet::new();
    for v in &model.variables {
        let tuples = expr::expand_domain(&v.domain, &sets).map_err(|source| InstanceError::Eval {
            context: format!("variable `{}`", v.name),
            source,
        })?;
        for a in tuples {
            let idx: Vec<i64> = v.domain.iter().map(|b| a[&b.index_var]).collect();
            let j = var_names.len();
            var_names.push(label(&v.name, &idx));
            var_index.insert((v.name.clone(), idx), j);
            match v.var_type {
                VarType::Binary => {
                    integrality.insert(j);
                    binaries.insert(j);
                }
                VarType::Integer => {
                    integrality.insert(j);
                }
                VarType::Continuous => {}
            }
        }
    }
    let lz = Linearizer {
        env: DataEnv {
            sets: sets.clone(),
            values: &values,
        },
        var_index,
        var_names: model.variables.iter().map(|v| v.name.clone()).collect(),
    };
    let n = var_names.len();
    let ctx = format!("objective `{}`", objective.name);
    let obj = lz.lin(&objective.function, &Assignment::new(), &ctx)?;
    let mut c = vec![0.0; n];
    for (j, a) in &obj.terms {
        c[*j] = *a;
    }
    let mut rows = Vec::new();
    for con in &model.constraints {
        let ExprNode::Relation { op, left, right } = &con.function else {
            return Err(InstanceError::Eval {
                context: format!("constraint `{}`", con.name),
                source: EvalError::Relation,
            });
        };
        let tuples = expr::expand_domain(&con.domain, &sets).map_err(|source| InstanceError::Eval {
            context: format!("constraint `{}`", con.name),
            source,
        })?;
        for a in tuples {
            let idx: Vec<i64> = con.domain.iter().map(|b| a[&b.index_var]).collect();
            let ctx = format!("constraint `{}`", label(&con.name, &idx));
            let diff = lz.lin(left, &a, &ctx)?.add(lz.lin(right, &a, &ctx)?, -1.0);
            let coeffs = diff.terms.into_iter().filter(|(_, a)| *a != 0.0).collect();
            rows.push(Row {
                name: label(&con.name, &idx),
                coeffs,
                relation: *op,
                rhs: -diff.constant,
            });
        }
    }
    Ok(MipInstance {
        name: model.title.clone(),
        n,
        m: rows.len(),
        sense: objective.sense,
        c,
        objective_constant: obj.constant,
        rows,
        integrality,
        binaries,
        var_names,
    })
}

/// Letters, digits and `_`; anything else becomes `_`.
fn sanitize(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    while s.ends_with('_') && s.len() > 1 {
        s.pop();
    }
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert(0, '_');
    }
    s
}

fn unique_names<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut used = HashSet::new();
    names
        .map(|n| {
            let base = sanitize(n);
            let mut candidate = base.clone();
            let mut k = 1;
            while !used.insert(candidate.clone()) {
                candidate = format!("{base}_{k}");
                k += 1;
            }
            candidate
        })
        .collect()
}

/// Six decimals, trailing zeros dropped, no negative zero.
fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

const LINE_LIMIT: usize = 200;

fn write_terms(out: &mut String, head: &str, terms: &[(f64, &str)]) {
    let mut line = String::from(head);
    if terms.is_empty() {
        line.push_str(" 0");
    }
    for (i, (a, name)) in terms.iter().enumerate() {
        let mag = fmt_num(a.abs());
        let coef = if mag == "1" { String::new() } else { format!("{mag} ") };
        let piece = match (i, *a < 0.0) {
            (0, false) => format!(" {coef}{name}"),
            (0, true) => format!(" - {coef}{name}"),
            (_, false) => format!(" + {coef}{name}"),
            (_, true) => format!(" - {coef}{name}"),
        };
        if line.len() + piece.len() > LINE_LIMIT {
            out.push_str(&line);
            out.push('\n');
            line = String::from("  ");
        }
        line.push_str(&piece);
    }
    out.push_str(&line);
}

/// CPLEX LP text. Rows and variables keep instance order.
pub fn emit_lp(instance: &MipInstance) -> String {
    let vars = unique_names(instance.var_names.iter().map(String::as_str));
    let rows = unique_names(instance.rows.iter().map(|r| r.name.as_str()));
    let mut out = String::new();
    let _ = writeln!(out, "\\ {}", instance.name.replace('\n', " "));
    out.push_str(match instance.sense {
        Sense::Min => "Minimize\n",
        Sense::Max => "Maximize\n",
    });
    let obj: Vec<(f64, &str)> = instance
        .c
        .iter()
        .enumerate()
        .filter(|(_, a)| fmt_num(**a) != "0")
        .map(|(j, a)| (*a, vars[j].as_str()))
        .collect();
    write_terms(&mut out, " obj:", &obj);
    out.push('\n');
    if !instance.rows.is_empty() {
        out.push_str("Subject To\n");
        for (row, name) in instance.rows.iter().zip(&rows) {
            let terms: Vec<(f64, &str)> = row
                .coeffs
                .iter()
                .filter(|(_, a)| fmt_num(**a) != "0")
                .map(|(j, a)| (*a, vars[*j].as_str()))
                .collect();
            write_terms(&mut out, &format!(" {name}:"), &terms);
            let _ = writeln!(out, " {} {}", row.relation.symbol(), fmt_num(row.rhs));
        }
    }
    let continuous_or_general: Vec<&str> = (0..instance.n)
        .filter(|j| !instance.binaries.contains(j))
        .map(|j| vars[j].as_str())
        .collect();
    if !continuous_or_general.is_empty() {
        out.push_str("Bounds\n");
        for v in &continuous_or_general {
            let _ = writeln!(out, " {v} >= 0");
        }
    }
    let section = |out: &mut String, title: &str, idx: &mut dyn Iterator<Item = usize>| {
        let names: Vec<&str> = idx.map(|j| vars[j].as_str()).collect();
        if names.is_empty() {
            return;
        }
        out.push_str(title);
        out.push('\n');
        let mut line = String::new();
        for n in names {
            if line.len() + n.len() + 1 > LINE_LIMIT {
                let _ = writeln!(out, "{line}");
                line.clear();
            }
            line.push(' ');
            line.push_str(n);
        }
        let _ = writeln!(out, "{line}");
    };
    section(&mut out, "Binaries", &mut instance.binaries.iter().copied());
    section(
        &mut out,
        "Generals",
        &mut instance.integrality.iter().copied().filter(|j| !instance.binaries.contains(j)),
    );
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::load_bounds;
    use crate::model::load_model;

    fn binpacking() -> ModelSpec {
        load_model(include_str!("../../../data/complexor/binpacking.json")).unwrap()
    }

    fn bp_bounds(card: i64) -> BoundsSpec {
        load_bounds(&format!(
            r#"{{"set": [[{card}, {card}]], "hyper-parameter": [[null, null]], "parameter": [[2, 5], [10, 12]], "parameter_types": ["integer", "integer"]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn binpacking_sample_and_expand() {
        let model = binpacking();
        let data = sample_data(&model, &bp_bounds(3), 11).unwrap();
        assert_eq!(data.set_elements["I"].len(), 3);
        let ParamValues::Integer(s) = &data.param_values["s"].values else { panic!() };
        assert!(s.iter().all(|v| (2..5).contains(v)));
        let inst = build_instance(&model, &data).unwrap();
        assert_eq!((inst.n, inst.m), (12, 6));
        for row in inst.rows.iter().filter(|r| r.name.starts_with("AssignConstraint")) {
            assert_eq!(row.coeffs.len(), 3);
            assert!(row.coeffs.values().all(|&a| a == 1.0));
            assert_eq!(row.relation, RelOp::Eq);
        }
        assert_eq!(&inst.c[..3], &[1.0, 1.0, 1.0]);
        assert!(inst.c[3..].iter().all(|&a| a == 0.0));
        let lp = emit_lp(&inst);
        assert!(lp.contains("Binaries\n"));
        assert_eq!(lp, emit_lp(&build_instance(&model, &sample_data(&model, &bp_bounds(3), 11).unwrap()).unwrap()));
    }

    #[test]
    fn singleton_set() {
        let model = binpacking();
        let data = sample_data(&model, &bp_bounds(1), 0).unwrap();
        let inst = build_instance(&model, &data).unwrap();
        assert_eq!((inst.n, inst.m), (2, 2));
    }

    #[test]
    fn degenerate_bound() {
        let model = binpacking();
        let mut b = bp_bounds(4);
        b.param_bounds[0] = crate::bounds::ParamBound::new(7, 8);
        let data = sample_data(&model, &b, 5).unwrap();
        assert_eq!(data.param_values["s"].values, ParamValues::Integer(vec![7; 4]));
    }

    #[test]
    fn invalid_bounds_rejected() {
        let model = binpacking();
        let mut b = bp_bounds(3);
        b.param_bounds[1] = crate::bounds::ParamBound::new(10, 40);
        assert!(matches!(sample_data(&model, &b, 1), Err(InstanceError::InvalidBounds(_))));
    }

    #[test]
    fn names_and_numbers() {
        assert_eq!(sanitize("x[1,2]"), "x_1_2");
        assert_eq!(sanitize("3x"), "_3x");
        assert_eq!(unique_names(["a[1]", "a_1"].into_iter()), vec!["a_1", "a_1_1"]);
        assert_eq!(fmt_num(1.50), "1.5");
        assert_eq!(fmt_num(-0.0000001), "0");
        assert_eq!(fmt_num(2.0), "2");
    }
}
