#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use mlprompt_core::expr::{evaluate_in, expand_domain, Assignment, MapEnv};
use mlprompt_core::instance::{MipInstance, RealizedData};
use mlprompt_core::{load_model, BoundsSpec, ExprNode, ModelSpec, RuleId};
use serde::Deserialize;
use serde_json::Value;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn corpus_dir() -> PathBuf {
    repo_root().join("data/complexor")
}

pub fn corpus_model(name: &str) -> ModelSpec {
    let text = std::fs::read_to_string(corpus_dir().join(format!("{name}.json"))).expect("corpus file");
    load_model(&text).expect("corpus model parses")
}

pub fn corpus_files() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

fn fixture(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name))
        .expect("fixture file")
}

#[derive(Debug, Deserialize)]
pub struct RuleCase {
    pub name: String,
    pub model: String,
    pub bounds: Value,
    pub violated: Vec<String>,
}

impl RuleCase {
    pub fn bounds_text(&self) -> String {
        serde_json::to_string(&self.bounds).unwrap()
    }

    pub fn expected(&self) -> Vec<RuleId> {
        let mut v: Vec<RuleId> = self.violated.iter().map(|r| r.parse().unwrap()).collect();
        v.sort();
        v
    }
}

pub fn rule_cases() -> Vec<RuleCase> {
    serde_json::from_str(&fixture("rule_cases.json")).unwrap()
}

#[derive(Debug, Deserialize)]
pub struct ExtractionCase {
    pub name: String,
    pub text: String,
    pub expect: String,
    pub literals: Vec<String>,
}

pub fn extraction_cases() -> Vec<ExtractionCase> {
    serde_json::from_str(&fixture("extraction_cases.json")).unwrap()
}

/// splitmix64, kept separate from the library's generator.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed)
    }

    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in lo..=hi (tiny modulo bias is irrelevant here).
    pub fn range(&mut self, lo: i64, hi: i64) -> i64 {
        lo + (self.next() % ((hi - lo + 1) as u64)) as i64
    }

    pub fn float(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (self.next() >> 11) as f64 / (1u64 << 53) as f64 * (hi - lo)
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.range(0, items.len() as i64 - 1) as usize]
    }

    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.range(0, i as i64) as usize;
            v.swap(i, j);
        }
    }
}

/// A small random model plus bounds that pin every set size.
pub struct RandomModel {
    pub json: String,
    pub bounds: String,
    pub set_sizes: Vec<usize>,
    pub var_sets: Vec<Vec<usize>>,
    pub con_sets: Vec<Vec<usize>>,
}

fn distinct_subset(rng: &mut TestRng, n_sets: usize, max_len: usize) -> Vec<usize> {
    let len = rng.range(0, max_len.min(n_sets) as i64) as usize;
    let mut all: Vec<usize> = (0..n_sets).collect();
    rng.shuffle(&mut all);
    let mut v: Vec<usize> = all.into_iter().take(len).collect();
    v.sort();
    v
}

fn subs(sets: &[usize], prefix: &str) -> String {
    if sets.is_empty() {
        String::new()
    } else {
        let names: Vec<String> = sets.iter().map(|s| format!("{prefix}{s}")).collect();
        format!("_{{{}}}", names.join(","))
    }
}

fn domain(sets: &[usize], prefix: &str) -> Value {
    if sets.is_empty() {
        return Value::Null;
    }
    let parts: Vec<String> = sets.iter().map(|s| format!("{prefix}{s} <in> S{s}")).collect();
    Value::String(format!("{{{}}}", parts.join(", ")))
}

pub fn random_model(seed: u64) -> RandomModel {
    let mut rng = TestRng::new(seed);
    let n_sets = rng.range(1, 3) as usize;
    let ranged: Vec<bool> = (0..n_sets).map(|_| rng.range(0, 2) == 0).collect();
    let set_sizes: Vec<usize> = (0..n_sets).map(|_| rng.range(1, 5) as usize).collect();

    let n_params = rng.range(1, 3) as usize;
    let param_sets: Vec<Vec<usize>> = (0..n_params).map(|_| distinct_subset(&mut rng, n_sets, 2)).collect();
    let n_vars = rng.range(1, 3) as usize;
    let var_sets: Vec<Vec<usize>> = (0..n_vars).map(|_| distinct_subset(&mut rng, n_sets, 2)).collect();
    let var_types: Vec<&str> = (0..n_vars)
        .map(|_| *rng.pick(&["continuous", "integer", "binary"]))
        .collect();

    let mut sets_json = Vec::new();
    let mut set_bounds = Vec::new();
    let mut hyper_bounds = Vec::new();
    for s in 0..n_sets {
        let mut o = serde_json::json!({"name": format!("S{s}"), "description": format!("set {s}")});
        if ranged[s] {
            o["range"] = Value::String(format!("[1, T{s}]"));
            set_bounds.push(serde_json::json!([1, set_sizes[s]]));
            hyper_bounds.push(serde_json::json!([set_sizes[s], set_sizes[s]]));
        } else {
            set_bounds.push(serde_json::json!([set_sizes[s], set_sizes[s]]));
            hyper_bounds.push(serde_json::json!([null, null]));
        }
        sets_json.push(o);
    }
    let params_json: Vec<Value> = param_sets
        .iter()
        .enumerate()
        .map(|(k, ps)| {
            let mut o = serde_json::json!({"name": format!("p{k}"), "description": format!("parameter {k}")});
            if let Value::String(d) = domain(ps, "d") {
                o["domain"] = Value::String(d);
            }
            o
        })
        .collect();
    let param_bounds: Vec<Value> = (0..n_params)
        .map(|k| {
            let lb = 1 + 3 * k as i64;
            serde_json::json!([lb, lb + rng.range(1, 15)])
        })
        .collect();
    let vars_json: Vec<Value> = var_sets
        .iter()
        .enumerate()
        .map(|(k, vs)| {
            let mut o = serde_json::json!({
                "name": format!("x{k}"),
                "description": format!("variable {k}"),
                "type": var_types[k],
            });
            if let Value::String(d) = domain(vs, "d") {
                o["domain"] = Value::String(d);
            }
            o
        })
        .collect();

    // a term over variable v inside a constraint bound over `outer`
    let term = |rng: &mut TestRng, v: usize, outer: &[usize]| -> String {
        let vs = &var_sets[v];
        let summed: Vec<usize> = vs.iter().copied().filter(|s| !outer.contains(s)).collect();
        let name_of = |s: usize| if outer.contains(&s) { format!("a{s}") } else { format!("b{s}") };
        let var_ref = if vs.is_empty() {
            format!("x{v}")
        } else {
            let names: Vec<String> = vs.iter().map(|&s| name_of(s)).collect();
            format!("x{v}_{{{}}}", names.join(","))
        };
        // coefficient: a literal, a parameter whose sets are all in scope, or a set-size symbol
        let in_scope: Vec<usize> = outer.iter().chain(summed.iter()).copied().collect();
        let usable: Vec<usize> = (0..n_params)
            .filter(|&k| param_sets[k].iter().all(|s| in_scope.contains(s)))
            .collect();
        let coef = match rng.range(0, 3) {
            0 if !usable.is_empty() => {
                let k = *rng.pick(&usable);
                let names: Vec<String> = param_sets[k].iter().map(|&s| name_of(s)).collect();
                if names.is_empty() {
                    format!("p{k}")
                } else {
                    format!("p{k}_{{{}}}", names.join(","))
                }
            }
            1 => {
                let s = rng.range(0, n_sets as i64 - 1) as usize;
                if ranged[s] {
                    format!("T{s}")
                } else {
                    format!("S{s}")
                }
            }
            _ => format!("{}", rng.range(1, 9)),
        };
        let body = format!("{coef} * {var_ref}");
        if summed.is_empty() {
            body
        } else {
            let b: Vec<String> = summed.iter().map(|s| format!("b{s} <in> S{s}")).collect();
            format!("<sum>_{{{}}} {body}", b.join(", "))
        }
    };

    let n_cons = rng.range(1, 4) as usize;
    let mut con_sets = Vec::new();
    let mut cons_json = Vec::new();
    for c in 0..n_cons {
        let outer = distinct_subset(&mut rng, n_sets, 1);
        let n_terms = rng.range(1, 3);
        let mut terms = Vec::new();
        for _ in 0..n_terms {
            let v = rng.range(0, n_vars as i64 - 1) as usize;
            let t = term(&mut rng, v, &outer);
            terms.push(if rng.range(0, 3) == 0 { format!("- {t}") } else { t });
        }
        let mut lhs = terms[0].trim_start_matches("- ").to_string();
        if terms[0].starts_with("- ") {
            lhs = format!("-1 * {lhs}");
        }
        for t in &terms[1..] {
            if let Some(rest) = t.strip_prefix("- ") {
                lhs = format!("{lhs} - {rest}");
            } else {
                lhs = format!("{lhs} + {t}");
            }
        }
        let rhs = match rng.range(0, 2) {
            0 => format!("{}", rng.range(0, 20)),
            1 => {
                let scalars: Vec<usize> = (0..n_params).filter(|&k| param_sets[k].is_empty()).collect();
                if scalars.is_empty() {
                    "7".to_string()
                } else {
                    format!("p{}", rng.pick(&scalars))
                }
            }
            _ => {
                let v = rng.range(0, n_vars as i64 - 1) as usize;
                format!("3 + {}", term(&mut rng, v, &outer))
            }
        };
        let op = *rng.pick(&["<=", ">=", "="]);
        let mut o = serde_json::json!({
            "name": format!("c{c}"),
            "description": format!("constraint {c}"),
            "function": format!("{lhs} {op} {rhs}"),
        });
        if let Value::String(d) = domain(&outer, "a") {
            o["domain"] = Value::String(d);
        }
        cons_json.push(o);
        con_sets.push(outer);
    }
    let obj = format!("{} + 0", term(&mut rng, 0, &[]));
    let model = serde_json::json!({
        "id": seed,
        "title": format!("random {seed}"),
        "description": "generated",
        "category": ["test"],
        "model": {
            "set": sets_json,
            "parameter": params_json,
            "variable": vars_json,
            "objective": [{"name": "obj", "description": "objective", "sense": "min", "function": obj}],
            "constraint": cons_json,
        }
    });
    let bounds = serde_json::json!({
        "set": set_bounds,
        "hyper-parameter": hyper_bounds,
        "parameter": param_bounds,
        "parameter_types": vec!["integer"; n_params],
    });
    RandomModel {
        json: serde_json::to_string_pretty(&model).unwrap(),
        bounds: serde_json::to_string(&bounds).unwrap(),
        set_sizes,
        var_sets,
        con_sets,
    }
}

/// `name[1,2]` to (name, [1, 2]).
pub fn parse_label(label: &str) -> (String, Vec<i64>) {
    match label.split_once('[') {
        None => (label.to_string(), vec![]),
        Some((name, rest)) => {
            let idx = rest
                .trim_end_matches(']')
                .split(',')
                .map(|s| s.parse().unwrap())
                .collect();
            (name.to_string(), idx)
        }
    }
}

/// Compares each row against direct evaluation of its constraint under `x`.
/// Returns the largest absolute disagreement.
pub fn row_disagreement(model: &ModelSpec, data: &RealizedData, inst: &MipInstance, x: &[f64]) -> f64 {
    let mut env: MapEnv = data.to_map_env(model);
    for (j, label) in inst.var_names.iter().enumerate() {
        let (name, idx) = parse_label(label);
        env.set_value(&name, idx, x[j]);
    }
    let sets: HashMap<String, Vec<i64>> = data.set_elements.clone().into_iter().collect();
    let rows: BTreeMap<&str, usize> = inst.rows.iter().enumerate().map(|(r, row)| (row.name.as_str(), r)).collect();
    let mut worst: f64 = 0.0;
    for con in &model.constraints {
        let ExprNode::Relation { left, right, .. } = &con.function else { panic!("not a relation") };
        for a in expand_domain(&con.domain, &sets).unwrap() {
            let idx: Vec<i64> = con.domain.iter().map(|b| a[&b.index_var]).collect();
            let name = if idx.is_empty() {
                con.name.clone()
            } else {
                format!("{}[{}]", con.name, idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","))
            };
            let r = rows[name.as_str()];
            let direct = evaluate_in(left, &env, &a).unwrap() - evaluate_in(right, &env, &a).unwrap();
            let via_row = inst.row_activity(r, x) - inst.rows[r].rhs;
            worst = worst.max((direct - via_row).abs());
        }
    }
    worst
}

pub fn oracle_dims(rm: &RandomModel) -> (usize, usize) {
    let prod = |sets: &Vec<usize>| sets.iter().map(|&s| rm.set_sizes[s]).product::<usize>();
    (rm.var_sets.iter().map(prod).sum(), rm.con_sets.iter().map(prod).sum())
}

pub fn empty_scope() -> Assignment {
    Assignment::new()
}

pub fn bounds_of(text: &str) -> BoundsSpec {
    mlprompt_core::load_bounds(text).unwrap()
}
