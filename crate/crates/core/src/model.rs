//! ComplexOR model files.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::expr::{self, DomainBinding, ExprNode, ParseError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RangeEndpoint {
    Literal(i64),
    Symbol(String),
}

impl RangeEndpoint {
    pub fn symbol(&self) -> Option<&str> {
        match self {
            RangeEndpoint::Symbol(s) => Some(s),
            RangeEndpoint::Literal(_) => None,
        }
    }
}

impl fmt::Display for RangeEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RangeEndpoint::Literal(v) => write!(f, "{v}"),
            RangeEndpoint::Symbol(s) => f.write_str(s),
        }
    }
}

/// `[low, high]`; at least one endpoint names a hyper-parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetRange {
    pub low: RangeEndpoint,
    pub high: RangeEndpoint,
}

impl SetRange {
    pub fn hyper_symbols(&self) -> Vec<&str> {
        [&self.low, &self.high]
            .into_iter()
            .filter_map(RangeEndpoint::symbol)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetDef {
    pub name: String,
    pub description: String,
    pub range: Option<SetRange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDef {
    pub name: String,
    pub description: String,
    /// Empty for scalar parameters.
    pub domain: Vec<DomainBinding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarType {
    Binary,
    Integer,
    Continuous,
}

impl VarType {
    pub fn as_str(self) -> &'static str {
        match self {
            VarType::Binary => "binary",
            VarType::Integer => "integer",
            VarType::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDef {
    pub name: String,
    pub description: String,
    pub domain: Vec<DomainBinding>,
    pub var_type: VarType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveDef {
    pub name: String,
    pub description: String,
    pub sense: Sense,
    pub function: ExprNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintDef {
    pub name: String,
    pub description: String,
    pub domain: Vec<DomainBinding>,
    pub function: ExprNode,
}

/// A symbolic optimization model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub id: i64,
    pub title: String,
    pub description: String,
    pub categories: Vec<String>,
    pub sets: Vec<SetDef>,
    pub parameters: Vec<ParamDef>,
    pub variables: Vec<VarDef>,
    pub objectives: Vec<ObjectiveDef>,
    pub constraints: Vec<ConstraintDef>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("malformed model file at byte {offset}: {message}")]
    Json { message: String, offset: usize },
    #[error("invalid model schema: {0}")]
    Schema(String),
    #[error("cannot parse {context} `{text}`: {source}")]
    Expr {
        context: String,
        text: String,
        #[source]
        source: ParseError,
    },
    #[error("unknown symbol `{symbol}` in {context}: `{expression}`")]
    Resolution {
        symbol: String,
        context: String,
        expression: String,
    },
    #[error("`{symbol}` in {context} takes {expected} subscript(s), found {found}")]
    Arity {
        symbol: String,
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("model has no objective")]
    NoObjective,
    #[error("{0}")]
    Structure(String),
}

/// Converts a serde_json line/column pair into a byte offset.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

const TOP_KEYS: &[&str] = &["id", "title", "description", "category", "model"];
const MODEL_KEYS: &[&str] = &["set", "parameter", "variable", "objective", "constraint"];

fn warn_unknown(obj: &Map<String, Value>, known: &[&str], at: &str) {
    for k in obj.keys() {
        if !known.contains(&k.as_str()) {
            log::warn!("ignoring unknown key `{k}` in {at}");
        }
    }
}

fn str_field(obj: &Map<String, Value>, key: &str, at: &str, required: bool) -> Result<String, ModelError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) | None if !required => Ok(String::new()),
        Some(other) => Err(ModelError::Schema(format!("{at}.{key} must be a string, found {other}"))),
        None => Err(ModelError::Schema(format!("{at} is missing `{key}`"))),
    }
}

fn entries<'a>(model: &'a Map<String, Value>, key: &str) -> Result<Vec<&'a Map<String, Value>>, ModelError> {
    match model.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_object()
                    .ok_or_else(|| ModelError::Schema(format!("model.{key}[{i}] must be an object")))
            })
            .collect(),
        Some(_) => Err(ModelError::Schema(format!("model.{key} must be a list"))),
    }
}

fn domain_field(obj: &Map<String, Value>, at: &str) -> Result<Vec<DomainBinding>, ModelError> {
    match obj.get("domain") {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(Vec::new()),
        Some(Value::String(s)) => expr::parse_domain(s).map_err(|source| ModelError::Expr {
            context: format!("{at} domain"),
            text: s.clone(),
            source,
        }),
        Some(other) => Err(ModelError::Schema(format!("{at}.domain must be a string, found {other}"))),
    }
}

fn function_field(obj: &Map<String, Value>, at: &str) -> Result<ExprNode, ModelError> {
    let text = str_field(obj, "function", at, true)?;
    expr::parse_expr(&text).map_err(|source| ModelError::Expr {
        context: format!("{at} function"),
        text,
        source,
    })
}

fn parse_endpoint(token: &str, at: &str) -> Result<RangeEndpoint, ModelError> {
    let t = token.trim().trim_matches(|c| c == '"' || c == '\'');
    if let Ok(v) = t.parse::<i64>() {
        return Ok(RangeEndpoint::Literal(v));
    }
    let mut chars = t.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() && chars.all(|c| c.is_alphanumeric() || c == '_') => {
            Ok(RangeEndpoint::Symbol(t.to_string()))
        }
        _ => Err(ModelError::Schema(format!("{at}: invalid range endpoint `{token}`"))),
    }
}

fn range_field(obj: &Map<String, Value>, at: &str) -> Result<Option<SetRange>, ModelError> {
    let parts: Vec<String> = match obj.get("range") {
        None | Some(Value::Null) => return Ok(None),
        Some(Value::String(s)) => {
            let inner = s
                .trim()
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| ModelError::Schema(format!("{at}: range must look like `[1,T]`, found `{s}`")))?;
            inner.split(',').map(str::to_string).collect()
        }
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect(),
        Some(other) => return Err(ModelError::Schema(format!("{at}: invalid range {other}"))),
    };
    if parts.len() != 2 {
        return Err(ModelError::Schema(format!("{at}: range needs exactly two endpoints")));
    }
    let range = SetRange {
        low: parse_endpoint(&parts[0], at)?,
        high: parse_endpoint(&parts[1], at)?,
    };
    if range.hyper_symbols().is_empty() {
        return Err(ModelError::Schema(format!(
            "{at}: range [{}, {}] names no hyper-parameter",
            range.low, range.high
        )));
    }
    Ok(Some(range))
}

fn var_type_field(obj: &Map<String, Value>, at: &str) -> Result<VarType, ModelError> {
    let t = str_field(obj, "type", at, false)?;
    match t.to_ascii_lowercase().as_str() {
        "binary" | "bool" | "boolean" => Ok(VarType::Binary),
        "integer" | "int" => Ok(VarType::Integer),
        "continuous" | "real" | "float" => Ok(VarType::Continuous),
        "" => {
            log::warn!("{at} has no type, assuming continuous");
            Ok(VarType::Continuous)
        }
        other => Err(ModelError::Schema(format!("{at}: unknown variable type `{other}`"))),
    }
}

/// Parses and resolves a ComplexOR model file.
pub fn load_model(text: &str) -> Result<ModelSpec, ModelError> {
    let root: Value = serde_json::from_str(text).map_err(|e| ModelError::Json {
        message: e.to_string(),
        offset: byte_offset(text, e.line(), e.column()),
    })?;
    from_value(&root)
}

pub fn from_value(root: &Value) -> Result<ModelSpec, ModelError> {
    let top = root
        .as_object()
        .ok_or_else(|| ModelError::Schema("top level must be an object".into()))?;
    warn_unknown(top, TOP_KEYS, "model file");
    let id = match top.get("id") {
        None | Some(Value::Null) => 0,
        Some(Value::Number(n)) => n
            .as_i64()
            .ok_or_else(|| ModelError::Schema(format!("id must be an integer, found {n}")))?,
        Some(Value::String(s)) => s
            .parse()
            .map_err(|_| ModelError::Schema(format!("id must be an integer, found `{s}`")))?,
        Some(other) => return Err(ModelError::Schema(format!("id must be an integer, found {other}"))),
    };
    let categories = match top.get("category") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ModelError::Schema("category entries must be strings".into()))
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(ModelError::Schema("category must be a list of strings".into())),
    };
    let model = top
        .get("model")
        .and_then(Value::as_object)
        .ok_or_else(|| ModelError::Schema("missing `model` object".into()))?;
    warn_unknown(model, MODEL_KEYS, "model");

    let mut sets = Vec::new();
    for (i, o) in entries(model, "set")?.into_iter().enumerate() {
        let at = format!("set[{i}]");
        warn_unknown(o, &["name", "description", "range"], &at);
        sets.push(SetDef {
            name: str_field(o, "name", &at, true)?,
            description: str_field(o, "description", &at, false)?,
            range: range_field(o, &at)?,
        });
    }
    let mut parameters = Vec::new();
    for (i, o) in entries(model, "parameter")?.into_iter().enumerate() {
        let at = format!("parameter[{i}]");
        warn_unknown(o, &["name", "description", "domain"], &at);
        parameters.push(ParamDef {
            name: str_field(o, "name", &at, true)?,
            description: str_field(o, "description", &at, false)?,
            domain: domain_field(o, &at)?,
        });
    }
    let mut variables = Vec::new();
    for (i, o) in entries(model, "variable")?.into_iter().enumerate() {
        let at = format!("variable[{i}]");
        warn_unknown(o, &["name", "description", "domain", "type"], &at);
        variables.push(VarDef {
            name: str_field(o, "name", &at, true)?,
            description: str_field(o, "description", &at, false)?,
            domain: domain_field(o, &at)?,
            var_type: var_type_field(o, &at)?,
        });
    }
    let mut objectives = Vec::new();
    for (i, o) in entries(model, "objective")?.into_iter().enumerate() {
        let at = format!("objective[{i}]");
        warn_unknown(o, &["name", "description", "sense", "function"], &at);
        let sense = match str_field(o, "sense", &at, true)?.to_ascii_lowercase().as_str() {
            "min" | "minimize" => Sense::Min,
            "max" | "maximize" => Sense::Max,
            other => return Err(ModelError::Schema(format!("{at}: unknown sense `{other}`"))),
        };
        objectives.push(ObjectiveDef {
            name: str_field(o, "name", &at, false)?,
            description: str_field(o, "description", &at, false)?,
            sense,
            function: function_field(o, &at)?,
        });
    }
    let mut constraints = Vec::new();
    for (i, o) in entries(model, "constraint")?.into_iter().enumerate() {
        let at = format!("constraint[{i}]");
        warn_unknown(o, &["name", "description", "domain", "function"], &at);
        constraints.push(ConstraintDef {
            name: str_field(o, "name", &at, false)?,
            description: str_field(o, "description", &at, false)?,
            domain: domain_field(o, &at)?,
            function: function_field(o, &at)?,
        });
    }

    let spec = ModelSpec {
        id,
        title: str_field(top, "title", "model file", false)?,
        description: str_field(top, "description", "model file", false)?,
        categories,
        sets,
        parameters,
        variables,
        objectives,
        constraints,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Copy, PartialEq)]
enum SymbolKind {
    Set,
    Indexed(usize),
    Hyper,
}

impl ModelSpec {
    /// Hyper-parameter symbols in order of first appearance across set ranges.
    pub fn hyper_parameters(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.sets {
            if let Some(r) = &s.range {
                for h in r.hyper_symbols() {
                    if !out.contains(&h) {
                        out.push(h);
                    }
                }
            }
        }
        out
    }

    pub fn set(&self, name: &str) -> Option<&SetDef> {
        self.sets.iter().find(|s| s.name == name)
    }

    pub fn parameter(&self, name: &str) -> Option<&ParamDef> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn variable(&self, name: &str) -> Option<&VarDef> {
        self.variables.iter().find(|v| v.name == name)
    }

    fn symbol_table(&self) -> Result<HashMap<&str, SymbolKind>, ModelError> {
        let mut table = HashMap::new();
        for s in &self.sets {
            if table.insert(s.name.as_str(), SymbolKind::Set).is_some() {
                return Err(ModelError::Duplicate(s.name.clone()));
            }
        }
        for p in &self.parameters {
            if table.insert(p.name.as_str(), SymbolKind::Indexed(p.domain.len())).is_some() {
                return Err(ModelError::Duplicate(p.name.clone()));
            }
        }
        for v in &self.variables {
            if table.insert(v.name.as_str(), SymbolKind::Indexed(v.domain.len())).is_some() {
                return Err(ModelError::Duplicate(v.name.clone()));
            }
        }
        for h in self.hyper_parameters() {
            match table.get(h) {
                None => {
                    table.insert(h, SymbolKind::Hyper);
                }
                Some(SymbolKind::Hyper) => {}
                Some(_) => return Err(ModelError::Duplicate(h.to_string())),
            }
        }
        Ok(table)
    }

    /// Checks name uniqueness, symbol resolution and root shapes.
    pub fn validate(&self) -> Result<(), ModelError> {
        let table = self.symbol_table()?;
        let check_domain = |domain: &[DomainBinding], context: &str| -> Result<(), ModelError> {
            for b in domain {
                if self.set(&b.set_name).is_none() {
                    return Err(ModelError::Resolution {
                        symbol: b.set_name.clone(),
                        context: context.to_string(),
                        expression: expr::render_domain(domain),
                    });
                }
            }
            Ok(())
        };
        for p in &self.parameters {
            check_domain(&p.domain, &format!("parameter {}", p.name))?;
        }
        for v in &self.variables {
            check_domain(&v.domain, &format!("variable {}", v.name))?;
        }
        if self.objectives.is_empty() {
            return Err(ModelError::NoObjective);
        }
        for o in &self.objectives {
            let context = format!("objective {}", o.name);
            if o.function.is_relation() {
                return Err(ModelError::Structure(format!("{context} must not be a relation")));
            }
            self.check_function(&table, &o.function, &[], &context)?;
        }
        for c in &self.constraints {
            let context = format!("constraint {}", c.name);
            check_domain(&c.domain, &context)?;
            if !c.function.is_relation() {
                return Err(ModelError::Structure(format!(
                    "{context} must be a relation (<=, >= or =)"
                )));
            }
            self.check_function(&table, &c.function, &c.domain, &context)?;
        }
        Ok(())
    }

    fn check_function(
        &self,
        table: &HashMap<&str, SymbolKind>,
        function: &ExprNode,
        host: &[DomainBinding],
        context: &str,
    ) -> Result<(), ModelError> {
        let rendered = || expr::render(function);
        for b in function.sum_bindings() {
            if self.set(&b.set_name).is_none() {
                return Err(ModelError::Resolution {
                    symbol: b.set_name.clone(),
                    context: context.to_string(),
                    expression: rendered(),
                });
            }
        }
        let host_vars: HashSet<&str> = host.iter().map(|b| b.index_var.as_str()).collect();
        let mut err = None;
        function.visit_symbols(&mut |name, subscripts, bound| {
            if err.is_some() {
                return;
            }
            let is_bound = |s: &str| bound.contains(&s) || host_vars.contains(s);
            for s in subscripts {
                if !is_bound(s) {
                    err = Some(ModelError::Resolution {
                        symbol: s.clone(),
                        context: context.to_string(),
                        expression: rendered(),
                    });
                    return;
                }
            }
            match table.get(name) {
                Some(SymbolKind::Indexed(arity)) => {
                    if *arity != subscripts.len() {
                        err = Some(ModelError::Arity {
                            symbol: name.to_string(),
                            context: context.to_string(),
                            expected: *arity,
                            found: subscripts.len(),
                        });
                    }
                }
                Some(SymbolKind::Set) | Some(SymbolKind::Hyper) if subscripts.is_empty() => {}
                None if subscripts.is_empty() && is_bound(name) => {}
                _ => {
                    err = Some(ModelError::Resolution {
                        symbol: name.to_string(),
                        context: context.to_string(),
                        expression: rendered(),
                    })
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Serializes back to the ComplexOR schema.
    pub fn to_value(&self) -> Value {
        let sets: Vec<Value> = self
            .sets
            .iter()
            .map(|s| {
                let mut o = Map::new();
                o.insert("name".into(), json!(s.name));
                o.insert("description".into(), json!(s.description));
                if let Some(r) = &s.range {
                    o.insert("range".into(), json!(format!("[{}, {}]", r.low, r.high)));
                }
                Value::Object(o)
            })
            .collect();
        let with_domain = |o: &mut Map<String, Value>, domain: &[DomainBinding]| {
            if !domain.is_empty() {
                o.insert("domain".into(), json!(expr::render_domain(domain)));
            }
        };
        let parameters: Vec<Value> = self
            .parameters
            .iter()
            .map(|p| {
                let mut o = Map::new();
                o.insert("name".into(), json!(p.name));
                o.insert("description".into(), json!(p.description));
                with_domain(&mut o, &p.domain);
                Value::Object(o)
            })
            .collect();
        let variables: Vec<Value> = self
            .variables
            .iter()
            .map(|v| {
                let mut o = Map::new();
                o.insert("name".into(), json!(v.name));
                o.insert("description".into(), json!(v.description));
                with_domain(&mut o, &v.domain);
                o.insert("type".into(), json!(v.var_type.as_str()));
                Value::Object(o)
            })
            .collect();
        let objectives: Vec<Value> = self
            .objectives
            .iter()
            .map(|o| {
                json!({
                    "name": o.name,
                    "description": o.description,
                    "sense": match o.sense { Sense::Min => "min", Sense::Max => "max" },
                    "function": expr::render(&o.function),
                })
            })
            .collect();
        let constraints: Vec<Value> = self
            .constraints
            .iter()
            .map(|c| {
                let mut o = Map::new();
                o.insert("name".into(), json!(c.name));
                o.insert("description".into(), json!(c.description));
                with_domain(&mut o, &c.domain);
                o.insert("function".into(), json!(expr::render(&c.function)));
                Value::Object(o)
            })
            .collect();
        json!({
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "category": self.categories,
            "model": {
                "set": sets,
                "parameter": parameters,
                "variable": variables,
                "objective": objectives,
                "constraint": constraints,
            }
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("model values serialize")
    }
}
