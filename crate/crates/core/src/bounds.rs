//! The bounds object an LLM returns for a model.
//!
//! Wire form (fixed key order):
//! `{"set": [[lb, ub], ...], "hyper-parameter": [[lb, ub] | [null, null], ...],
//!   "parameter": [[lb, ub], ...], "parameter_types": ["integer" | "float", ...]}`

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::number::Num;

pub const KEY_SET: &str = "set";
pub const KEY_HYPER: &str = "hyper-parameter";
pub const KEY_PARAM: &str = "parameter";
pub const KEY_TYPES: &str = "parameter_types";

/// The four top-level keys, in the order they are serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundsKey {
    #[serde(rename = "set")]
    Set,
    #[serde(rename = "hyper-parameter")]
    Hyper,
    #[serde(rename = "parameter")]
    Param,
    #[serde(rename = "parameter_types")]
    ParamTypes,
}

impl BoundsKey {
    pub const ALL: [BoundsKey; 4] = [
        BoundsKey::Set,
        BoundsKey::Hyper,
        BoundsKey::Param,
        BoundsKey::ParamTypes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundsKey::Set => KEY_SET,
            BoundsKey::Hyper => KEY_HYPER,
            BoundsKey::Param => KEY_PARAM,
            BoundsKey::ParamTypes => KEY_TYPES,
        }
    }
}

impl fmt::Display for BoundsKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A `[lb, ub]` pair where either side may be `null`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundPair {
    pub lb: Option<Num>,
    pub ub: Option<Num>,
}

impl BoundPair {
    pub fn new(lb: Option<Num>, ub: Option<Num>) -> Self {
        BoundPair { lb, ub }
    }

    pub fn numbers(lb: impl Into<Num>, ub: impl Into<Num>) -> Self {
        BoundPair {
            lb: Some(lb.into()),
            ub: Some(ub.into()),
        }
    }

    pub fn null() -> Self {
        BoundPair { lb: None, ub: None }
    }

    pub fn is_null(&self) -> bool {
        self.lb.is_none() && self.ub.is_none()
    }

    pub fn both(&self) -> Option<(&Num, &Num)> {
        Some((self.lb.as_ref()?, self.ub.as_ref()?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBound {
    pub lb: Num,
    pub ub: Num,
}

impl ParamBound {
    pub fn new(lb: impl Into<Num>, ub: impl Into<Num>) -> Self {
        ParamBound {
            lb: lb.into(),
            ub: ub.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Integer,
    Float,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::Integer => "integer",
            ParamType::Float => "float",
        }
    }
}

/// Lower/upper bounds positionally aligned with a model's declarations.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BoundsSpec {
    pub set_bounds: Vec<BoundPair>,
    pub hyper_bounds: Vec<BoundPair>,
    pub param_bounds: Vec<ParamBound>,
    pub param_types: Vec<ParamType>,
}

/// A structural problem with a bounds object; always attributed to rule 9.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}{message}", key.map(|k| format!("`{k}`: ")).unwrap_or_default())]
pub struct FormatError {
    pub key: Option<BoundsKey>,
    pub message: String,
}

impl FormatError {
    fn new(key: Option<BoundsKey>, message: impl Into<String>) -> Self {
        FormatError {
            key,
            message: message.into(),
        }
    }
}

fn num(v: &Value, key: BoundsKey, at: &str) -> Result<Option<Num>, FormatError> {
    match v {
        Value::Null => Ok(None),
        Value::Number(n) => Num::parse(&n.to_string())
            .map(Some)
            .map_err(|e| FormatError::new(Some(key), format!("{at}: {e}"))),
        other => Err(FormatError::new(
            Some(key),
            format!("{at}: expected a number, found {other}"),
        )),
    }
}

fn pairs(obj: &serde_json::Map<String, Value>, key: BoundsKey) -> Result<Vec<BoundPair>, FormatError> {
    let list = obj
        .get(key.as_str())
        .ok_or_else(|| FormatError::new(Some(key), "missing key"))?
        .as_array()
        .ok_or_else(|| FormatError::new(Some(key), "must be a list"))?;
    list.iter()
        .enumerate()
        .map(|(i, entry)| {
            let at = format!("{key}[{i}]");
            let pair = entry
                .as_array()
                .filter(|p| p.len() == 2)
                .ok_or_else(|| FormatError::new(Some(key), format!("{at}: expected [lb, ub], found {entry}")))?;
            Ok(BoundPair {
                lb: num(&pair[0], key, &at)?,
                ub: num(&pair[1], key, &at)?,
            })
        })
        .collect()
}

impl BoundsSpec {
    /// Builds from a parsed JSON value.
    ///
    /// `null` is tolerated in set and hyper-parameter slots (rules 4 and 5
    /// judge those); parameter slots must hold numbers.
    pub fn from_value(value: &Value) -> Result<Self, FormatError> {
        let obj = value
            .as_object()
            .ok_or_else(|| FormatError::new(None, "expected a JSON object"))?;
        for k in obj.keys() {
            if !BoundsKey::ALL.iter().any(|b| b.as_str() == k) {
                return Err(FormatError::new(None, format!("unexpected key `{k}`")));
            }
        }
        let set_bounds = pairs(obj, BoundsKey::Set)?;
        let hyper_bounds = pairs(obj, BoundsKey::Hyper)?;
        let param_bounds = pairs(obj, BoundsKey::Param)?
            .into_iter()
            .enumerate()
            .map(|(i, p)| match (p.lb, p.ub) {
                (Some(lb), Some(ub)) => Ok(ParamBound { lb, ub }),
                _ => Err(FormatError::new(
                    Some(BoundsKey::Param),
                    format!("parameter[{i}]: bounds must be numbers, found null"),
                )),
            })
            .collect::<Result<_, _>>()?;
        let param_types = obj
            .get(KEY_TYPES)
            .ok_or_else(|| FormatError::new(Some(BoundsKey::ParamTypes), "missing key"))?
            .as_array()
            .ok_or_else(|| FormatError::new(Some(BoundsKey::ParamTypes), "must be a list"))?
            .iter()
            .enumerate()
            .map(|(i, t)| match t.as_str() {
                Some("integer") => Ok(ParamType::Integer),
                Some("float") => Ok(ParamType::Float),
                _ => Err(FormatError::new(
                    Some(BoundsKey::ParamTypes),
                    format!("parameter_types[{i}]: expected \"integer\" or \"float\", found {t}"),
                )),
            })
            .collect::<Result<_, _>>()?;
        Ok(BoundsSpec {
            set_bounds,
            hyper_bounds,
            param_bounds,
            param_types,
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::from_str(&serialize_bounds(self)).expect("serialized bounds are valid JSON")
    }
}

/// Parses strict JSON text. Model output should go through
/// [`crate::llm::extract_json`] first.
pub fn load_bounds(text: &str) -> Result<BoundsSpec, FormatError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| FormatError::new(None, format!("invalid JSON: {e}")))?;
    BoundsSpec::from_value(&value)
}

fn write_opt(out: &mut String, n: &Option<Num>) {
    match n {
        Some(n) => out.push_str(n.literal()),
        None => out.push_str("null"),
    }
}

/// Writes the rule-9 form with keys in fixed order and numeric literals untouched.
pub fn serialize_bounds(bounds: &BoundsSpec) -> String {
    let mut out = String::from("{");
    let pair_list = |out: &mut String, key: &str, pairs: &mut dyn Iterator<Item = (Option<Num>, Option<Num>)>| {
        out.push('"');
        out.push_str(key);
        out.push_str("\": [");
        for (i, (lb, ub)) in pairs.enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push('[');
            write_opt(out, &lb);
            out.push_str(", ");
            write_opt(out, &ub);
            out.push(']');
        }
        out.push(']');
    };
    pair_list(
        &mut out,
        KEY_SET,
        &mut bounds.set_bounds.iter().map(|p| (p.lb.clone(), p.ub.clone())),
    );
    out.push_str(", ");
    pair_list(
        &mut out,
        KEY_HYPER,
        &mut bounds.hyper_bounds.iter().map(|p| (p.lb.clone(), p.ub.clone())),
    );
    out.push_str(", ");
    pair_list(
        &mut out,
        KEY_PARAM,
        &mut bounds
            .param_bounds
            .iter()
            .map(|p| (Some(p.lb.clone()), Some(p.ub.clone()))),
    );
    out.push_str(", \"");
    out.push_str(KEY_TYPES);
    out.push_str("\": [");
    let types: Vec<String> = bounds
        .param_types
        .iter()
        .map(|t| format!("\"{}\"", t.as_str()))
        .collect();
    out.push_str(&types.join(", "));
    out.push_str("]}");
    out
}

impl Serialize for BoundsSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundsSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(deserializer)?;
        BoundsSpec::from_value(&v).map_err(serde::de::Error::custom)
    }
}
