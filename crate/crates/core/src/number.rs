//! Exact decimal numbers that remember whether they were written as integers.

use std::fmt;
use std::str::FromStr;

use bigdecimal::{BigDecimal, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Lexical classification of a numeric literal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumKind {
    /// Written without a decimal point or exponent, e.g. `10`.
    Integer,
    /// Written with a decimal point or exponent, e.g. `10.5` or `1e3`.
    Float,
}

/// A numeric literal taken from model output.
///
/// The value is held as an arbitrary-precision decimal so that boundary
/// comparisons such as `ub - lb <= 15` are exact. The literal text is kept
/// for byte-faithful re-serialization.
#[derive(Clone)]
pub struct Num {
    value: BigDecimal,
    kind: NumKind,
    literal: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid numeric literal `{0}`")]
pub struct NumParseError(pub String);

impl Num {
    pub fn parse(literal: &str) -> Result<Self, NumParseError> {
        let trimmed = literal.trim();
        if !is_json_number(trimmed) {
            return Err(NumParseError(literal.to_string()));
        }
        let value =
            BigDecimal::from_str(trimmed).map_err(|_| NumParseError(literal.to_string()))?;
        let kind = if trimmed.contains(['.', 'e', 'E']) {
            NumKind::Float
        } else {
            NumKind::Integer
        };
        Ok(Num {
            value,
            kind,
            literal: trimmed.to_string(),
        })
    }

    pub fn from_i64(v: i64) -> Self {
        Num {
            value: BigDecimal::from(v),
            kind: NumKind::Integer,
            literal: v.to_string(),
        }
    }

    pub fn value(&self) -> &BigDecimal {
        &self.value
    }

    pub fn kind(&self) -> NumKind {
        self.kind
    }

    pub fn literal(&self) -> &str {
        &self.literal
    }

    /// True when the value has no fractional part, regardless of how it was written.
    pub fn is_integral(&self) -> bool {
        self.value.is_integer()
    }

    pub fn to_i64(&self) -> Option<i64> {
        if self.is_integral() {
            self.value.to_i64()
        } else {
            None
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }
}

fn is_json_number(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if b.get(i) == Some(&b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i == int_start {
        return false;
    }
    if b[int_start] == b'0' && i - int_start > 1 {
        return false;
    }
    if b.get(i) == Some(&b'.') {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == frac_start {
            return false;
        }
    }
    if matches!(b.get(i), Some(b'e') | Some(b'E')) {
        i += 1;
        if matches!(b.get(i), Some(b'+') | Some(b'-')) {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == b.len()
}

/// Equality compares value and lexical kind; `1` and `1.0` differ.
impl PartialEq for Num {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.value == other.value
    }
}

impl Eq for Num {}

impl fmt::Debug for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.literal)
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.literal)
    }
}

impl From<i64> for Num {
    fn from(v: i64) -> Self {
        Num::from_i64(v)
    }
}

impl FromStr for Num {
    type Err = NumParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Num::parse(s)
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let n = serde_json::Number::from_string_unchecked(self.literal.clone());
        n.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let n = serde_json::Number::deserialize(deserializer)?;
        Num::parse(&n.to_string()).map_err(serde::de::Error::custom)
    }
}
