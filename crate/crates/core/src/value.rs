use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Sentinel category used when a categorical attribute has no value yet.
pub const UNSET_CATEGORY: &str = "⊥";

/// The two kinds of attribute values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Numeric,
    Categorical,
}

impl fmt::Display for AttrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrKind::Numeric => f.write_str("numeric"),
            AttrKind::Categorical => f.write_str("categorical"),
        }
    }
}

/// An attribute value. Booleans are carried as the categories `"true"` / `"false"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn kind(&self) -> AttrKind {
        match self {
            Value::Num(_) => AttrKind::Numeric,
            Value::Cat(_) => AttrKind::Categorical,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            Value::Num(_) => None,
        }
    }

    /// Default starting value of an attribute of the given kind: `0` or the unset sentinel.
    pub fn default_for(kind: AttrKind) -> Value {
        match kind {
            AttrKind::Numeric => Value::Num(0.0),
            AttrKind::Categorical => Value::Cat(UNSET_CATEGORY.to_string()),
        }
    }

    pub fn cat(s: impl Into<String>) -> Value {
        Value::Cat(s.into())
    }

    /// Total order used for deterministic grouping: numbers before categories,
    /// numbers by `total_cmp`, categories lexicographically.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Cat(a), Value::Cat(b)) => a.cmp(b),
            (Value::Num(_), Value::Cat(_)) => Ordering::Less,
            (Value::Cat(_), Value::Num(_)) => Ordering::Greater,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Cat(s.to_string())
    }
}
