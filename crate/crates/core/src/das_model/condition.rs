use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::{AttrKind, Value};

pub const DEFAULT_MAX_DEPTH: usize = 8;

/// Boolean expression over attribute values, attached to a conditional flow.
///
/// Leaves read one attribute. A leaf over an attribute that is unset, or set
/// to a value of the other kind, evaluates to false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Condition {
    #[default]
    True,
    Le {
        attr: String,
        value: f64,
    },
    Gt {
        attr: String,
        value: f64,
    },
    /// `lo <= attr < hi`
    In {
        attr: String,
        lo: f64,
        hi: f64,
    },
    Eq {
        attr: String,
        value: String,
    },
    Ne {
        attr: String,
        value: String,
    },
    And {
        args: Vec<Condition>,
    },
    Or {
        args: Vec<Condition>,
    },
}

impl Condition {
    pub fn le(attr: &str, value: f64) -> Self {
        Condition::Le { attr: attr.into(), value }
    }

    pub fn gt(attr: &str, value: f64) -> Self {
        Condition::Gt { attr: attr.into(), value }
    }

    pub fn within(attr: &str, lo: f64, hi: f64) -> Self {
        Condition::In { attr: attr.into(), lo, hi }
    }

    pub fn eq(attr: &str, value: &str) -> Self {
        Condition::Eq { attr: attr.into(), value: value.into() }
    }

    pub fn ne(attr: &str, value: &str) -> Self {
        Condition::Ne { attr: attr.into(), value: value.into() }
    }

    /// Conjunction; a single argument is returned unwrapped.
    pub fn all(mut args: Vec<Condition>) -> Self {
        match args.len() {
            0 => Condition::True,
            1 => args.pop().unwrap(),
            _ => Condition::And { args },
        }
    }

    /// Disjunction; a single argument is returned unwrapped.
    pub fn any(mut args: Vec<Condition>) -> Self {
        match args.len() {
            0 => Condition::True,
            1 => args.pop().unwrap(),
            _ => Condition::Or { args },
        }
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Condition::True)
    }

    pub fn evaluate<'a, F>(&self, lookup: &F) -> bool
    where
        F: Fn(&str) -> Option<&'a Value>,
    {
        let num = |attr: &str| lookup(attr).and_then(Value::as_num);
        let cat = |attr: &str| lookup(attr).and_then(Value::as_cat);
        match self {
            Condition::True => true,
            Condition::Le { attr, value } => num(attr).is_some_and(|x| x <= *value),
            Condition::Gt { attr, value } => num(attr).is_some_and(|x| x > *value),
            Condition::In { attr, lo, hi } => num(attr).is_some_and(|x| *lo <= x && x < *hi),
            Condition::Eq { attr, value } => cat(attr).is_some_and(|x| x == value),
            Condition::Ne { attr, value } => cat(attr).is_some_and(|x| x != value),
            Condition::And { args } => args.iter().all(|c| c.evaluate(lookup)),
            Condition::Or { args } => args.iter().any(|c| c.evaluate(lookup)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Condition::And { args } | Condition::Or { args } => {
                1 + args.iter().map(Condition::depth).max().unwrap_or(0)
            }
            _ => 1,
        }
    }

    /// Attributes read by the leaves, with the kind each leaf expects.
    pub fn leaves(&self) -> Vec<(&str, AttrKind)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(&'a str, AttrKind)>) {
        match self {
            Condition::True => {}
            Condition::Le { attr, .. } | Condition::Gt { attr, .. } | Condition::In { attr, .. } => {
                out.push((attr, AttrKind::Numeric))
            }
            Condition::Eq { attr, .. } | Condition::Ne { attr, .. } => out.push((attr, AttrKind::Categorical)),
            Condition::And { args } | Condition::Or { args } => args.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn attributes(&self) -> BTreeSet<&str> {
        self.leaves().into_iter().map(|(a, _)| a).collect()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, args: &[Condition], sep: &str| {
            f.write_str("(")?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")
        };
        match self {
            Condition::True => f.write_str("TRUE"),
            Condition::Le { attr, value } => write!(f, "{attr} <= {value}"),
            Condition::Gt { attr, value } => write!(f, "{attr} > {value}"),
            Condition::In { attr, lo, hi } => write!(f, "{attr} in [{lo}, {hi})"),
            Condition::Eq { attr, value } => write!(f, "{attr} = {value}"),
            Condition::Ne { attr, value } => write!(f, "{attr} != {value}"),
            Condition::And { args } => join(f, args, " AND "),
            Condition::Or { args } => join(f, args, " OR "),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn state(pairs: &[(&str, Value)]) -> HashMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn eval(c: &Condition, s: &HashMap<String, Value>) -> bool {
        c.evaluate(&|a: &str| s.get(a))
    }

    #[test]
    fn leaves() {
        let s = state(&[("x", Value::Num(5.0)), ("k", Value::cat("a"))]);
        assert!(eval(&Condition::le("x", 10.0), &s));
        assert!(!eval(&Condition::gt("x", 10.0), &s));
        assert!(eval(&Condition::within("x", 5.0, 6.0), &s));
        assert!(!eval(&Condition::within("x", 4.0, 5.0), &s));
        assert!(eval(&Condition::eq("k", "a"), &s));
        assert!(eval(&Condition::ne("k", "b"), &s));
        assert!(eval(&Condition::True, &s));
    }

    #[test]
    fn unset_or_mistyped_is_false() {
        let s = state(&[("k", Value::cat("a"))]);
        assert!(!eval(&Condition::le("missing", 1.0), &s));
        assert!(!eval(&Condition::ne("missing", "a"), &s));
        assert!(!eval(&Condition::le("k", 1.0), &s));
    }

    #[test]
    fn composition_and_depth() {
        let c = Condition::any(vec![
            Condition::all(vec![Condition::eq("k", "a"), Condition::le("x", 1.0)]),
            Condition::gt("x", 9.0),
        ]);
        assert_eq!(c.depth(), 3);
        let s = state(&[("x", Value::Num(0.5)), ("k", Value::cat("a"))]);
        assert!(eval(&c, &s));
        let s = state(&[("x", Value::Num(5.0)), ("k", Value::cat("a"))]);
        assert!(!eval(&c, &s));
        assert_eq!(c.attributes().into_iter().collect::<Vec<_>>(), ["k", "x"]);
        assert_eq!(c.to_string(), "((k = a AND x <= 1) OR x > 9)");
    }

    #[test]
    fn json_shape() {
        let c: Condition =
            serde_json::from_str(r#"{"op":"and","args":[{"op":"in","attr":"x","lo":1,"hi":2},{"op":"true"}]}"#)
                .unwrap();
        assert_eq!(c, Condition::And { args: vec![Condition::within("x", 1.0, 2.0), Condition::True] });
    }
}
