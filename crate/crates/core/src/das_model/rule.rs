use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::distribution::Distribution;
use crate::value::{AttrKind, Value};
use crate::RegressionTree;

const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("rule expects a {expected} value, got `{got}`")]
    KindMismatch { expected: AttrKind, got: Value },
}

/// The six rule families, in selection precedence order within each kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleFamily {
    #[serde(rename = "UR1")]
    Linear,
    #[serde(rename = "UR2")]
    RegressionTree,
    #[serde(rename = "UR3")]
    DeltaDistribution,
    #[serde(rename = "UR4")]
    DistributionGenerator,
    #[serde(rename = "UR5")]
    MarkovMatrix,
    #[serde(rename = "UR6")]
    ProbabilisticGenerator,
}

/// How an attribute's next value is derived from its previous value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UpdateRule {
    /// `next = slope * prev + intercept`
    Linear { slope: f64, intercept: f64 },
    /// `next` = mean of the leaf `prev` falls into.
    RegressionTree { tree: RegressionTree },
    /// `next = prev + delta`, `delta` sampled.
    DeltaDistribution { delta: Distribution },
    /// `next` sampled; `prev` ignored.
    DistributionGenerator { distribution: Distribution },
    /// Row of `prev` in `matrix` gives next-state probabilities over `states`.
    /// `fallback` is used when `prev` is not a known state. `support` holds
    /// the number of training transitions behind each row, when known.
    MarkovMatrix {
        states: Vec<String>,
        matrix: Vec<Vec<f64>>,
        fallback: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        support: Vec<u64>,
    },
    /// `next` sampled from `probs` over `states`; `prev` ignored.
    ProbabilisticGenerator { states: Vec<String>, probs: Vec<f64> },
}

/// Result of applying a rule. `used_fallback` is set when a Markov rule met
/// an unknown previous state.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub value: Value,
    pub used_fallback: bool,
}

/// Samples an index from a probability vector with a single uniform draw.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let total: f64 = probs.iter().sum();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p / total;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn check_probs(name: &str, probs: &[f64], len: usize) -> Result<(), String> {
    if probs.len() != len {
        return Err(format!("{name} has {} entries for {len} states", probs.len()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(format!("{name} has a negative or non-finite probability"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
        return Err(format!("{name} sums to {sum}, not 1"));
    }
    Ok(())
}

impl UpdateRule {
    /// A generator that always yields `value`.
    pub fn constant(value: &Value) -> Self {
        match value {
            Value::Num(x) => UpdateRule::DistributionGenerator { distribution: Distribution::Fixed { value: *x } },
            Value::Cat(s) => UpdateRule::ProbabilisticGenerator { states: vec![s.clone()], probs: vec![1.0] },
        }
    }

    /// The value of a generator that can only yield one value.
    pub fn as_constant(&self) -> Option<Value> {
        match self {
            UpdateRule::DistributionGenerator { distribution: Distribution::Fixed { value } } => {
                Some(Value::Num(*value))
            }
            UpdateRule::ProbabilisticGenerator { states, .. } if states.len() == 1 => {
                Some(Value::Cat(states[0].clone()))
            }
            _ => None,
        }
    }

    pub fn family(&self) -> RuleFamily {
        match self {
            UpdateRule::Linear { .. } => RuleFamily::Linear,
            UpdateRule::RegressionTree { .. } => RuleFamily::RegressionTree,
            UpdateRule::DeltaDistribution { .. } => RuleFamily::DeltaDistribution,
            UpdateRule::DistributionGenerator { .. } => RuleFamily::DistributionGenerator,
            UpdateRule::MarkovMatrix { .. } => RuleFamily::MarkovMatrix,
            UpdateRule::ProbabilisticGenerator { .. } => RuleFamily::ProbabilisticGenerator,
        }
    }

    pub fn kind(&self) -> AttrKind {
        match self {
            UpdateRule::MarkovMatrix { .. } | UpdateRule::ProbabilisticGenerator { .. } => AttrKind::Categorical,
            _ => AttrKind::Numeric,
        }
    }

    pub fn is_generator(&self) -> bool {
        matches!(self, UpdateRule::DistributionGenerator { .. } | UpdateRule::ProbabilisticGenerator { .. })
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            UpdateRule::Linear { slope, intercept } => {
                if slope.is_finite() && intercept.is_finite() {
                    Ok(())
                } else {
                    Err("linear coefficients must be finite".into())
                }
            }
            UpdateRule::RegressionTree { tree } => {
                if tree.is_finite() {
                    Ok(())
                } else {
                    Err("regression tree has non-finite values".into())
                }
            }
            UpdateRule::DeltaDistribution { delta: d } | UpdateRule::DistributionGenerator { distribution: d } => {
                d.validate()
            }
            UpdateRule::MarkovMatrix { states, matrix, fallback, support } => {
                if states.is_empty() {
                    return Err("markov matrix has no states".into());
                }
                if matrix.len() != states.len() {
                    return Err(format!("markov matrix has {} rows for {} states", matrix.len(), states.len()));
                }
                for (i, row) in matrix.iter().enumerate() {
                    check_probs(&format!("row {i} (`{}`)", states[i]), row, states.len())?;
                }
                check_probs("fallback", fallback, states.len())?;
                if !support.is_empty() && support.len() != states.len() {
                    return Err("support length differs from state count".into());
                }
                Ok(())
            }
            UpdateRule::ProbabilisticGenerator { states, probs } => {
                if states.is_empty() {
                    return Err("probabilistic generator has no states".into());
                }
                check_probs("probs", probs, states.len())
            }
        }
    }

    /// Expected next value for numeric rules.
    pub fn predict(&self, prev: f64) -> Option<f64> {
        match self {
            UpdateRule::Linear { slope, intercept } => Some(slope * prev + intercept),
            UpdateRule::RegressionTree { tree } => Some(tree.predict(prev)),
            UpdateRule::DeltaDistribution { delta } => Some(prev + delta.mean()),
            UpdateRule::DistributionGenerator { distribution } => Some(distribution.mean()),
            _ => None,
        }
    }

    /// Next-state probabilities over `states` for categorical rules, and
    /// whether the Markov fallback row was used.
    pub fn next_state_probs(&self, prev: &str) -> Option<(&[String], &[f64], bool)> {
        match self {
            UpdateRule::MarkovMatrix { states, matrix, fallback, .. } => {
                Some(match states.iter().position(|s| s == prev) {
                    Some(i) => (states.as_slice(), matrix[i].as_slice(), false),
                    None => (states.as_slice(), fallback.as_slice(), true),
                })
            }
            UpdateRule::ProbabilisticGenerator { states, probs } => Some((states.as_slice(), probs.as_slice(), false)),
            _ => None,
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, prev: &Value, rng: &mut R) -> Result<Applied, RuleError> {
        let plain = |value: Value| Applied { value, used_fallback: false };
        let prev_num =
            || prev.as_num().ok_or_else(|| RuleError::KindMismatch { expected: AttrKind::Numeric, got: prev.clone() });
        match self {
            UpdateRule::Linear { slope, intercept } => Ok(plain(Value::Num(slope * prev_num()? + intercept))),
            UpdateRule::RegressionTree { tree } => Ok(plain(Value::Num(tree.predict(prev_num()?)))),
            UpdateRule::DeltaDistribution { delta } => {
                let base = prev_num()?;
                Ok(plain(Value::Num(base + delta.sample(rng))))
            }
            UpdateRule::DistributionGenerator { distribution } => Ok(plain(Value::Num(distribution.sample(rng)))),
            UpdateRule::MarkovMatrix { .. } => {
                let key = prev
                    .as_cat()
                    .ok_or_else(|| RuleError::KindMismatch { expected: AttrKind::Categorical, got: prev.clone() })?;
                let (states, probs, used_fallback) = self.next_state_probs(key).expect("categorical rule");
                let i = sample_index(probs, rng);
                Ok(Applied { value: Value::Cat(states[i].clone()), used_fallback })
            }
            UpdateRule::ProbabilisticGenerator { states, probs } => {
                Ok(plain(Value::Cat(states[sample_index(probs, rng)].clone())))
            }
        }
    }
}
