//! Fitting and selection of update rules from ⟨start value, end value⟩ pairs.
//!
//! Numeric candidates are scored by in-sample RMSE of the rule's expected
//! next value; categorical candidates by mean negative log-likelihood. The
//! selection score adds a complexity penalty of `p·ln(n)/(2n)` to the log of
//! the RMSE (numeric) or to the NLL (categorical), where `p` counts fitted
//! parameters. Deterministic rules also pay for their implicit residual
//! scale, so a spurious slope or split cannot beat a generator on noise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::das_model::{Distribution, RuleFamily, UpdateRule};
use crate::stats::{self, RegressionTree, TreeParams};
use crate::value::{AttrKind, Value};

/// Relative tolerance under which two scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("no candidate rule has a finite error")]
    NoFiniteCandidate,
    #[error("pair ({0}, {1}) does not match the attribute kind")]
    KindMismatch(Value, Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rule: UpdateRule,
    /// In-sample RMSE (numeric) or mean NLL (categorical).
    pub error: f64,
    /// Error with complexity penalty; used for selection.
    pub score: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub tree: TreeParams,
    pub change_ratio: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { tree: TreeParams::default(), change_ratio: 0.1 }
    }
}

fn penalty(p: usize, n: usize) -> f64 {
    let n = n.max(2) as f64;
    p as f64 * n.ln() / (2.0 * n)
}

fn numeric_report(rule: UpdateRule, error: f64, p: usize, n: usize) -> FitReport {
    // ln(rmse) + penalty, mapped back through exp so a zero error stays zero.
    let score = error * penalty(p, n).exp();
    FitReport { rule, error, score, n }
}

fn ks_against(d: &Distribution, sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        let below = i as f64 / n;
        let upto = j as f64 / n;
        let f = d.cdf(v);
        let f_left = match *d {
            Distribution::Fixed { value } => f64::from(u8::from(v > value)),
            _ => f,
        };
        worst = worst.max((f - upto).abs()).max((f_left - below).abs());
        i = j;
    }
    worst
}

/// Fits each supported family and returns the one with the smallest
/// one-sample KS statistic, with the statistic. Families whose support
/// excludes the data are skipped.
pub fn fit_distribution(xs: &[f64]) -> Option<(Distribution, f64)> {
    if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = stats::mean(xs);
    let sd = stats::variance(xs).sqrt();
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut candidates = vec![Distribution::Fixed { value: mean }];
    if sd > 0.0 {
        candidates.push(Distribution::Normal { mean, sd });
    }
    if lo >= 0.0 && mean > 0.0 {
        candidates.push(Distribution::Exponential { rate: 1.0 / mean });
    }
    if hi > lo {
        candidates.push(Distribution::Uniform { lo, hi });
    }
    if lo > 0.0 {
        let logs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let sigma = stats::variance(&logs).sqrt();
        if sigma > 0.0 {
            candidates.push(Distribution::Lognormal { mu: stats::mean(&logs), sigma });
        }
    }
    let mut best: Option<(Distribution, f64)> = None;
    for d in candidates {
        if d.validate().is_err() || !d.mean().is_finite() {
            continue;
        }
        let ks = ks_against(&d, &sorted);
        if best.as_ref().is_none_or(|(_, b)| ks < *b - TIE_TOLERANCE) {
            best = Some((d, ks));
        }
    }
    best
}

/// Linear, regression-tree, delta and generator candidates on numeric pairs.
/// Non-finite candidates are dropped.
pub fn fit_numeric_candidates(pairs: &[(f64, f64)], tree: TreeParams) -> Vec<FitReport> {
    let n = pairs.len();
    if n == 0 || pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Vec::new();
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut out = Vec::new();

    let (slope, intercept) = stats::ols(&x, &y);
    let linear = UpdateRule::Linear { slope, intercept };
    let err = stats::rmse(x.iter().map(|&v| slope * v + intercept), &y);
    out.push(numeric_report(linear, err, 3, n));

    let t = RegressionTree::fit(&x, &y, tree);
    let p = 2 * t.leaves();
    let err = stats::rmse(x.iter().map(|&v| t.predict(v)), &y);
    out.push(numeric_report(UpdateRule::RegressionTree { tree: t }, err, p, n));

    let deltas: Vec<f64> = pairs.iter().map(|(a, b)| b - a).collect();
    if let Some((delta, _)) = fit_distribution(&deltas) {
        let shift = delta.mean();
        let err = stats::rmse(x.iter().map(|&v| v + shift), &y);
        let p = delta.param_count();
        out.push(numeric_report(UpdateRule::DeltaDistribution { delta }, err, p, n));
    }

    if let Some((distribution, _)) = fit_distribution(&y) {
        let m = distribution.mean();
        let err = stats::rmse(x.iter().map(|_| m), &y);
        let p = distribution.param_count();
        out.push(numeric_report(UpdateRule::DistributionGenerator { distribution }, err, p, n));
    }

    out.retain(|r| r.error.is_finite() && r.score.is_finite() && r.rule.validate().is_ok());
    out
}

fn frequencies<'a>(values: impl Iterator<Item = &'a str>) -> (Vec<String>, Vec<f64>) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for v in values {
        *counts.entry(v).or_default() += 1;
        total += 1;
    }
    let states = counts.keys().map(|s| s.to_string()).collect();
    let probs = counts.values().map(|&c| c as f64 / total as f64).collect();
    (states, probs)
}

/// Markov and generator candidates on categorical pairs.
///
/// The Markov states are the observed next values. Each row is smoothed with
/// one pseudo-count per state; a previous value outside the state list uses
/// the marginal next-value frequencies as its row.
pub fn fit_categorical_candidates(pairs: &[(String, String)]) -> Vec<FitReport> {
    let n = pairs.len();
    if n == 0 {
        return Vec::new();
    }
    let (states, marginal) = frequencies(pairs.iter().map(|p| p.1.as_str()));
    let k = states.len();
    let index: BTreeMap<&str, usize> = states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut counts = vec![vec![0usize; k]; k];
    for (prev, next) in pairs {
        if let Some(&r) = index.get(prev.as_str()) {
            counts[r][index[next.as_str()]] += 1;
        }
    }
    let support: Vec<u64> = counts.iter().map(|row| row.iter().sum::<usize>() as u64).collect();
    let matrix: Vec<Vec<f64>> = if k == 1 {
        vec![vec![1.0]]
    } else {
        counts
            .iter()
            .zip(&support)
            .map(|(row, &total)| row.iter().map(|&c| (c as f64 + 1.0) / (total as f64 + k as f64)).collect())
            .collect()
    };
    let markov = UpdateRule::MarkovMatrix { states: states.clone(), matrix, fallback: marginal.clone(), support };
    let generator = UpdateRule::ProbabilisticGenerator { states, probs: marginal };

    let nll = |rule: &UpdateRule| {
        let mut sum = 0.0;
        for (prev, next) in pairs {
            let (states, probs, _) = rule.next_state_probs(prev).expect("categorical rule");
            let j = states.iter().position(|s| s == next).expect("next value is a state");
            sum -= probs[j].ln();
        }
        sum / n as f64
    };
    let mut out = Vec::new();
    for (rule, p) in [(markov, k * (k - 1)), (generator, k - 1)] {
        let error = nll(&rule);
        let score = error + penalty(p, n);
        out.push(FitReport { rule, error, score, n });
    }
    out.retain(|r| r.error.is_finite() && r.rule.validate().is_ok());
    out
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()) + 1e-12
}

/// Candidate with the lowest score; ties go to the earlier rule family.
pub fn select_min_error(candidates: &[FitReport]) -> Result<FitReport, FitError> {
    let mut finite: Vec<&FitReport> = candidates.iter().filter(|c| c.score.is_finite()).collect();
    finite.sort_by_key(|c| c.rule.family());
    let mut best: Option<&FitReport> = None;
    for c in finite {
        match best {
            Some(b) if tied(c.score, b.score) || c.score > b.score => {}
            _ => best = Some(c),
        }
    }
    best.cloned().ok_or(FitError::NoFiniteCandidate)
}

/// Whether `prev -> next` counts as a change of value.
pub fn changed(prev: &Value, next: &Value) -> bool {
    match (prev, next) {
        (Value::Num(a), Value::Num(b)) => (b - a).abs() > 1e-9 * a.abs().max(1.0),
        _ => prev != next,
    }
}

/// True iff at least `change_ratio` of the pairs change value.
pub fn keep_rule(pairs: &[(Value, Value)], change_ratio: f64) -> bool {
    if pairs.is_empty() {
        return false;
    }
    let n_changed = pairs.iter().filter(|(a, b)| changed(a, b)).count();
    n_changed as f64 >= change_ratio * pairs.len() as f64
}

/// Fits all candidates of the attribute's kind and selects the best.
pub fn fit_rule(pairs: &[(Value, Value)], kind: AttrKind, cfg: &FitConfig) -> Result<FitReport, FitError> {
    if pairs.len() < 2 {
        return Err(FitError::TooFewPairs { needed: 2, got: pairs.len() });
    }
    let candidates = match kind {
        AttrKind::Numeric => {
            let nums = pairs
                .iter()
                .map(|(a, b)| match (a, b) {
                    (Value::Num(x), Value::Num(y)) => Ok((*x, *y)),
                    _ => Err(FitError::KindMismatch(a.clone(), b.clone())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            fit_numeric_candidates(&nums, cfg.tree)
        }
        AttrKind::Categorical => {
            let cats = pairs
                .iter()
                .map(|(a, b)| match (a, b) {
                    (Value::Cat(x), Value::Cat(y)) => Ok((x.clone(), y.clone())),
                    _ => Err(FitError::KindMismatch(a.clone(), b.clone())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            fit_categorical_candidates(&cats)
        }
    };
    select_min_error(&candidates)
}

/// A generator over observed values: the best-fitting distribution for
/// numbers, value frequencies for categories.
pub fn fit_generator(values: &[Value], kind: AttrKind) -> Option<UpdateRule> {
    match kind {
        AttrKind::Numeric => {
            let xs: Vec<f64> = values.iter().filter_map(Value::as_num).collect();
            fit_distribution(&xs).map(|(distribution, _)| UpdateRule::DistributionGenerator { distribution })
        }
        AttrKind::Categorical => {
            let cats: Vec<&str> = values.iter().filter_map(Value::as_cat).collect();
            if cats.is_empty() {
                return None;
            }
            let (states, probs) = frequencies(cats.into_iter());
            Some(UpdateRule::ProbabilisticGenerator { states, probs })
        }
    }
}

/// Rule families in selection precedence order for a kind.
pub fn families(kind: AttrKind) -> &'static [RuleFamily] {
    match kind {
        AttrKind::Numeric => &[
            RuleFamily::Linear,
            RuleFamily::RegressionTree,
            RuleFamily::DeltaDistribution,
            RuleFamily::DistributionGenerator,
        ],
        AttrKind::Categorical => &[RuleFamily::MarkovMatrix, RuleFamily::ProbabilisticGenerator],
    }
}
