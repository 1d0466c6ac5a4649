//! Distances between samples and between logs.

use std::cmp::Ordering;
use std::collections::HashMap;

use num_traits::Float;
use serde::Serialize;
use thiserror::Error;

use crate::event_log::EventLog;
use crate::value::Value;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("sample is empty")]
    EmptySample,
    #[error("samples mix numeric and categorical values")]
    KindMismatch,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("n-gram size must be at least 1")]
    ZeroN,
}

fn sorted<F: Float>(xs: &[F]) -> Result<Vec<F>, MetricError> {
    if xs.is_empty() {
        return Err(MetricError::EmptySample);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(v)
}

/// One-dimensional Wasserstein-1 distance: the integral over (0, 1) of the
/// absolute difference of the two quantile functions, computed exactly.
pub fn emd_1d<F: Float>(a: &[F], b: &[F]) -> Result<F, MetricError> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (n, m) = (a.len(), b.len());
    // Quantile steps of `a` end at multiples of m, those of `b` at multiples
    // of n, on a common grid of n·m units.
    let unit = F::one() / (F::from(n).unwrap() * F::from(m).unwrap());
    let (mut i, mut j, mut level) = (0, 0, 0usize);
    let mut total = F::zero();
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        total = total + (a[i] - b[j]).abs() * F::from(next - level).unwrap() * unit;
        level = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(total)
}

/// Largest absolute difference between the two empirical CDFs, taken over
/// every value in either sample.
pub fn ks_stat<T: PartialOrd + Clone>(a: &[T], b: &[T]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySample);
    }
    let order = |x: &T, y: &T| x.partial_cmp(y).unwrap_or(Ordering::Equal);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(order);
    b.sort_by(order);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => {
                if order(x, y) == Ordering::Greater {
                    y.clone()
                } else {
                    x.clone()
                }
            }
            (Some(x), None) => x.clone(),
            (None, Some(y)) => y.clone(),
            (None, None) => unreachable!(),
        };
        while i < a.len() && order(&a[i], &v) != Ordering::Greater {
            i += 1;
        }
        while j < b.len() && order(&b[j], &v) != Ordering::Greater {
            j += 1;
        }
        worst = worst.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(worst)
}

/// KS statistic over attribute values of one kind. Categories are compared
/// in lexicographic order.
pub fn ks_values(a: &[Value], b: &[Value]) -> Result<f64, MetricError> {
    let nums = |v: &[Value]| v.iter().map(Value::as_num).collect::<Option<Vec<f64>>>();
    fn cats(v: &[Value]) -> Option<Vec<&str>> {
        v.iter().map(Value::as_cat).collect()
    }
    if let (Some(x), Some(y)) = (nums(a), nums(b)) {
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        return ks_stat(&x, &y);
    }
    match (cats(a), cats(b)) {
        (Some(x), Some(y)) => ks_stat(&x, &y),
        _ => Err(MetricError::KindMismatch),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Token<'a> {
    Start,
    Activity(&'a str),
    End,
}

fn ngram_profile<'a, S: AsRef<str>>(traces: &'a [Vec<S>], n: usize) -> HashMap<Vec<Token<'a>>, f64> {
    let mut counts: HashMap<Vec<Token<'a>>, f64> = HashMap::new();
    let mut total = 0.0;
    for trace in traces {
        let mut padded = vec![Token::Start; n - 1];
        padded.extend(trace.iter().map(|a| Token::Activity(a.as_ref())));
        padded.extend(std::iter::repeat_n(Token::End, n - 1));
        for gram in padded.windows(n) {
            *counts.entry(gram.to_vec()).or_default() += 1.0;
            total += 1.0;
        }
    }
    for v in counts.values_mut() {
        *v /= total;
    }
    counts
}

/// Total-variation distance between the pooled n-gram frequencies of two
/// sets of activity sequences. Each sequence is padded with `n - 1` start
/// and `n - 1` end markers that never equal an activity.
pub fn ngram_distance<S: AsRef<str>>(a: &[Vec<S>], b: &[Vec<S>], n: usize) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::ZeroN);
    }
    let pa = ngram_profile(a, n);
    let pb = ngram_profile(b, n);
    if pa.is_empty() || pb.is_empty() {
        return Err(MetricError::EmptySample);
    }
    let mut sum = 0.0;
    for (g, p) in &pa {
        sum += (p - pb.get(g).copied().unwrap_or(0.0)).abs();
    }
    for (g, q) in &pb {
        if !pa.contains_key(g) {
            sum += q;
        }
    }
    Ok((0.5 * sum).clamp(0.0, 1.0))
}

/// Activity sequences of a log, trace by trace.
pub fn activity_sequences(log: &EventLog) -> Vec<Vec<String>> {
    log.traces().iter().map(|t| t.activities().map(str::to_string).collect()).collect()
}

pub fn ngram_distance_logs(a: &EventLog, b: &EventLog, n: usize) -> Result<f64, MetricError> {
    ngram_distance(&activity_sequences(a), &activity_sequences(b), n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Emd,
    Ks,
    Ngram,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AttributeDistance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LogComparison {
    /// Attributes present in both schemas with the same kind, by name.
    pub attributes: std::collections::BTreeMap<String, AttributeDistance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ngram: Option<f64>,
    pub ngram_n: usize,
}

/// Compares two logs: EMD (numeric only) and KS per shared attribute over all
/// observed values, and the n-gram distance over activity sequences.
pub fn compare_logs(
    a: &EventLog,
    b: &EventLog,
    metrics: &[Metric],
    ngram_n: usize,
) -> Result<LogComparison, MetricError> {
    let mut out = LogComparison { ngram_n, ..Default::default() };
    let values = |log: &EventLog, name: &str| -> Vec<Value> {
        log.events().iter().filter_map(|e| e.attributes.get(name).cloned()).collect()
    };
    for (name, kind) in a.schema() {
        if b.schema().get(name) != Some(kind) {
            continue;
        }
        let (va, vb) = (values(a, name), values(b, name));
        if va.is_empty() || vb.is_empty() {
            continue;
        }
        let mut d = AttributeDistance::default();
        if metrics.contains(&Metric::Emd) {
            let xa: Vec<f64> = va.iter().filter_map(Value::as_num).collect();
            let xb: Vec<f64> = vb.iter().filter_map(Value::as_num).collect();
            if !xa.is_empty() && !xb.is_empty() {
                // Overflowed samples have no finite distance.
                d.emd = Some(emd_1d(&xa, &xb).unwrap_or(f64::INFINITY));
            }
        }
        if metrics.contains(&Metric::Ks) {
            d.ks = Some(ks_values(&va, &vb).unwrap_or(1.0));
        }
        out.attributes.insert(name.clone(), d);
    }
    if metrics.contains(&Metric::Ngram) {
        out.ngram = Some(ngram_distance_logs(a, b, ngram_n)?);
    }
    Ok(out)
}
