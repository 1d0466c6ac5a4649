//! Classification of log attributes into case, global and event scope, and
//! the update rules each modifying activity applies.
//!
//! Case attributes are those whose observed values stay constant within
//! almost every case. The remaining (dynamic) attributes are reconstructed
//! twice from half-events: once with one running value per case (event
//! hypothesis) and once with one running value for the whole log (global
//! hypothesis). The hypothesis whose best rules reconstruct the observed
//! values with the lower error decides the scope.

use std::collections::{BTreeMap, HashMap, VecDeque};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::das_model::{Scope, UpdateRule};
use crate::event_log::EventLog;
use crate::update_rules::{self, changed, FitConfig, FitReport, TIE_TOLERANCE};
use crate::value::{AttrKind, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Start,
    End,
}

/// One half of an activity instance. Only END halves carry attributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfEvent<'a> {
    pub case_id: &'a str,
    pub activity: &'a str,
    pub timestamp: DateTime<Utc>,
    pub phase: Phase,
    pub attributes: Option<&'a BTreeMap<String, Value>>,
    /// Position of the case among the log's traces.
    pub case_rank: usize,
    /// Position of the event within its trace.
    pub event_rank: usize,
    zero_length: bool,
}

impl HalfEvent<'_> {
    fn sort_key(&self) -> (DateTime<Utc>, u8, usize, usize, u8) {
        // ENDs before STARTs at equal times, so a task starting when another
        // ends sees its value. A zero-length event keeps START before END.
        let (class, sub) = match (self.phase, self.zero_length) {
            (Phase::End, _) => (0, 1),
            (Phase::Start, true) => (0, 0),
            (Phase::Start, false) => (1, 0),
        };
        (self.timestamp, class, self.case_rank, self.event_rank, sub)
    }
}

/// START and END halves of every event, trace by trace.
pub fn split_event_log(log: &EventLog) -> Vec<HalfEvent<'_>> {
    let mut out = Vec::with_capacity(2 * log.len());
    for (case_rank, trace) in log.traces().into_iter().enumerate() {
        for (event_rank, e) in trace.events.into_iter().enumerate() {
            let zero_length = e.start == e.end;
            let half = |phase, timestamp, attributes| HalfEvent {
                case_id: &e.case_id,
                activity: &e.activity,
                timestamp,
                phase,
                attributes,
                case_rank,
                event_rank,
                zero_length,
            };
            out.push(half(Phase::Start, e.start, None));
            out.push(half(Phase::End, e.end, Some(&e.attributes)));
        }
    }
    out
}

/// All half-events on one timeline, ordered by time with ENDs first at equal
/// times, then by case and event position.
pub fn timeline(log: &EventLog) -> Vec<HalfEvent<'_>> {
    let mut halves = split_event_log(log);
    halves.sort_by_key(HalfEvent::sort_key);
    halves
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    /// One running value per case, starting from the initial value.
    Event,
    /// One running value across the whole log.
    Global,
}

/// Starting values used before an attribute is first observed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitGenerator {
    pub values: BTreeMap<String, Value>,
}

impl InitGenerator {
    /// `0` for numeric and the unset sentinel for categorical attributes.
    pub fn defaults<'a>(attrs: impl IntoIterator<Item = (&'a String, &'a AttrKind)>) -> Self {
        InitGenerator { values: attrs.into_iter().map(|(n, k)| (n.clone(), Value::default_for(*k))).collect() }
    }
}

/// ⟨start value, end value⟩ pairs per (activity, attribute), in timeline
/// order of the END half-events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionStore {
    pub pairs: BTreeMap<(String, String), Vec<(Value, Value)>>,
    /// ENDs with no matching earlier START for the same case and activity.
    pub unmatched_ends: usize,
}

impl TransitionStore {
    pub fn get(&self, activity: &str, attribute: &str) -> &[(Value, Value)] {
        self.pairs.get(&(activity.to_string(), attribute.to_string())).map_or(&[], Vec::as_slice)
    }
}

/// Walks `halves` in order, tracking a running value per attribute: per
/// case under the event hypothesis, shared under the global one. A START
/// remembers the running values; the matching END of an attribute it
/// observes records the pair and moves the running value.
pub fn find_data_values(halves: &[HalfEvent<'_>], init: &InitGenerator, hypothesis: Hypothesis) -> TransitionStore {
    let names: Vec<&String> = init.values.keys().collect();
    let initial: Vec<Value> = init.values.values().cloned().collect();
    let mut running: HashMap<&str, Vec<Value>> = HashMap::new();
    let mut pending: HashMap<(&str, &str), VecDeque<Vec<Value>>> = HashMap::new();
    let mut store = TransitionStore::default();
    for h in halves {
        let key = match hypothesis {
            Hypothesis::Event => h.case_id,
            Hypothesis::Global => "",
        };
        let beta = running.entry(key).or_insert_with(|| initial.clone());
        match h.phase {
            Phase::Start => {
                pending.entry((h.case_id, h.activity)).or_default().push_back(beta.clone());
            }
            Phase::End => {
                let Some(start) = pending.get_mut(&(h.case_id, h.activity)).and_then(VecDeque::pop_front) else {
                    store.unmatched_ends += 1;
                    continue;
                };
                let observed = h.attributes.expect("END halves carry attributes");
                for (i, name) in names.iter().enumerate() {
                    if let Some(v) = observed.get(*name) {
                        store
                            .pairs
                            .entry((h.activity.to_string(), name.to_string()))
                            .or_default()
                            .push((start[i].clone(), v.clone()));
                        beta[i] = v.clone();
                    }
                }
            }
        }
    }
    store
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoveryConfig {
    /// Minimum share of cases in which an attribute must stay constant to be
    /// a case attribute.
    pub case_threshold: f64,
    /// Minimum pairs per (activity, attribute) for a rule fit to count.
    pub min_samples: usize,
    pub fit: FitConfig,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig { case_threshold: 0.9, min_samples: 30, fit: FitConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseAttribute {
    pub initializer: UpdateRule,
    /// Share of observing cases in which the attribute never changes.
    pub constant_fraction: f64,
}

fn observed_values<'a>(log: &'a EventLog, name: &str) -> Vec<Vec<&'a Value>> {
    log.traces()
        .into_iter()
        .map(|t| t.events.iter().filter_map(|e| e.attributes.get(name)).collect::<Vec<_>>())
        .filter(|v| !v.is_empty())
        .collect()
}

/// Share of observing cases in which `name` keeps one value; `None` if no
/// case observes it.
pub fn constant_fraction(log: &EventLog, name: &str) -> Option<f64> {
    let per_case = observed_values(log, name);
    if per_case.is_empty() {
        return None;
    }
    let constant = per_case.iter().filter(|vals| vals.iter().all(|v| !changed(vals[0], v))).count();
    Some(constant as f64 / per_case.len() as f64)
}

/// Attributes constant in at least `threshold` of the cases that observe
/// them, each with an initializer fitted to the cases' first values.
pub fn classify_case_attributes(log: &EventLog, threshold: f64) -> BTreeMap<String, CaseAttribute> {
    let mut out = BTreeMap::new();
    for (name, kind) in log.schema() {
        let Some(fraction) = constant_fraction(log, name) else { continue };
        if fraction + 1e-12 < threshold {
            continue;
        }
        let firsts: Vec<Value> = observed_values(log, name).into_iter().map(|v| v[0].clone()).collect();
        let initializer = update_rules::fit_generator(&firsts, *kind)
            .unwrap_or_else(|| UpdateRule::constant(&Value::default_for(*kind)));
        out.insert(name.clone(), CaseAttribute { initializer, constant_fraction: fraction });
    }
    out
}

/// A discovered rule anchored at the completion of `activity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityRule {
    pub activity: String,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeResult {
    pub name: String,
    pub kind: AttrKind,
    pub scope: Scope,
    pub initializer: UpdateRule,
    /// Rules kept under the chosen hypothesis, by activity label.
    pub rules: Vec<ActivityRule>,
    /// Sample-weighted mean reconstruction error under each hypothesis.
    pub event_error: Option<f64>,
    pub global_error: Option<f64>,
    /// Set when no activity had enough pairs to compare the hypotheses.
    pub low_confidence: bool,
    pub constant_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub attributes: Vec<AttributeResult>,
    /// ENDs without a matching START (counted once per hypothesis).
    pub unmatched_ends: usize,
}

impl ClassificationResult {
    pub fn get(&self, name: &str) -> Option<&AttributeResult> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn scope_of(&self, name: &str) -> Option<Scope> {
        self.get(name).map(|a| a.scope)
    }
}

/// Per-activity fits under one hypothesis and their weighted mean error.
struct HypothesisFit {
    fits: BTreeMap<String, FitReport>,
    error: Option<f64>,
}

fn fit_hypothesis(
    store: &TransitionStore,
    activities: &[String],
    name: &str,
    kind: AttrKind,
    cfg: &DiscoveryConfig,
) -> HypothesisFit {
    let mut fits = BTreeMap::new();
    let (mut weighted, mut total) = (0.0, 0usize);
    for activity in activities {
        let pairs = store.get(activity, name);
        if pairs.len() < cfg.min_samples.max(2) {
            continue;
        }
        if let Ok(report) = update_rules::fit_rule(pairs, kind, &cfg.fit) {
            weighted += report.error * report.n as f64;
            total += report.n;
            fits.insert(activity.clone(), report);
        }
    }
    let error = (total > 0).then(|| weighted / total as f64);
    HypothesisFit { fits, error }
}

/// Generator rule over the end values of an activity's pairs.
fn generator_report(pairs: &[(Value, Value)], kind: AttrKind) -> Option<FitReport> {
    let ends: Vec<Value> = pairs.iter().map(|p| p.1.clone()).collect();
    let rule = update_rules::fit_generator(&ends, kind)?;
    Some(FitReport { rule, error: f64::NAN, score: f64::NAN, n: pairs.len() })
}

/// Scope and rules for each dynamic attribute in `init`.
///
/// Ties between the hypotheses (relative difference within the tie
/// tolerance) resolve to event scope. Activities whose pairs barely change
/// the value get no rule; activities with too few pairs for a fit get a
/// generator over their observed end values.
pub fn classify_dynamic(log: &EventLog, init: &InitGenerator, cfg: &DiscoveryConfig) -> ClassificationResult {
    let halves = timeline(log);
    let by_event = find_data_values(&halves, init, Hypothesis::Event);
    let by_global = find_data_values(&halves, init, Hypothesis::Global);
    let mut activities: Vec<String> = log.events().iter().map(|e| e.activity.clone()).collect();
    activities.sort();
    activities.dedup();

    let mut result = ClassificationResult {
        attributes: Vec::new(),
        unmatched_ends: by_event.unmatched_ends + by_global.unmatched_ends,
    };
    for (name, start) in &init.values {
        let Some(kind) = log.schema().get(name).copied() else { continue };
        let ev = fit_hypothesis(&by_event, &activities, name, kind, cfg);
        let gl = fit_hypothesis(&by_global, &activities, name, kind, cfg);
        let (scope, low_confidence) = match (ev.error, gl.error) {
            (Some(e), Some(g)) => {
                let tie = (e - g).abs() <= TIE_TOLERANCE * e.abs().max(g.abs()) + 1e-12;
                (if !tie && g < e { Scope::Global } else { Scope::Event }, false)
            }
            (None, Some(_)) => (Scope::Global, false),
            (Some(_), None) => (Scope::Event, false),
            (None, None) => (Scope::Event, true),
        };
        let (store, fit) = match scope {
            Scope::Global => (&by_global, &gl),
            _ => (&by_event, &ev),
        };
        let mut rules = Vec::new();
        for activity in &activities {
            let pairs = store.get(activity, name);
            if !update_rules::keep_rule(pairs, cfg.fit.change_ratio) {
                continue;
            }
            let report = match fit.fits.get(activity) {
                Some(r) => Some(r.clone()),
                None => generator_report(pairs, kind),
            };
            if let Some(report) = report {
                rules.push(ActivityRule { activity: activity.clone(), report });
            }
        }
        let initializer = match scope {
            // The run starts from the first value seen on the global timeline.
            Scope::Global => halves
                .iter()
                .find_map(|h| h.attributes.and_then(|a| a.get(name)))
                .map_or_else(|| UpdateRule::constant(start), UpdateRule::constant),
            _ => UpdateRule::constant(start),
        };
        result.attributes.push(AttributeResult {
            name: name.clone(),
            kind,
            scope,
            initializer,
            rules,
            event_error: ev.error,
            global_error: gl.error,
            low_confidence,
            constant_fraction: constant_fraction(log, name),
        });
    }
    result
}

/// Full attribute classification: case attributes first, then the
/// event/global decision for the rest.
pub fn classify_attributes(log: &EventLog, cfg: &DiscoveryConfig) -> ClassificationResult {
    let case_attrs = classify_case_attributes(log, cfg.case_threshold);
    let dynamic = log.schema().iter().filter(|(n, _)| !case_attrs.contains_key(*n));
    let init = InitGenerator::defaults(dynamic);
    let mut result = classify_dynamic(log, &init, cfg);
    for (name, ca) in case_attrs {
        result.attributes.push(AttributeResult {
            kind: log.schema()[&name],
            name,
            scope: Scope::Case,
            initializer: ca.initializer,
            rules: Vec::new(),
            event_error: None,
            global_error: None,
            low_confidence: false,
            constant_fraction: Some(ca.constant_fraction),
        });
    }
    result.attributes.sort_by(|a, b| a.name.cmp(&b.name));
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::Event;
    use chrono::TimeZone;

    fn t(min: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + min * 60, 0).unwrap()
    }

    fn ev(case: &str, act: &str, s: i64, e: i64) -> Event {
        Event::new(case, act, t(s), t(e))
    }

    fn init_x() -> InitGenerator {
        InitGenerator { values: [("x".to_string(), Value::Num(0.0))].into_iter().collect() }
    }

    #[test]
    fn split_halves() {
        let log = EventLog::from_events(vec![ev("a", "T1", 0, 1).with_attr("x", 5.0), ev("a", "T2", 2, 3)]).unwrap();
        let halves = split_event_log(&log);
        assert_eq!(halves.len(), 4);
        assert_eq!(halves[0].phase, Phase::Start);
        assert!(halves[0].attributes.is_none());
        assert_eq!(halves[1].attributes.unwrap(), &log.events()[0].attributes);
    }

    #[test]
    fn hand_traced_pairs() {
        let log = EventLog::from_events(vec![
            ev("a", "T1", 0, 1).with_attr("x", 5.0),
            ev("a", "T2", 2, 3).with_attr("x", 9.0),
        ])
        .unwrap();
        let store = find_data_values(&timeline(&log), &init_x(), Hypothesis::Event);
        assert_eq!(store.get("T1", "x"), [(Value::Num(0.0), Value::Num(5.0))]);
        assert_eq!(store.get("T2", "x"), [(Value::Num(5.0), Value::Num(9.0))]);
        assert!(store.get("T1", "y").is_empty());
    }

    #[test]
    fn cases_do_not_leak_under_event_hypothesis() {
        // Interleaved: b's values land between a's events on the timeline.
        let log = EventLog::from_events(vec![
            ev("a", "T1", 0, 1).with_attr("x", 1.0),
            ev("b", "T1", 1, 2).with_attr("x", 100.0),
            ev("a", "T2", 3, 4).with_attr("x", 2.0),
            ev("b", "T2", 3, 5).with_attr("x", 200.0),
        ])
        .unwrap();
        let h = timeline(&log);
        let event = find_data_values(&h, &init_x(), Hypothesis::Event);
        assert_eq!(event.get("T2", "x"), [(Value::Num(1.0), Value::Num(2.0)), (Value::Num(100.0), Value::Num(200.0))]);
        let global = find_data_values(&h, &init_x(), Hypothesis::Global);
        assert_eq!(
            global.get("T2", "x"),
            [(Value::Num(100.0), Value::Num(2.0)), (Value::Num(100.0), Value::Num(200.0))]
        );
    }

    #[test]
    fn end_before_start_at_equal_time() {
        let log = EventLog::from_events(vec![
            ev("a", "T1", 0, 5).with_attr("x", 7.0),
            ev("b", "T2", 5, 6).with_attr("x", 8.0),
        ])
        .unwrap();
        let global = find_data_values(&timeline(&log), &init_x(), Hypothesis::Global);
        assert_eq!(global.get("T2", "x"), [(Value::Num(7.0), Value::Num(8.0))]);
    }

    #[test]
    fn zero_length_events_pair_up() {
        let log = EventLog::from_events(vec![ev("a", "T1", 3, 3).with_attr("x", 4.0)]).unwrap();
        let store = find_data_values(&timeline(&log), &init_x(), Hypothesis::Global);
        assert_eq!(store.unmatched_ends, 0);
        assert_eq!(store.get("T1", "x").len(), 1);
    }

    #[test]
    fn case_attribute_threshold() {
        let mut events = Vec::new();
        for c in 0..50 {
            let id = format!("c{c}");
            let second = if c < 4 { 2.0 } else { 1.0 };
            events.push(ev(&id, "A", c, c + 1).with_attr("k", 1.0));
            events.push(ev(&id, "B", c + 1, c + 2).with_attr("k", second));
        }
        let log = EventLog::from_events(events).unwrap();
        // 46 of 50 cases constant: 0.92.
        assert!((constant_fraction(&log, "k").unwrap() - 0.92).abs() < 1e-12);
        assert!(classify_case_attributes(&log, 0.9).contains_key("k"));
        assert!(!classify_case_attributes(&log, 0.95).contains_key("k"));
    }
}
