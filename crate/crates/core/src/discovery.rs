//! End-to-end discovery of a data-aware simulation model from a log and a
//! process model.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::attribute_discovery::{classify_attributes, ClassificationResult, DiscoveryConfig, InitGenerator};
use crate::branching_discovery::{discover_policies, replay, BranchConfig, BranchError, PolicyReport, ReplayStats};
use crate::das_model::{
    Anchor, ArrivalModel, AttributeDecl, Calendar, DasModel, Distribution, Pool, ResourceSchema, RuleAnchor, Scope,
    DAS_VERSION,
};
use crate::event_log::EventLog;
use crate::process_model::ProcessModel;
use crate::update_rules::fit_distribution;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub attributes: DiscoveryConfig,
    pub branching: BranchConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct Discovered {
    #[serde(skip)]
    pub model: DasModel,
    pub classification: ClassificationResult,
    pub replay: ReplayStats,
    pub policies: PolicyReport,
    pub warnings: Vec<String>,
}

/// Pool name of a resource: the part before a trailing `-<number>`.
fn pool_of(resource: &str) -> &str {
    match resource.rsplit_once('-') {
        Some((pool, unit)) if !pool.is_empty() && unit.chars().all(|c| c.is_ascii_digit()) => pool,
        _ => resource,
    }
}

fn max_concurrency(log: &EventLog) -> usize {
    let mut edges: Vec<(i64, i32)> = Vec::with_capacity(2 * log.len());
    for e in log.events() {
        edges.push((e.start.timestamp_millis(), 1));
        edges.push((e.end.timestamp_millis(), -1));
    }
    edges.sort();
    let (mut live, mut peak) = (0i32, 0i32);
    for (_, d) in edges {
        live += d;
        peak = peak.max(live);
    }
    peak.max(1) as usize
}

/// Pools, task assignment and processing times estimated from the log.
/// Tasks never observed keep a one-second fixed duration.
pub fn fit_resources(log: &EventLog, process: &ProcessModel) -> ResourceSchema {
    let mut units: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    let mut task_votes: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
    let mut durations: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in log.events() {
        let pool = e.resource.as_deref().map_or("staff", pool_of).to_string();
        if let Some(r) = &e.resource {
            units.entry(pool.clone()).or_default().insert(r);
        }
        *task_votes.entry(&e.activity).or_default().entry(pool).or_default() += 1;
        durations.entry(&e.activity).or_default().push((e.end - e.start).num_milliseconds() as f64 / 1000.0);
    }
    let fallback_size = max_concurrency(log);
    let mut pools: BTreeMap<String, usize> = units.into_iter().map(|(p, u)| (p, u.len())).collect();
    let mut task_pool = BTreeMap::new();
    let mut proc_time = BTreeMap::new();
    for label in process.task_labels() {
        let pool = task_votes
            .get(label)
            .and_then(|v| v.iter().max_by_key(|(name, n)| (**n, std::cmp::Reverse((*name).clone()))))
            .map_or_else(|| "staff".to_string(), |(p, _)| p.clone());
        pools.entry(pool.clone()).or_insert(fallback_size);
        task_pool.insert(label.to_string(), pool);
        let dist = durations
            .get(label)
            .and_then(|d| fit_distribution(d))
            .map_or(Distribution::Fixed { value: 1.0 }, |(d, _)| d);
        proc_time.insert(label.to_string(), dist);
    }
    ResourceSchema {
        pools: pools
            .into_iter()
            .map(|(name, size)| Pool { name, size: size.max(1), calendar: Calendar::always() })
            .collect(),
        task_pool,
        proc_time,
    }
}

/// Inter-arrival distribution of case start times, in seconds.
pub fn fit_arrivals(log: &EventLog) -> ArrivalModel {
    let starts: Vec<i64> = log.traces().iter().map(|t| t.first_start().timestamp_millis()).collect();
    let gaps: Vec<f64> = starts.windows(2).map(|w| (w[1] - w[0]) as f64 / 1000.0).collect();
    let inter_arrival = fit_distribution(&gaps).map_or(Distribution::Fixed { value: 60.0 }, |(d, _)| d);
    ArrivalModel { inter_arrival, calendar: Calendar::always() }
}

/// Discovers attributes, update rules and branching policies from `log`.
/// Resources and arrivals come from `template` when given, otherwise from
/// the log.
pub fn discover(
    log: &EventLog,
    process: &ProcessModel,
    template: Option<&DasModel>,
    cfg: &PipelineConfig,
) -> Result<Discovered, BranchError> {
    let classification = classify_attributes(log, &cfg.attributes);
    let mut warnings = Vec::new();
    let labels: BTreeSet<&str> = process.task_labels().collect();
    let mut attributes = Vec::new();
    let mut rules = Vec::new();
    for a in &classification.attributes {
        if a.low_confidence {
            warnings.push(format!("attribute {}: too few samples, scope defaulted to event", a.name));
        }
        attributes.push(AttributeDecl {
            name: a.name.clone(),
            scope: a.scope,
            kind: a.kind,
            initializer: a.initializer.clone(),
        });
        if a.scope == Scope::Case {
            continue;
        }
        for r in &a.rules {
            if !labels.contains(r.activity.as_str()) {
                warnings.push(format!("attribute {}: activity {} is not in the model", a.name, r.activity));
                continue;
            }
            rules.push(RuleAnchor {
                attribute: a.name.clone(),
                anchor: Anchor::TaskCompletion(r.activity.clone()),
                rule: r.report.rule.clone(),
            });
        }
    }

    let init = InitGenerator {
        values: attributes.iter().filter_map(|a| a.initializer.as_constant().map(|v| (a.name.clone(), v))).collect(),
    };
    let replayed = replay(log, process, &attributes, &init)?;
    if replayed.stats.skipped > 0 {
        warnings.push(format!("{} of {} traces skipped during replay", replayed.stats.skipped, replayed.stats.traces));
    }
    let (policies, report) = discover_policies(&replayed, process, &cfg.branching);
    warnings.extend(report.warnings.iter().cloned());

    let (resources, arrivals) = match template {
        Some(t) => (t.resources.clone(), t.arrivals.clone()),
        None => (fit_resources(log, process), fit_arrivals(log)),
    };
    let model = DasModel {
        das_version: DAS_VERSION,
        process: process.clone(),
        attributes,
        rules,
        policies,
        resources,
        arrivals,
    };
    Ok(Discovered { model, classification, replay: replayed.stats, policies: report, warnings })
}
