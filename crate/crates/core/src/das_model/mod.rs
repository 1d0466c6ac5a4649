//! The data-aware simulation model: a process model plus attribute
//! declarations, update rules and their anchors, gateway policies,
//! resources and arrivals. Serialized as versioned JSON.

pub mod calendar;
pub mod condition;
pub mod distribution;
pub mod rule;
pub mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process_model::{GateType, NodeKind, ProcessModel};
use crate::value::AttrKind;

pub use calendar::{Calendar, WeeklyInterval};
pub use condition::{Condition, DEFAULT_MAX_DEPTH};
pub use distribution::Distribution;
pub use rule::{Applied, RuleError, RuleFamily, UpdateRule};
pub use state::{DataState, StateError};

pub const DAS_VERSION: u32 = 1;
const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DasError {
    #[error("malformed DAS JSON at {path}: {message}")]
    Json { path: String, message: String },
    #[error("invalid DAS model:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Global,
    Case,
    Event,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Global => "global",
            Scope::Case => "case",
            Scope::Event => "event",
        })
    }
}

/// A declared attribute. The initializer is a generator: it gives a case
/// attribute its value, an event attribute its starting value in each case,
/// and a global attribute its starting value for the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDecl {
    pub name: String,
    pub scope: Scope,
    pub kind: AttrKind,
    pub initializer: UpdateRule,
}

/// When a rule fires.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    CaseCreation,
    /// Completion of the task with this label.
    TaskCompletion(String),
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anchor::CaseCreation => f.write_str("case creation"),
            Anchor::TaskCompletion(label) => write!(f, "completion of `{label}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAnchor {
    pub attribute: String,
    pub anchor: Anchor,
    pub rule: UpdateRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPolicy {
    #[serde(default)]
    pub condition: Condition,
    pub probability: f64,
}

impl FlowPolicy {
    pub fn new(condition: Condition, probability: f64) -> Self {
        FlowPolicy { condition, probability }
    }
}

/// Conditions and probabilities for every outgoing flow of one split, keyed by flow id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GatewayPolicy {
    pub flows: BTreeMap<String, FlowPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub name: String,
    pub size: usize,
    pub calendar: Calendar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSchema {
    pub pools: Vec<Pool>,
    /// Task label to pool name.
    pub task_pool: BTreeMap<String, String>,
    /// Task label to processing time in seconds.
    pub proc_time: BTreeMap<String, Distribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalModel {
    /// Seconds between consecutive case arrivals.
    pub inter_arrival: Distribution,
    pub calendar: Calendar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DasModel {
    pub das_version: u32,
    pub process: ProcessModel,
    #[serde(default)]
    pub attributes: Vec<AttributeDecl>,
    #[serde(default)]
    pub rules: Vec<RuleAnchor>,
    /// Split gateway id to its policy.
    #[serde(default)]
    pub policies: BTreeMap<String, GatewayPolicy>,
    pub resources: ResourceSchema,
    pub arrivals: ArrivalModel,
}

impl DasModel {
    /// A model without attributes: one always-open pool `staff` of
    /// `pool_size` units serves every task with a fixed processing time,
    /// cases arrive with exponential gaps of the given mean, and every split
    /// has TRUE conditions with equal XOR probabilities (OR: 0.5 per flow).
    pub fn with_defaults(process: ProcessModel, pool_size: usize, proc_seconds: f64, mean_inter_arrival: f64) -> Self {
        let tasks: Vec<String> = process.task_labels().map(str::to_string).collect();
        let mut policies = BTreeMap::new();
        for split in process.decision_splits() {
            let out = process.outgoing_ix(split);
            let p = match process.node(split).kind.gate() {
                Some(GateType::Or) => 0.5,
                _ => 1.0 / out.len() as f64,
            };
            let flows =
                out.iter().map(|&f| (process.flow(f).id.clone(), FlowPolicy::new(Condition::True, p))).collect();
            policies.insert(process.node(split).id.clone(), GatewayPolicy { flows });
        }
        DasModel {
            das_version: DAS_VERSION,
            attributes: Vec::new(),
            rules: Vec::new(),
            policies,
            resources: ResourceSchema {
                pools: vec![Pool { name: "staff".into(), size: pool_size, calendar: Calendar::always() }],
                task_pool: tasks.iter().map(|t| (t.clone(), "staff".to_string())).collect(),
                proc_time: tasks.iter().map(|t| (t.clone(), Distribution::Fixed { value: proc_seconds })).collect(),
            },
            arrivals: ArrivalModel {
                inter_arrival: Distribution::Exponential { rate: 1.0 / mean_inter_arrival },
                calendar: Calendar::always(),
            },
            process,
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeDecl> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn scopes(&self) -> BTreeMap<String, Scope> {
        self.attributes.iter().map(|a| (a.name.clone(), a.scope)).collect()
    }

    /// Rules at `anchor`, in declaration order.
    pub fn rules_at<'a>(&'a self, anchor: &'a Anchor) -> impl Iterator<Item = &'a RuleAnchor> + 'a {
        self.rules.iter().filter(move |r| &r.anchor == anchor)
    }

    /// Checks every cross-reference and component invariant. Problems are
    /// reported with JSON paths.
    pub fn validate(&self) -> Result<(), DasError> {
        let mut issues = Vec::new();
        self.check_attributes(&mut issues);
        self.check_rules(&mut issues);
        self.check_policies(&mut issues);
        self.check_resources(&mut issues);
        if self.das_version != DAS_VERSION {
            issues.push(format!("$.das_version: expected {DAS_VERSION}, got {}", self.das_version));
        }
        if let Err(e) = self.arrivals.inter_arrival.validate() {
            issues.push(format!("$.arrivals.inter_arrival: {e}"));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(DasError::Invalid(issues))
        }
    }

    fn check_attributes(&self, issues: &mut Vec<String>) {
        let mut seen = BTreeSet::new();
        for (i, a) in self.attributes.iter().enumerate() {
            let at = format!("$.attributes[{i}]");
            if a.name.is_empty() {
                issues.push(format!("{at}.name: empty attribute name"));
            }
            if !seen.insert(a.name.as_str()) {
                issues.push(format!("{at}.name: duplicate attribute `{}`", a.name));
            }
            if !a.initializer.is_generator() {
                issues.push(format!("{at}.initializer: must be a generator, got {:?}", a.initializer.family()));
            }
            if a.initializer.kind() != a.kind {
                issues.push(format!(
                    "{at}.initializer: {} rule for {} attribute `{}`",
                    a.initializer.kind(),
                    a.kind,
                    a.name
                ));
            }
            if let Err(e) = a.initializer.validate() {
                issues.push(format!("{at}.initializer: {e}"));
            }
        }
    }

    fn check_rules(&self, issues: &mut Vec<String>) {
        let mut seen = BTreeSet::new();
        for (i, r) in self.rules.iter().enumerate() {
            let at = format!("$.rules[{i}]");
            match self.attribute(&r.attribute) {
                None => issues.push(format!("{at}.attribute: undeclared attribute `{}`", r.attribute)),
                Some(decl) => {
                    if decl.kind != r.rule.kind() {
                        issues.push(format!(
                            "{at}.rule: {} rule for {} attribute `{}`",
                            r.rule.kind(),
                            decl.kind,
                            r.attribute
                        ));
                    }
                    if decl.scope == Scope::Case && r.anchor != Anchor::CaseCreation {
                        issues.push(format!(
                            "{at}.anchor: case attribute `{}` may only be updated at case creation",
                            r.attribute
                        ));
                    }
                }
            }
            if let Anchor::TaskCompletion(label) = &r.anchor {
                if self.process.task_by_label(label).is_none() {
                    issues.push(format!("{at}.anchor: unknown activity `{label}`"));
                }
            }
            if !seen.insert((r.attribute.as_str(), &r.anchor)) {
                issues.push(format!("{at}: second rule for `{}` at {}", r.attribute, r.anchor));
            }
            if let Err(e) = r.rule.validate() {
                issues.push(format!("{at}.rule: {e}"));
            }
        }
    }

    fn check_policies(&self, issues: &mut Vec<String>) {
        let model = &self.process;
        let kinds: BTreeMap<&str, AttrKind> = self.attributes.iter().map(|a| (a.name.as_str(), a.kind)).collect();
        for split in model.decision_splits() {
            let id = &model.node(split).id;
            if !self.policies.contains_key(id) {
                issues.push(format!("$.policies: missing policy for split `{id}`"));
            }
        }
        for (gid, policy) in &self.policies {
            let at = format!("$.policies.{gid}");
            let Some(ix) = model.node_index(gid) else {
                issues.push(format!("{at}: unknown gateway `{gid}`"));
                continue;
            };
            let gate = match model.node(ix).kind {
                NodeKind::Gateway { gate: g @ (GateType::Xor | GateType::Or), .. }
                    if model.node(ix).kind.is_split() =>
                {
                    g
                }
                _ => {
                    issues.push(format!("{at}: `{gid}` is not an XOR or OR split"));
                    continue;
                }
            };
            let expected: BTreeSet<&str> = model.outgoing_ix(ix).iter().map(|&f| model.flow(f).id.as_str()).collect();
            let got: BTreeSet<&str> = policy.flows.keys().map(String::as_str).collect();
            for missing in expected.difference(&got) {
                issues.push(format!("{at}.flows: no policy for flow `{missing}`"));
            }
            for extra in got.difference(&expected) {
                issues.push(format!("{at}.flows.{extra}: not an outgoing flow of `{gid}`"));
            }
            let mut sum = 0.0;
            for (fid, fp) in &policy.flows {
                let fat = format!("{at}.flows.{fid}");
                if !(0.0..=1.0).contains(&fp.probability) {
                    issues.push(format!("{fat}.probability: {} outside [0, 1]", fp.probability));
                }
                sum += fp.probability;
                if fp.condition.depth() > DEFAULT_MAX_DEPTH {
                    issues.push(format!("{fat}.condition: depth {} exceeds {DEFAULT_MAX_DEPTH}", fp.condition.depth()));
                }
                for (attr, kind) in fp.condition.leaves() {
                    match kinds.get(attr) {
                        None => issues.push(format!("{fat}.condition: undeclared attribute `{attr}`")),
                        Some(k) if *k != kind => {
                            issues.push(format!("{fat}.condition: {kind} predicate on {k} attribute `{attr}`"))
                        }
                        _ => {}
                    }
                }
            }
            if gate == GateType::Xor && (sum - 1.0).abs() > PROB_TOLERANCE {
                issues.push(format!("{at}: XOR probabilities sum to {sum}, not 1"));
            }
        }
    }

    fn check_resources(&self, issues: &mut Vec<String>) {
        let res = &self.resources;
        let mut pools = BTreeSet::new();
        for (i, p) in res.pools.iter().enumerate() {
            if !pools.insert(p.name.as_str()) {
                issues.push(format!("$.resources.pools[{i}].name: duplicate pool `{}`", p.name));
            }
            if p.size == 0 {
                issues.push(format!("$.resources.pools[{i}].size: must be positive"));
            }
        }
        let tasks: BTreeSet<&str> = self.process.task_labels().collect();
        for t in &tasks {
            match res.task_pool.get(*t) {
                None => issues.push(format!("$.resources.task_pool: activity `{t}` has no pool")),
                Some(p) if !pools.contains(p.as_str()) => {
                    issues.push(format!("$.resources.task_pool.{t}: unknown pool `{p}`"))
                }
                _ => {}
            }
            match res.proc_time.get(*t) {
                None => issues.push(format!("$.resources.proc_time: activity `{t}` has no processing time")),
                Some(d) => {
                    if let Err(e) = d.validate() {
                        issues.push(format!("$.resources.proc_time.{t}: {e}"));
                    }
                }
            }
        }
        for t in res.task_pool.keys().chain(res.proc_time.keys()) {
            if !tasks.contains(t.as_str()) {
                issues.push(format!("$.resources: unknown activity `{t}`"));
            }
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("DAS model serializes")
    }
}

/// Parses and validates a DAS model from JSON text.
pub fn load_das(text: &str) -> Result<DasModel, DasError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let model: DasModel = serde_path_to_error::deserialize(de)
        .map_err(|e| DasError::Json { path: format!("$.{}", e.path()), message: e.into_inner().to_string() })?;
    model.validate()?;
    Ok(model)
}

pub fn load_das_file(path: &Path) -> Result<DasModel, DasError> {
    load_das(&std::fs::read_to_string(path)?)
}

pub fn save_das(model: &DasModel) -> String {
    model.to_json_string()
}
