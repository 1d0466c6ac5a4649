//! Branching conditions and probabilities from a log replayed over a model.
//!
//! Traces are replayed together on the global half-event timeline. Tokens
//! carry the data state of the case at the moment they were produced, so a
//! split decision sees the state after the completion that fed the split.
//! Choices at XOR splits follow from the task that consumes the token;
//! tokens leaving an OR split stay inactive until a task uses them, and the
//! branches used by the time the paired join fires form the decision.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use crate::attribute_discovery::{timeline, InitGenerator, Phase};
use crate::das_model::{AttributeDecl, Condition, FlowPolicy, GatewayPolicy, Scope};
use crate::event_log::EventLog;
use crate::process_model::{Direction, FlowIndex, GateType, NodeIndex, NodeKind, ProcessModel};
use crate::stats::{cross_validated_accuracy, ClassTreeParams, ClassificationTree, Predicate};
use crate::value::Value;

#[derive(Debug, Error, PartialEq)]
pub enum BranchError {
    #[error("{skipped} of {total} traces do not fit the process model")]
    NonConforming { skipped: usize, total: usize },
}

/// Data state at one split decision and the outgoing flows taken.
#[derive(Debug, Clone, PartialEq)]
pub struct GatewayObservation {
    pub gateway: String,
    pub features: Rc<Vec<Value>>,
    pub taken: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplayStats {
    pub traces: usize,
    pub replayed: usize,
    /// Traces with an activity outside the model or an unreachable task.
    pub skipped: usize,
    /// Replayed traces whose tokens could not all reach an end event.
    pub incomplete: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Feature names, in the order of every observation's feature vector.
    pub features: Vec<String>,
    pub observations: Vec<GatewayObservation>,
    pub stats: ReplayStats,
}

#[derive(Debug, Clone)]
struct Token {
    flow: FlowIndex,
    snapshot: Rc<Vec<Value>>,
    /// OR decisions and the branch this token belongs to.
    tags: Vec<(usize, FlowIndex)>,
    active: bool,
}

#[derive(Debug)]
struct Decision {
    gateway: NodeIndex,
    snapshot: Rc<Vec<Value>>,
    taken: BTreeSet<FlowIndex>,
}

#[derive(Debug, Default)]
struct CaseReplay {
    started: bool,
    failed: bool,
    values: Vec<Value>,
    tokens: Vec<Token>,
    decisions: Vec<Decision>,
    /// Tags of the token each running task consumed, by event position.
    running: HashMap<usize, Vec<(usize, FlowIndex)>>,
}

struct Replayer<'m> {
    model: &'m ProcessModel,
    scopes: Vec<Scope>,
    globals: Vec<Value>,
}

impl<'m> Replayer<'m> {
    fn snapshot(&self, case: &CaseReplay) -> Rc<Vec<Value>> {
        let values = case
            .values
            .iter()
            .zip(&self.scopes)
            .zip(&self.globals)
            .map(|((v, s), g)| if *s == Scope::Global { g.clone() } else { v.clone() })
            .collect();
        Rc::new(values)
    }

    fn activate(case: &mut CaseReplay, token: &Token) {
        for &(d, branch) in &token.tags {
            case.decisions[d].taken.insert(branch);
        }
    }

    /// Shortest route from `flow` to `target` passing only gateways, as the
    /// sequence of flows after `flow`.
    fn route(&self, flow: FlowIndex, target: NodeIndex) -> Option<Vec<FlowIndex>> {
        let m = self.model;
        let mut prev: HashMap<FlowIndex, FlowIndex> = HashMap::new();
        let mut queue = std::collections::VecDeque::from([flow]);
        let mut seen = BTreeSet::from([flow]);
        while let Some(f) = queue.pop_front() {
            let node = m.target_of(f);
            if node == target {
                let mut path = vec![];
                let mut cur = f;
                while cur != flow {
                    path.push(cur);
                    cur = prev[&cur];
                }
                path.reverse();
                return Some(path);
            }
            if !matches!(m.node(node).kind, NodeKind::Gateway { .. }) {
                continue;
            }
            for &next in m.outgoing_ix(node) {
                if seen.insert(next) {
                    prev.insert(next, f);
                    queue.push_back(next);
                }
            }
        }
        None
    }

    /// Fires the gateway at the end of token `i`'s flow, sending it towards
    /// `out`. Returns false when a join is not ready.
    fn fire(&self, case: &mut CaseReplay, i: usize, out: FlowIndex) -> bool {
        let m = self.model;
        let node = m.target_of(case.tokens[i].flow);
        let NodeKind::Gateway { gate, direction } = m.node(node).kind else { return false };
        let split = direction == Direction::Split;
        match (gate, split) {
            (GateType::Xor, true) => {
                let mut tk = case.tokens.remove(i);
                Self::activate(case, &tk);
                case.decisions.push(Decision {
                    gateway: node,
                    snapshot: tk.snapshot.clone(),
                    taken: BTreeSet::from([out]),
                });
                tk.flow = out;
                tk.active = true;
                case.tokens.push(tk);
            }
            (GateType::And, true) => {
                let tk = case.tokens.remove(i);
                Self::activate(case, &tk);
                for &f in m.outgoing_ix(node) {
                    case.tokens.push(Token { flow: f, active: true, ..tk.clone() });
                }
            }
            (GateType::Or, true) => {
                let tk = case.tokens.remove(i);
                Self::activate(case, &tk);
                let d = case.decisions.len();
                case.decisions.push(Decision { gateway: node, snapshot: tk.snapshot.clone(), taken: BTreeSet::new() });
                for &f in m.outgoing_ix(node) {
                    let mut tags = tk.tags.clone();
                    tags.push((d, f));
                    case.tokens.push(Token { flow: f, snapshot: tk.snapshot.clone(), tags, active: false });
                }
            }
            (GateType::Xor, false) => {
                let mut tk = case.tokens.remove(i);
                Self::activate(case, &tk);
                tk.flow = out;
                tk.active = true;
                case.tokens.push(tk);
            }
            (GateType::And, false) => {
                let mut picked = Vec::new();
                for &f in m.incoming_ix(node) {
                    let Some(j) = (0..case.tokens.len())
                        .find(|&j| case.tokens[j].flow == f && (f != case.tokens[i].flow || j == i))
                    else {
                        return false;
                    };
                    picked.push(j);
                }
                picked.sort_unstable();
                let mut merged: Vec<Token> = picked.iter().rev().map(|&j| case.tokens.remove(j)).collect();
                merged.reverse();
                for tk in &merged {
                    Self::activate(case, tk);
                }
                let mut tags: Vec<(usize, FlowIndex)> = merged.iter().flat_map(|t| t.tags.clone()).collect();
                tags.sort_unstable();
                tags.dedup();
                let snapshot = merged.last().expect("join has inputs").snapshot.clone();
                case.tokens.push(Token { flow: out, snapshot, tags, active: true });
            }
            (GateType::Or, false) => {
                let tk = &case.tokens[i];
                let opener = m.or_split_of(node);
                let decision =
                    tk.tags.iter().rev().find(|(d, _)| Some(case.decisions[*d].gateway) == opener).map(|t| t.0);
                let Some(d) = decision else {
                    // A token from outside the paired split passes straight through.
                    let mut tk = case.tokens.remove(i);
                    Self::activate(case, &tk);
                    tk.flow = out;
                    tk.active = true;
                    case.tokens.push(tk);
                    return true;
                };
                let inputs = m.incoming_ix(node);
                let of_d = |t: &Token| t.tags.iter().any(|x| x.0 == d);
                // Every used branch must have arrived.
                if case.tokens.iter().any(|t| of_d(t) && t.active && !inputs.contains(&t.flow)) {
                    return false;
                }
                let (joined, rest): (Vec<Token>, Vec<Token>) =
                    std::mem::take(&mut case.tokens).into_iter().partition(|t| of_d(t));
                case.tokens = rest;
                let arrived: Vec<&Token> = joined.iter().filter(|t| inputs.contains(&t.flow) && t.active).collect();
                let mut arrived = arrived;
                if arrived.is_empty() {
                    // The consuming token itself was still inactive at the join.
                    arrived = joined.iter().filter(|t| inputs.contains(&t.flow)).take(1).collect();
                }
                for tk in &arrived {
                    Self::activate(case, tk);
                }
                let mut tags: Vec<(usize, FlowIndex)> =
                    arrived.iter().flat_map(|t| t.tags.iter().copied()).filter(|x| x.0 != d).collect();
                tags.sort_unstable();
                tags.dedup();
                let snapshot = arrived.last().map_or_else(|| joined[0].snapshot.clone(), |t| t.snapshot.clone());
                case.tokens.push(Token { flow: out, snapshot, tags, active: true });
            }
        }
        true
    }

    /// Moves tokens through gateways until one sits on an incoming flow of
    /// `target`; consumes and returns it.
    fn enable(&self, case: &mut CaseReplay, target: NodeIndex) -> Option<Token> {
        let m = self.model;
        let budget = 4 * (m.nodes().len() + m.flows().len()) + 16;
        for _ in 0..budget {
            let mut candidates: Vec<(usize, usize, Vec<FlowIndex>)> = case
                .tokens
                .iter()
                .enumerate()
                .filter_map(|(i, t)| self.route(t.flow, target).map(|p| (p.len(), i, p)))
                .collect();
            candidates.sort_by_key(|c| (c.0, c.1));
            let first = candidates.first()?;
            if first.0 == 0 {
                let tk = case.tokens.remove(first.1);
                Self::activate(case, &tk);
                return Some(tk);
            }
            let fired = candidates.iter().any(|(_, i, path)| self.fire(case, *i, path[0]));
            if !fired {
                return None;
            }
        }
        None
    }

    fn end_nodes(&self) -> Vec<NodeIndex> {
        (0..self.model.nodes().len()).filter(|&n| self.model.node(n).kind == NodeKind::EndEvent).collect()
    }

    /// Drives every remaining token to an end event.
    fn finish(&self, case: &mut CaseReplay) -> bool {
        let ends = self.end_nodes();
        let budget = case.tokens.len() * 4 + 8;
        for _ in 0..budget {
            if case.tokens.iter().all(|t| !t.active) {
                return true;
            }
            let progressed = ends.iter().any(|&e| self.enable(case, e).is_some());
            if !progressed {
                return false;
            }
        }
        case.tokens.iter().all(|t| !t.active)
    }
}

/// Replays `log` over `model`. `attrs` fixes the features and how each one
/// evolves; `init` gives values before an attribute is first observed.
pub fn replay(
    log: &EventLog,
    model: &ProcessModel,
    attrs: &[AttributeDecl],
    init: &InitGenerator,
) -> Result<Replay, BranchError> {
    let features: Vec<String> = attrs.iter().map(|a| a.name.clone()).collect();
    let initial: Vec<Value> =
        attrs.iter().map(|a| init.values.get(&a.name).cloned().unwrap_or_else(|| Value::default_for(a.kind))).collect();
    let mut rp = Replayer { model, scopes: attrs.iter().map(|a| a.scope).collect(), globals: initial.clone() };

    let traces = log.traces();
    let mut cases: Vec<CaseReplay> = traces
        .iter()
        .map(|t| {
            let mut values = initial.clone();
            // Case attributes are known from the first event carrying them.
            for (i, a) in attrs.iter().enumerate() {
                if a.scope == Scope::Case {
                    if let Some(v) = t.events.iter().find_map(|e| e.attributes.get(&a.name)) {
                        values[i] = v.clone();
                    }
                }
            }
            let failed = t.events.iter().any(|e| model.task_by_label(&e.activity).is_none());
            CaseReplay { values, failed, ..Default::default() }
        })
        .collect();

    let start = model.start_node();
    for h in timeline(log) {
        let case = &mut cases[h.case_rank];
        if h.phase == Phase::End {
            let observed = h.attributes.expect("END halves carry attributes");
            for (i, a) in attrs.iter().enumerate() {
                if let Some(v) = observed.get(&a.name) {
                    match a.scope {
                        Scope::Global => rp.globals[i] = v.clone(),
                        Scope::Event => case.values[i] = v.clone(),
                        Scope::Case => {}
                    }
                }
            }
        }
        if case.failed {
            continue;
        }
        let task = model.task_by_label(h.activity).expect("checked above");
        match h.phase {
            Phase::Start => {
                if !case.started {
                    case.started = true;
                    let snapshot = rp.snapshot(case);
                    for &f in model.outgoing_ix(start) {
                        case.tokens.push(Token { flow: f, snapshot: snapshot.clone(), tags: vec![], active: true });
                    }
                }
                match rp.enable(case, task) {
                    Some(tk) => {
                        case.running.insert(h.event_rank, tk.tags);
                    }
                    None => case.failed = true,
                }
            }
            Phase::End => {
                let tags = case.running.remove(&h.event_rank).unwrap_or_default();
                let snapshot = rp.snapshot(case);
                for &f in model.outgoing_ix(task) {
                    case.tokens.push(Token { flow: f, snapshot: snapshot.clone(), tags: tags.clone(), active: true });
                }
            }
        }
    }

    let mut stats = ReplayStats { traces: traces.len(), ..Default::default() };
    let mut observations = Vec::new();
    for case in &mut cases {
        if case.failed {
            stats.skipped += 1;
            continue;
        }
        stats.replayed += 1;
        if !rp.finish(case) {
            stats.incomplete += 1;
        }
        for d in &case.decisions {
            if d.taken.is_empty() {
                continue;
            }
            observations.push(GatewayObservation {
                gateway: model.node(d.gateway).id.clone(),
                features: d.snapshot.clone(),
                taken: d.taken.iter().map(|&f| model.flow(f).id.clone()).collect(),
            });
        }
    }
    if stats.skipped * 2 > stats.traces {
        return Err(BranchError::NonConforming { skipped: stats.skipped, total: stats.traces });
    }
    Ok(Replay { features, observations, stats })
}

fn conjunction(steps: &[(&Predicate, bool)], features: &[String]) -> Condition {
    // Per numeric feature: (strict lower bound, inclusive upper bound).
    let mut bounds: BTreeMap<usize, (Option<f64>, Option<f64>)> = BTreeMap::new();
    let mut equal: BTreeMap<usize, String> = BTreeMap::new();
    let mut unequal: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (p, yes) in steps {
        match (p, yes) {
            (Predicate::Le { feature, threshold }, true) => {
                let b = bounds.entry(*feature).or_default();
                b.1 = Some(b.1.map_or(*threshold, |h| h.min(*threshold)));
            }
            (Predicate::Le { feature, threshold }, false) => {
                let b = bounds.entry(*feature).or_default();
                b.0 = Some(b.0.map_or(*threshold, |l| l.max(*threshold)));
            }
            (Predicate::Eq { feature, value }, true) => {
                equal.insert(*feature, value.clone());
            }
            (Predicate::Eq { feature, value }, false) => {
                unequal.entry(*feature).or_default().insert(value.clone());
            }
        }
    }
    let mut parts = Vec::new();
    let names: BTreeSet<usize> = bounds.keys().chain(equal.keys()).chain(unequal.keys()).copied().collect();
    for f in names {
        let name = &features[f];
        match bounds.get(&f) {
            Some((Some(lo), Some(hi))) => parts.push(Condition::within(name, *lo, *hi)),
            Some((Some(lo), None)) => parts.push(Condition::gt(name, *lo)),
            Some((None, Some(hi))) => parts.push(Condition::le(name, *hi)),
            _ => {}
        }
        if let Some(v) = equal.get(&f) {
            parts.push(Condition::eq(name, v));
        } else if let Some(vs) = unequal.get(&f) {
            parts.extend(vs.iter().map(|v| Condition::ne(name, v)));
        }
    }
    Condition::all(parts)
}

/// Disjunction of the paths to leaves that predict true with at least
/// `purity_min` purity, or TRUE when there is none. Paired numeric bounds on
/// one feature become an `In` interval.
pub fn extract_condition(tree: &ClassificationTree, features: &[String], purity_min: f64) -> Condition {
    let paths: Vec<Condition> = tree
        .paths()
        .into_iter()
        .filter(|p| p.pos > p.neg && p.pos as f64 / (p.pos + p.neg) as f64 >= purity_min)
        .map(|p| conjunction(&p.steps, features))
        .collect();
    if paths.iter().any(Condition::is_true) {
        return Condition::True;
    }
    Condition::any(paths)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchConfig {
    pub tree: ClassTreeParams,
    pub purity_min: f64,
    pub accuracy_margin: f64,
    pub min_samples: usize,
    pub folds: usize,
    /// Data-unaware baseline: every condition TRUE, probabilities only.
    pub no_data: bool,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            tree: ClassTreeParams::default(),
            purity_min: 0.7,
            accuracy_margin: 0.05,
            min_samples: 50,
            folds: 5,
            no_data: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowReport {
    pub frequency: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub majority_rate: Option<f64>,
    pub conditional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatewayReport {
    pub observations: usize,
    pub flows: BTreeMap<String, FlowReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PolicyReport {
    pub gateways: BTreeMap<String, GatewayReport>,
    pub warnings: Vec<String>,
}

/// Condition and probability for every outgoing flow of every XOR and OR
/// split in `model`.
///
/// A flow keeps a condition only if its tree's cross-validated accuracy
/// beats the majority-class rate by more than the margin. XOR probabilities
/// are traversal frequencies normalized to sum to 1. An OR flow with a
/// condition gets the rate at which it was taken when the condition held;
/// without one it gets its traversal frequency, and in baseline mode the OR
/// frequencies are normalized to sum to 1.
pub fn discover_policies(
    replay: &Replay,
    model: &ProcessModel,
    cfg: &BranchConfig,
) -> (BTreeMap<String, GatewayPolicy>, PolicyReport) {
    let mut policies = BTreeMap::new();
    let mut report = PolicyReport::default();
    let mut by_gateway: BTreeMap<&str, Vec<&GatewayObservation>> = BTreeMap::new();
    for o in &replay.observations {
        by_gateway.entry(o.gateway.as_str()).or_default().push(o);
    }
    for g in model.decision_splits() {
        let gid = model.node(g).id.clone();
        let gate = model.node(g).kind.gate().expect("split gateway");
        let flow_ids: Vec<String> = model.outgoing_ix(g).iter().map(|&f| model.flow(f).id.clone()).collect();
        let obs = by_gateway.get(gid.as_str()).cloned().unwrap_or_default();
        let n = obs.len();
        let mut flows = BTreeMap::new();
        let mut greport = GatewayReport { observations: n, flows: BTreeMap::new() };
        if n == 0 {
            report.warnings.push(format!("gateway {gid}: no observations, uniform probabilities"));
            let p = 1.0 / flow_ids.len() as f64;
            for f in &flow_ids {
                flows.insert(f.clone(), FlowPolicy::new(Condition::True, p));
            }
            policies.insert(gid.clone(), GatewayPolicy { flows });
            report.gateways.insert(gid, greport);
            continue;
        }
        let rows: Vec<&[Value]> = obs.iter().map(|o| o.features.as_slice()).collect();
        let mut raw = Vec::new();
        for f in &flow_ids {
            let labels: Vec<bool> = obs.iter().map(|o| o.taken.contains(f)).collect();
            let hits = labels.iter().filter(|&&l| l).count();
            let frequency = hits as f64 / n as f64;
            let mut fr = FlowReport { frequency, cv_accuracy: None, majority_rate: None, conditional: false };
            let mut condition = Condition::True;
            if !cfg.no_data && n >= cfg.min_samples {
                let cv = cross_validated_accuracy(&rows, &labels, cfg.tree, cfg.folds);
                let majority = frequency.max(1.0 - frequency);
                fr.cv_accuracy = Some(cv);
                fr.majority_rate = Some(majority);
                if cv > majority + cfg.accuracy_margin {
                    let tree = ClassificationTree::fit(&rows, &labels, cfg.tree);
                    condition = extract_condition(&tree, &replay.features, cfg.purity_min);
                }
            }
            fr.conditional = !condition.is_true();
            let mut probability = frequency;
            if gate == GateType::Or && fr.conditional {
                let (mut held, mut held_taken) = (0usize, 0usize);
                for (o, l) in obs.iter().zip(&labels) {
                    let lookup = |name: &str| replay.features.iter().position(|x| x == name).map(|i| &o.features[i]);
                    if condition.evaluate(&lookup) {
                        held += 1;
                        held_taken += usize::from(*l);
                    }
                }
                if held > 0 {
                    probability = held_taken as f64 / held as f64;
                }
            }
            greport.flows.insert(f.clone(), fr);
            raw.push((f.clone(), condition, probability));
        }
        let normalize = gate == GateType::Xor || cfg.no_data;
        let total: f64 = raw.iter().map(|r| r.2).sum();
        for (f, condition, p) in raw {
            let p = if normalize && total > 0.0 { p / total } else { p };
            flows.insert(f, FlowPolicy::new(condition, p));
        }
        policies.insert(gid.clone(), GatewayPolicy { flows });
        report.gateways.insert(gid, greport);
    }
    (policies, report)
}
