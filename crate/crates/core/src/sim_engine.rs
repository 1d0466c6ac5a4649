//! Deterministic discrete-event execution of a DAS model.
//!
//! Events are processed in (time, sequence) order from one priority queue
//! and all randomness comes from one seeded stream consumed in that order,
//! so a run is a pure function of the model and the configuration.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::das_model::{
    rule::sample_index, Anchor, DasError, DasModel, DataState, FlowPolicy, RuleError, Scope, StateError, UpdateRule,
};
use crate::event_log::{Event, EventLog, LogError};
use crate::process_model::{Direction, FlowIndex, GateType, NodeIndex, NodeKind};
use crate::value::Value;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Invalid(#[from] DasError),
    #[error("number of cases must be at least 1")]
    ZeroCases,
    #[error("deadlock: case `{case_id}` has tokens stuck at node `{node}`")]
    Deadlock { case_id: String, node: String },
    #[error("rule for `{attribute}` failed: {source}")]
    Rule { attribute: String, source: RuleError },
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_cases: usize,
    pub seed: u64,
    pub start_time: DateTime<Utc>,
    /// No case arrives after this instant.
    #[serde(default)]
    pub horizon: Option<DateTime<Utc>>,
    /// Record every declared attribute on every event; otherwise only the
    /// attributes updated at the event's completion.
    #[serde(default = "default_dense")]
    pub dense: bool,
}

fn default_dense() -> bool {
    true
}

impl SimConfig {
    pub fn new(n_cases: usize, seed: u64) -> Self {
        SimConfig {
            n_cases,
            seed,
            start_time: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            horizon: None,
            dense: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub cases: usize,
    pub completed_cases: usize,
    pub events: usize,
    /// Markov rules that met a previous value outside their state list.
    pub markov_fallbacks: usize,
    pub deadlocks: usize,
    /// Per split gateway, how often each outgoing flow was selected.
    pub decisions: BTreeMap<String, BTreeMap<String, u64>>,
    /// Per split gateway, how often the default flow was taken because no
    /// other selection was made.
    pub default_fallbacks: BTreeMap<String, u64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub log: EventLog,
    pub stats: RunStats,
}

/// Two-stage selection at a split gateway.
///
/// Stage one evaluates each flow's condition. Stage two: XOR takes the single
/// true flow, or samples among several true flows with their probabilities
/// renormalized, or takes the default when none is true. OR flips a coin per
/// true flow and takes the default when nothing is selected. AND takes every
/// flow. `flows` must be in a fixed order; the result keeps that order.
pub fn evaluate_gateway<'a, 'v, F, R>(
    gate: GateType,
    flows: &[(&'a str, &FlowPolicy)],
    default_flow: Option<&'a str>,
    lookup: &F,
    rng: &mut R,
) -> Vec<&'a str>
where
    F: Fn(&str) -> Option<&'v Value>,
    R: Rng + ?Sized,
{
    select_flows(gate, flows, default_flow, lookup, rng).0
}

/// As [`evaluate_gateway`], also reporting whether the default flow was
/// taken as the fallback.
fn select_flows<'a, 'v, F, R>(
    gate: GateType,
    flows: &[(&'a str, &FlowPolicy)],
    default_flow: Option<&'a str>,
    lookup: &F,
    rng: &mut R,
) -> (Vec<&'a str>, bool)
where
    F: Fn(&str) -> Option<&'v Value>,
    R: Rng + ?Sized,
{
    if gate == GateType::And {
        return (flows.iter().map(|(id, _)| *id).collect(), false);
    }
    let open: Vec<&(&str, &FlowPolicy)> = flows.iter().filter(|(_, p)| p.condition.evaluate(lookup)).collect();
    let fallback = || (default_flow.into_iter().collect::<Vec<_>>(), true);
    match gate {
        GateType::Xor => match open.len() {
            0 => fallback(),
            1 => (vec![open[0].0], false),
            _ => {
                let mut probs: Vec<f64> = open.iter().map(|(_, p)| p.probability.max(0.0)).collect();
                if probs.iter().sum::<f64>() <= 0.0 {
                    probs = vec![1.0; open.len()];
                }
                (vec![open[sample_index(&probs, rng)].0], false)
            }
        },
        GateType::Or => {
            let chosen: Vec<&str> =
                open.iter().filter(|(_, p)| rng.gen::<f64>() < p.probability).map(|(id, _)| *id).collect();
            if chosen.is_empty() {
                fallback()
            } else {
                (chosen, false)
            }
        }
        GateType::And => unreachable!(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Payload {
    CaseArrival { index: usize },
    TaskStart { case: usize, node: NodeIndex, unit: usize },
    TaskEnd { case: usize, node: NodeIndex, unit: usize, start: i64 },
    GatewayEval { case: usize, node: NodeIndex },
    TokenMerge { case: usize, node: NodeIndex, flow: FlowIndex },
}

#[derive(Debug, Default)]
struct CaseRuntime {
    id: String,
    live_tokens: usize,
    /// Tokens waiting at AND joins, per (join, incoming flow).
    and_waiting: HashMap<(NodeIndex, FlowIndex), usize>,
    /// Per OR join: (tokens emitted by the paired split, tokens arrived).
    or_pending: HashMap<NodeIndex, (usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct WorkItem {
    requested: i64,
    case: usize,
    seq: u64,
    node: NodeIndex,
}

struct PoolRuntime {
    busy: Vec<bool>,
    waiting: BinaryHeap<Reverse<WorkItem>>,
}

struct Engine<'m> {
    model: &'m DasModel,
    cfg: &'m SimConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<(i64, u64, Payload)>>,
    seq: u64,
    state: DataState,
    cases: Vec<CaseRuntime>,
    pools: Vec<PoolRuntime>,
    pool_of_task: HashMap<NodeIndex, usize>,
    events: Vec<Event>,
    stats: RunStats,
}

fn to_time(ms: i64) -> DateTime<Utc> {
    Utc.timestamp_millis_opt(ms).single().expect("simulation time in range")
}

impl<'m> Engine<'m> {
    fn new(model: &'m DasModel, cfg: &'m SimConfig) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut globals = BTreeMap::new();
        for a in model.attributes.iter().filter(|a| a.scope == Scope::Global) {
            let init = Value::default_for(a.kind);
            let v = a
                .initializer
                .apply(&init, &mut rng)
                .map_err(|source| SimError::Rule { attribute: a.name.clone(), source })?;
            globals.insert(a.name.clone(), v.value);
        }
        let pool_index: HashMap<&str, usize> =
            model.resources.pools.iter().enumerate().map(|(i, p)| (p.name.as_str(), i)).collect();
        let mut pool_of_task = HashMap::new();
        for (label, pool) in &model.resources.task_pool {
            if let Some(node) = model.process.task_by_label(label) {
                pool_of_task.insert(node, pool_index[pool.as_str()]);
            }
        }
        let pools = model
            .resources
            .pools
            .iter()
            .map(|p| PoolRuntime { busy: vec![false; p.size], waiting: BinaryHeap::new() })
            .collect();
        Ok(Engine {
            model,
            cfg,
            rng,
            queue: BinaryHeap::new(),
            seq: 0,
            state: DataState::new(model.scopes(), globals),
            cases: Vec::new(),
            pools,
            pool_of_task,
            events: Vec::new(),
            stats: RunStats::default(),
        })
    }

    fn push(&mut self, time: i64, payload: Payload) {
        self.seq += 1;
        self.queue.push(Reverse((time, self.seq, payload)));
    }

    fn apply_rule(&mut self, attribute: &str, rule: &UpdateRule, prev: &Value) -> Result<Value, SimError> {
        let out =
            rule.apply(prev, &mut self.rng).map_err(|source| SimError::Rule { attribute: attribute.into(), source })?;
        if out.used_fallback {
            self.stats.markov_fallbacks += 1;
        }
        Ok(out.value)
    }

    fn run(mut self) -> Result<SimOutput, SimError> {
        let first = self.model.arrivals.calendar.next_open(self.cfg.start_time.timestamp_millis());
        self.push(first, Payload::CaseArrival { index: 0 });
        while let Some(Reverse((now, _, payload))) = self.queue.pop() {
            self.handle(now, payload)?;
            let batch_done = self.queue.peek().is_none_or(|Reverse((t, _, _))| *t > now);
            if batch_done {
                self.dispatch(now);
            }
        }
        self.check_conservation()?;
        let schema = self.model.attributes.iter().map(|a| (a.name.clone(), a.kind)).collect();
        self.stats.events = self.events.len();
        let log = EventLog::with_schema(self.events, schema)?;
        Ok(SimOutput { log, stats: self.stats })
    }

    fn check_conservation(&mut self) -> Result<(), SimError> {
        let model = self.model;
        let process = &model.process;
        for case in &self.cases {
            if case.live_tokens == 0 {
                continue;
            }
            self.stats.deadlocks += 1;
            let stuck = case
                .and_waiting
                .iter()
                .filter(|(_, &n)| n > 0)
                .map(|((node, _), _)| *node)
                .chain(case.or_pending.keys().copied())
                .min()
                .map_or_else(|| "?".to_string(), |n| process.node(n).id.clone());
            return Err(SimError::Deadlock { case_id: case.id.clone(), node: stuck });
        }
        Ok(())
    }

    fn handle(&mut self, now: i64, payload: Payload) -> Result<(), SimError> {
        match payload {
            Payload::CaseArrival { index } => self.arrive_case(now, index),
            Payload::TaskStart { case, node, unit } => {
                let model = self.model;
                let label = &model.process.node(node).label;
                let seconds = model.resources.proc_time[label].sample(&mut self.rng).max(0.0);
                let work = (seconds * 1000.0).round() as i64;
                let pool = self.pool_of_task[&node];
                let end = model.resources.pools[pool].calendar.advance(now, work);
                self.push(end, Payload::TaskEnd { case, node, unit, start: now });
                Ok(())
            }
            Payload::TaskEnd { case, node, unit, start } => self.complete_task(now, case, node, unit, start),
            Payload::GatewayEval { case, node } => self.split(now, case, node),
            Payload::TokenMerge { case, node, flow } => self.merge(now, case, node, flow),
        }
    }

    fn arrive_case(&mut self, now: i64, index: usize) -> Result<(), SimError> {
        let model = self.model;
        let case_id = format!("case_{index}");
        let mut case_attrs = BTreeMap::new();
        let mut event_attrs = BTreeMap::new();
        for a in model.attributes.iter().filter(|a| a.scope != Scope::Global) {
            let v = self.apply_rule(&a.name, &a.initializer, &Value::default_for(a.kind))?;
            match a.scope {
                Scope::Case => case_attrs.insert(a.name.clone(), v),
                _ => event_attrs.insert(a.name.clone(), v),
            };
        }
        // Case attributes take their creation rules before they freeze.
        let creation = Anchor::CaseCreation;
        let mut later = Vec::new();
        for r in model.rules_at(&creation) {
            if let Some(prev) = case_attrs.get(&r.attribute).cloned() {
                let v = self.apply_rule(&r.attribute, &r.rule, &prev)?;
                case_attrs.insert(r.attribute.clone(), v);
            } else {
                later.push(r);
            }
        }
        self.state.create_case(&case_id, case_attrs, event_attrs)?;
        for r in later {
            let prev = self.state.get(&case_id, &r.attribute).cloned().expect("declared attribute");
            let v = self.apply_rule(&r.attribute, &r.rule, &prev)?;
            self.state.set(&case_id, &r.attribute, v)?;
        }
        self.cases.push(CaseRuntime { id: case_id, live_tokens: 1, ..Default::default() });
        self.stats.cases += 1;

        let start = model.process.start_node();
        let flow = model.process.outgoing_ix(start)[0];
        self.token_to(now, index, flow);

        if index + 1 < self.cfg.n_cases {
            let gap = model.arrivals.inter_arrival.sample(&mut self.rng).max(0.0);
            let t = model.arrivals.calendar.next_open(now + (gap * 1000.0).round() as i64);
            let within = self.cfg.horizon.is_none_or(|h| t <= h.timestamp_millis());
            if within {
                self.push(t, Payload::CaseArrival { index: index + 1 });
            }
        }
        Ok(())
    }

    /// Moves one token of `case` onto `flow` and into its target node.
    fn token_to(&mut self, now: i64, case: usize, flow: FlowIndex) {
        let model = self.model;
        let process = &model.process;
        let node = process.target_of(flow);
        match process.node(node).kind {
            NodeKind::Task => {
                let pool = self.pool_of_task[&node];
                self.seq += 1;
                let item = WorkItem { requested: now, case, seq: self.seq, node };
                self.pools[pool].waiting.push(Reverse(item));
            }
            NodeKind::EndEvent => self.consume_token(case),
            NodeKind::Gateway { direction: Direction::Split, .. } => {
                self.push(now, Payload::GatewayEval { case, node });
            }
            NodeKind::Gateway { direction: Direction::Join, .. } => {
                self.push(now, Payload::TokenMerge { case, node, flow });
            }
            NodeKind::StartEvent => unreachable!("start events have no incoming flows"),
        }
    }

    fn consume_token(&mut self, case: usize) {
        let rt = &mut self.cases[case];
        rt.live_tokens -= 1;
        if rt.live_tokens == 0 {
            self.stats.completed_cases += 1;
            let id = rt.id.clone();
            self.state.remove_case(&id);
        }
    }

    /// Replaces the token that entered a node with one token per flow.
    fn emit(&mut self, now: i64, case: usize, flows: &[FlowIndex]) {
        let rt = &mut self.cases[case];
        rt.live_tokens = rt.live_tokens + flows.len() - 1;
        for &f in flows {
            self.token_to(now, case, f);
        }
    }

    fn split(&mut self, now: i64, case: usize, node: NodeIndex) -> Result<(), SimError> {
        let model = self.model;
        let process = &model.process;
        let gate = process.node(node).kind.gate().expect("gateway");
        let outgoing = process.outgoing_ix(node);
        let gid = &process.node(node).id;
        let selected: Vec<FlowIndex> = if gate == GateType::And {
            outgoing.to_vec()
        } else {
            let policy = &model.policies[gid];
            let flows: Vec<(&str, &FlowPolicy)> = outgoing
                .iter()
                .map(|&f| {
                    let id = process.flow(f).id.as_str();
                    (id, &policy.flows[id])
                })
                .collect();
            let default = process.default_flow_ix(node).map(|f| process.flow(f).id.as_str());
            let case_id = &self.cases[case].id;
            let state = &self.state;
            let lookup = |name: &str| state.get(case_id, name);
            let (chosen, fell_back) = select_flows(gate, &flows, default, &lookup, &mut self.rng);
            let decisions = self.stats.decisions.entry(gid.clone()).or_default();
            for id in &chosen {
                *decisions.entry(id.to_string()).or_default() += 1;
            }
            if fell_back {
                *self.stats.default_fallbacks.entry(gid.clone()).or_default() += 1;
            }
            chosen.iter().map(|id| process.flow_index(id).expect("flow id")).collect()
        };
        if gate == GateType::Or {
            if let Some(join) = process.or_join_of(node) {
                self.cases[case].or_pending.insert(join, (selected.len(), 0));
            }
        }
        self.emit(now, case, &selected);
        Ok(())
    }

    fn merge(&mut self, now: i64, case: usize, node: NodeIndex, flow: FlowIndex) -> Result<(), SimError> {
        let model = self.model;
        let process = &model.process;
        let out = process.outgoing_ix(node)[0];
        match process.node(node).kind.gate().expect("gateway") {
            GateType::Xor => self.emit(now, case, &[out]),
            GateType::And => {
                let incoming = process.incoming_ix(node);
                let rt = &mut self.cases[case];
                *rt.and_waiting.entry((node, flow)).or_default() += 1;
                let ready = incoming.iter().all(|f| rt.and_waiting.get(&(node, *f)).copied().unwrap_or(0) > 0);
                if ready {
                    for f in incoming {
                        *rt.and_waiting.get_mut(&(node, *f)).unwrap() -= 1;
                    }
                    // All but one of the merged tokens disappear here.
                    rt.live_tokens -= incoming.len() - 1;
                    self.emit(now, case, &[out]);
                }
            }
            GateType::Or => {
                let rt = &mut self.cases[case];
                let entry = rt.or_pending.entry(node).or_insert((1, 0));
                entry.1 += 1;
                if entry.1 >= entry.0 {
                    let merged = entry.1;
                    rt.or_pending.remove(&node);
                    rt.live_tokens -= merged - 1;
                    self.emit(now, case, &[out]);
                }
            }
        }
        Ok(())
    }

    fn complete_task(
        &mut self,
        now: i64,
        case: usize,
        node: NodeIndex,
        unit: usize,
        start: i64,
    ) -> Result<(), SimError> {
        let model = self.model;
        let label = &model.process.node(node).label;
        let case_id = self.cases[case].id.clone();
        let anchor = Anchor::TaskCompletion(label.clone());
        let mut updated = Vec::new();
        for r in model.rules_at(&anchor) {
            let prev = self.state.get(&case_id, &r.attribute).cloned().expect("declared attribute");
            let v = self.apply_rule(&r.attribute, &r.rule, &prev)?;
            self.state.set(&case_id, &r.attribute, v)?;
            updated.push(r.attribute.as_str());
        }
        let pool = self.pool_of_task[&node];
        let pool_name = &model.resources.pools[pool].name;
        let mut event = Event::new(case_id.clone(), label.clone(), to_time(start), to_time(now))
            .with_resource(format!("{pool_name}-{}", unit + 1));
        event.attributes = if self.cfg.dense {
            self.state.snapshot(&case_id)
        } else {
            updated.iter().filter_map(|a| Some((a.to_string(), self.state.get(&case_id, a)?.clone()))).collect()
        };
        self.events.push(event);
        self.pools[pool].busy[unit] = false;
        let out = model.process.outgoing_ix(node)[0];
        self.emit(now, case, &[out]);
        Ok(())
    }

    /// Starts waiting work on free units, oldest request first.
    fn dispatch(&mut self, now: i64) {
        for p in 0..self.pools.len() {
            loop {
                let pool = &mut self.pools[p];
                let Some(unit) = pool.busy.iter().position(|b| !b) else { break };
                let Some(Reverse(item)) = pool.waiting.pop() else { break };
                pool.busy[unit] = true;
                let start = self.model.resources.pools[p].calendar.next_open(now.max(item.requested));
                self.push(start, Payload::TaskStart { case: item.case, node: item.node, unit });
            }
        }
    }
}

/// Runs `model` for `cfg.n_cases` cases.
pub fn simulate(model: &DasModel, cfg: &SimConfig) -> Result<SimOutput, SimError> {
    if cfg.n_cases == 0 {
        return Err(SimError::ZeroCases);
    }
    model.validate()?;
    Engine::new(model, cfg)?.run()
}
