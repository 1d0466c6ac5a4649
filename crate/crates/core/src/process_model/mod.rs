//! BPMN-subset control-flow graphs.
//!
//! Supported shapes: one start event, one or more end events, tasks with one
//! incoming and one outgoing flow, and gateways that are either pure splits
//! (one in, two or more out) or pure joins (two or more in, one out). XOR and
//! OR splits carry exactly one default flow. Every OR split must be paired
//! with one OR join, its immediate post-dominator.

mod bpmn;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bpmn::parse_bpmn;

pub type NodeIndex = usize;
pub type FlowIndex = usize;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid process model:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("unsupported BPMN elements: {}", .0.join(", "))]
    Unsupported(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("malformed JSON at {path}: {message}")]
    Json { path: String, message: String },
    #[error("malformed BPMN XML: {0}")]
    Xml(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateType {
    #[serde(rename = "XOR")]
    Xor,
    #[serde(rename = "OR")]
    Or,
    #[serde(rename = "AND")]
    And,
}

impl fmt::Display for GateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateType::Xor => "XOR",
            GateType::Or => "OR",
            GateType::And => "AND",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Split,
    Join,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    StartEvent,
    EndEvent,
    Task,
    Gateway { gate: GateType, direction: Direction },
}

impl NodeKind {
    pub fn is_split(&self) -> bool {
        matches!(self, NodeKind::Gateway { direction: Direction::Split, .. })
    }

    pub fn gate(&self) -> Option<GateType> {
        match self {
            NodeKind::Gateway { gate, .. } => Some(*gate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub id: String,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawNode {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gate_type: Option<GateType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    direction: Option<Direction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawModel {
    nodes: Vec<RawNode>,
    flows: Vec<Flow>,
    #[serde(default)]
    default_flows: BTreeMap<String, String>,
}

/// A validated process model. Immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ProcessModel {
    nodes: Vec<Node>,
    flows: Vec<Flow>,
    default_flows: BTreeMap<String, String>,
    node_index: HashMap<String, NodeIndex>,
    flow_index: HashMap<String, FlowIndex>,
    outgoing: Vec<Vec<FlowIndex>>,
    incoming: Vec<Vec<FlowIndex>>,
    flow_ends: Vec<(NodeIndex, NodeIndex)>,
    start: NodeIndex,
    or_join: HashMap<NodeIndex, NodeIndex>,
    or_split: HashMap<NodeIndex, NodeIndex>,
}

impl PartialEq for ProcessModel {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.flows == other.flows && self.default_flows == other.default_flows
    }
}

impl TryFrom<RawModel> for ProcessModel {
    type Error = ModelError;

    fn try_from(raw: RawModel) -> Result<Self, ModelError> {
        let mut problems = Vec::new();
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for n in raw.nodes {
            let kind = match n.kind.as_str() {
                "start-event" => NodeKind::StartEvent,
                "end-event" => NodeKind::EndEvent,
                "task" => NodeKind::Task,
                "gateway" => match (n.gate_type, n.direction) {
                    (Some(gate), Some(direction)) => NodeKind::Gateway { gate, direction },
                    _ => {
                        problems.push(format!("gateway `{}` needs both gate_type and direction", n.id));
                        continue;
                    }
                },
                other => {
                    problems.push(format!("node `{}` has unknown kind `{other}`", n.id));
                    continue;
                }
            };
            nodes.push(Node { id: n.id, kind, label: n.label });
        }
        if !problems.is_empty() {
            return Err(ModelError::Invalid(problems));
        }
        ProcessModel::new(nodes, raw.flows, raw.default_flows)
    }
}

impl From<ProcessModel> for RawModel {
    fn from(model: ProcessModel) -> Self {
        RawModel {
            nodes: model
                .nodes
                .into_iter()
                .map(|n| {
                    let (kind, gate_type, direction) = match n.kind {
                        NodeKind::StartEvent => ("start-event", None, None),
                        NodeKind::EndEvent => ("end-event", None, None),
                        NodeKind::Task => ("task", None, None),
                        NodeKind::Gateway { gate, direction } => ("gateway", Some(gate), Some(direction)),
                    };
                    RawNode { id: n.id, kind: kind.to_string(), label: n.label, gate_type, direction }
                })
                .collect(),
            flows: model.flows,
            default_flows: model.default_flows,
        }
    }
}

impl ProcessModel {
    /// Builds and validates a model. All structural problems are reported together.
    pub fn new(
        nodes: Vec<Node>,
        flows: Vec<Flow>,
        default_flows: BTreeMap<String, String>,
    ) -> Result<Self, ModelError> {
        let mut problems = Vec::new();
        let mut node_index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id.clone(), i).is_some() {
                problems.push(format!("duplicate node id `{}`", n.id));
            }
        }
        let mut flow_index = HashMap::new();
        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        let mut flow_ends = Vec::with_capacity(flows.len());
        for (i, f) in flows.iter().enumerate() {
            if flow_index.insert(f.id.clone(), i).is_some() {
                problems.push(format!("duplicate flow id `{}`", f.id));
            }
            let src = node_index.get(&f.source).copied();
            let tgt = node_index.get(&f.target).copied();
            if src.is_none() {
                problems.push(format!("flow `{}` has unknown source `{}`", f.id, f.source));
            }
            if tgt.is_none() {
                problems.push(format!("flow `{}` has unknown target `{}`", f.id, f.target));
            }
            let (s, t) = (src.unwrap_or(usize::MAX), tgt.unwrap_or(usize::MAX));
            if let (Some(s), Some(t)) = (src, tgt) {
                outgoing[s].push(i);
                incoming[t].push(i);
            }
            flow_ends.push((s, t));
        }
        if !problems.is_empty() {
            return Err(ModelError::Invalid(problems));
        }
        for list in outgoing.iter_mut().chain(incoming.iter_mut()) {
            list.sort_by(|a, b| flows[*a].id.cmp(&flows[*b].id));
        }

        let starts: Vec<NodeIndex> = (0..nodes.len()).filter(|&i| nodes[i].kind == NodeKind::StartEvent).collect();
        if starts.len() != 1 {
            problems.push(format!("expected exactly one start event, found {}", starts.len()));
        }
        if !nodes.iter().any(|n| n.kind == NodeKind::EndEvent) {
            problems.push("model has no end event".to_string());
        }
        let mut labels: HashMap<&str, &str> = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            let (ins, outs) = (incoming[i].len(), outgoing[i].len());
            match n.kind {
                NodeKind::StartEvent if ins != 0 || outs != 1 => {
                    problems.push(format!("start event `{}` must have no incoming and one outgoing flow", n.id))
                }
                NodeKind::EndEvent if ins == 0 || outs != 0 => {
                    problems.push(format!("end event `{}` must have incoming and no outgoing flows", n.id))
                }
                NodeKind::Task => {
                    if ins != 1 || outs != 1 {
                        problems.push(format!("task `{}` must have exactly one incoming and one outgoing flow", n.id));
                    }
                    if n.label.is_empty() {
                        problems.push(format!("task `{}` has an empty label", n.id));
                    } else if let Some(other) = labels.insert(&n.label, &n.id) {
                        problems.push(format!("task label `{}` is used by both `{other}` and `{}`", n.label, n.id));
                    }
                }
                NodeKind::Gateway { direction: Direction::Split, .. } if ins != 1 || outs < 2 => problems
                    .push(format!("split gateway `{}` must have one incoming and at least two outgoing flows", n.id)),
                NodeKind::Gateway { direction: Direction::Join, .. } if ins < 2 || outs != 1 => problems
                    .push(format!("join gateway `{}` must have at least two incoming and one outgoing flow", n.id)),
                _ => {}
            }
        }

        for (gw, flow) in &default_flows {
            match node_index.get(gw).map(|&i| (i, nodes[i].kind)) {
                Some((i, NodeKind::Gateway { gate: GateType::Xor | GateType::Or, direction: Direction::Split })) => {
                    let ok = flow_index.get(flow).is_some_and(|&f| flow_ends[f].0 == i);
                    if !ok {
                        problems
                            .push(format!("default flow `{flow}` of gateway `{gw}` is not one of its outgoing flows"));
                    }
                }
                _ => problems.push(format!("default flow declared for `{gw}`, which is not an XOR/OR split gateway")),
            }
        }
        for n in &nodes {
            if let NodeKind::Gateway { gate: GateType::Xor | GateType::Or, direction: Direction::Split } = n.kind {
                if !default_flows.contains_key(&n.id) {
                    problems.push(format!("split gateway `{}` has no default flow", n.id));
                }
            }
        }
        if starts.len() != 1 {
            return Err(ModelError::Invalid(problems));
        }

        let start = starts[0];
        let mut model = ProcessModel {
            nodes,
            flows,
            default_flows,
            node_index,
            flow_index,
            outgoing,
            incoming,
            flow_ends,
            start,
            or_join: HashMap::new(),
            or_split: HashMap::new(),
        };
        model.check_reachability(&mut problems);
        if problems.is_empty() {
            model.pair_or_blocks(&mut problems);
        }
        if !problems.is_empty() {
            return Err(ModelError::Invalid(problems));
        }
        Ok(model)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawModel = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ModelError::Json { path, message: e.into_inner().to_string() }
        })?;
        ProcessModel::try_from(raw)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    fn successors(&self, n: NodeIndex) -> impl Iterator<Item = NodeIndex> + '_ {
        self.outgoing[n].iter().map(|&f| self.flow_ends[f].1)
    }

    fn predecessors(&self, n: NodeIndex) -> impl Iterator<Item = NodeIndex> + '_ {
        self.incoming[n].iter().map(|&f| self.flow_ends[f].0)
    }

    fn check_reachability(&self, problems: &mut Vec<String>) {
        let forward = self.reach(std::iter::once(self.start), |m, n| m.successors(n).collect());
        let ends = (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == NodeKind::EndEvent);
        let backward = self.reach(ends, |m, n| m.predecessors(n).collect());
        for (i, n) in self.nodes.iter().enumerate() {
            if !forward[i] {
                problems.push(format!("node `{}` is unreachable from the start event", n.id));
            }
            if !backward[i] {
                problems.push(format!("node `{}` cannot reach an end event", n.id));
            }
        }
    }

    fn reach(
        &self,
        seeds: impl Iterator<Item = NodeIndex>,
        next: impl Fn(&Self, NodeIndex) -> Vec<NodeIndex>,
    ) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue: VecDeque<NodeIndex> = seeds.collect();
        for &s in &queue {
            seen[s] = true;
        }
        while let Some(n) = queue.pop_front() {
            for m in next(self, n) {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    /// Post-dominator sets: `pdom[n][m]` is true when every path from `n` to
    /// an end event passes through `m`.
    fn post_dominators(&self) -> Vec<Vec<bool>> {
        let n = self.nodes.len();
        let mut pdom: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                if self.nodes[i].kind == NodeKind::EndEvent {
                    (0..n).map(|j| j == i).collect()
                } else {
                    vec![true; n]
                }
            })
            .collect();
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                if self.nodes[i].kind == NodeKind::EndEvent {
                    continue;
                }
                let mut acc = vec![true; n];
                for s in self.successors(i) {
                    for (a, &b) in acc.iter_mut().zip(&pdom[s]) {
                        *a &= b;
                    }
                }
                acc[i] = true;
                if acc != pdom[i] {
                    pdom[i] = acc;
                    changed = true;
                }
            }
        }
        pdom
    }

    fn pair_or_blocks(&mut self, problems: &mut Vec<String>) {
        let is_or = |m: &Self, i: NodeIndex, dir: Direction| {
            m.nodes[i].kind == NodeKind::Gateway { gate: GateType::Or, direction: dir }
        };
        let or_splits: Vec<NodeIndex> = (0..self.nodes.len()).filter(|&i| is_or(self, i, Direction::Split)).collect();
        if or_splits.is_empty() && !(0..self.nodes.len()).any(|i| is_or(self, i, Direction::Join)) {
            return;
        }
        let pdom = self.post_dominators();
        for &split in &or_splits {
            let strict: Vec<NodeIndex> = (0..self.nodes.len()).filter(|&m| m != split && pdom[split][m]).collect();
            let ipdom = strict.iter().copied().find(|&d| strict.iter().all(|&o| o == d || pdom[d][o]));
            let id = &self.nodes[split].id;
            match ipdom {
                Some(join) if is_or(self, join, Direction::Join) => {
                    if let Some(prev) = self.or_split.insert(join, split) {
                        problems.push(format!(
                            "OR join `{}` closes both `{}` and `{id}`",
                            self.nodes[join].id, self.nodes[prev].id
                        ));
                    }
                    self.or_join.insert(split, join);
                    // No path inside the block may lead back to its split.
                    let mut seen = vec![false; self.nodes.len()];
                    let mut queue: VecDeque<NodeIndex> = self.successors(split).collect();
                    while let Some(n) = queue.pop_front() {
                        if n == join || seen[n] {
                            continue;
                        }
                        seen[n] = true;
                        if n == split {
                            problems.push(format!("OR block opened by `{id}` contains a loop"));
                            break;
                        }
                        queue.extend(self.successors(n));
                    }
                }
                _ => problems.push(format!("OR split `{id}` is not closed by a matching OR join")),
            }
        }
        for i in 0..self.nodes.len() {
            if is_or(self, i, Direction::Join) && !self.or_split.contains_key(&i) {
                problems.push(format!("OR join `{}` does not close any OR split", self.nodes[i].id));
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn node(&self, i: NodeIndex) -> &Node {
        &self.nodes[i]
    }

    pub fn flow(&self, f: FlowIndex) -> &Flow {
        &self.flows[f]
    }

    pub fn node_index(&self, id: &str) -> Option<NodeIndex> {
        self.node_index.get(id).copied()
    }

    pub fn flow_index(&self, id: &str) -> Option<FlowIndex> {
        self.flow_index.get(id).copied()
    }

    pub fn start_node(&self) -> NodeIndex {
        self.start
    }

    pub fn source_of(&self, f: FlowIndex) -> NodeIndex {
        self.flow_ends[f].0
    }

    pub fn target_of(&self, f: FlowIndex) -> NodeIndex {
        self.flow_ends[f].1
    }

    /// Outgoing flow indices of a node, ordered by flow id.
    pub fn outgoing_ix(&self, n: NodeIndex) -> &[FlowIndex] {
        &self.outgoing[n]
    }

    /// Incoming flow indices of a node, ordered by flow id.
    pub fn incoming_ix(&self, n: NodeIndex) -> &[FlowIndex] {
        &self.incoming[n]
    }

    /// Outgoing flows of the node with id `node`, ordered by flow id.
    pub fn outgoing(&self, node: &str) -> Result<Vec<&Flow>, ModelError> {
        let i = self.node_index(node).ok_or_else(|| ModelError::UnknownNode(node.to_string()))?;
        Ok(self.outgoing[i].iter().map(|&f| &self.flows[f]).collect())
    }

    /// Incoming flows of the node with id `node`, ordered by flow id.
    pub fn incoming(&self, node: &str) -> Result<Vec<&Flow>, ModelError> {
        let i = self.node_index(node).ok_or_else(|| ModelError::UnknownNode(node.to_string()))?;
        Ok(self.incoming[i].iter().map(|&f| &self.flows[f]).collect())
    }

    pub fn default_flows(&self) -> &BTreeMap<String, String> {
        &self.default_flows
    }

    pub fn default_flow_ix(&self, split: NodeIndex) -> Option<FlowIndex> {
        self.default_flows.get(&self.nodes[split].id).and_then(|f| self.flow_index(f))
    }

    /// The OR join closing an OR split.
    pub fn or_join_of(&self, split: NodeIndex) -> Option<NodeIndex> {
        self.or_join.get(&split).copied()
    }

    /// The OR split opened before an OR join.
    pub fn or_split_of(&self, join: NodeIndex) -> Option<NodeIndex> {
        self.or_split.get(&join).copied()
    }

    pub fn task_by_label(&self, label: &str) -> Option<NodeIndex> {
        self.nodes.iter().position(|n| n.kind == NodeKind::Task && n.label == label)
    }

    /// Task labels in node order.
    pub fn task_labels(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Task).map(|n| n.label.as_str())
    }

    /// Split gateways of type XOR or OR, in node order.
    pub fn decision_splits(&self) -> impl Iterator<Item = NodeIndex> + '_ {
        (0..self.nodes.len()).filter(|&i| {
            matches!(
                self.nodes[i].kind,
                NodeKind::Gateway { gate: GateType::Xor | GateType::Or, direction: Direction::Split }
            )
        })
    }
}

/// Parses either the JSON process format or BPMN 2.0 XML, chosen by the
/// first non-whitespace character.
pub fn parse_model(source: &str) -> Result<ProcessModel, ModelError> {
    if source.trim_start().starts_with('<') {
        parse_bpmn(source)
    } else {
        ProcessModel::from_json_str(source)
    }
}

/// Small builder used by tests and scenario generation.
#[derive(Debug, Default, Clone)]
pub struct ModelBuilder {
    nodes: Vec<Node>,
    flows: Vec<Flow>,
    defaults: BTreeMap<String, String>,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(mut self, id: &str) -> Self {
        self.nodes.push(Node { id: id.into(), kind: NodeKind::StartEvent, label: String::new() });
        self
    }

    pub fn end(mut self, id: &str) -> Self {
        self.nodes.push(Node { id: id.into(), kind: NodeKind::EndEvent, label: String::new() });
        self
    }

    pub fn task(mut self, id: &str, label: &str) -> Self {
        self.nodes.push(Node { id: id.into(), kind: NodeKind::Task, label: label.into() });
        self
    }

    pub fn gateway(mut self, id: &str, gate: GateType, direction: Direction) -> Self {
        self.nodes.push(Node { id: id.into(), kind: NodeKind::Gateway { gate, direction }, label: String::new() });
        self
    }

    pub fn flow(mut self, id: &str, source: &str, target: &str) -> Self {
        self.flows.push(Flow { id: id.into(), source: source.into(), target: target.into() });
        self
    }

    pub fn default_flow(mut self, gateway: &str, flow: &str) -> Self {
        self.defaults.insert(gateway.into(), flow.into());
        self
    }

    pub fn build(self) -> Result<ProcessModel, ModelError> {
        ProcessModel::new(self.nodes, self.flows, self.defaults)
    }
}
