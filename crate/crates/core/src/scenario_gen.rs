//! Synthetic scenarios with known ground truth.
//!
//! Attribute scenarios simulate a loan-application process without data and
//! then inject one attribute into the log: a pattern (an update function or
//! generator) fires at the completion of the modifying activities, with the
//! state kept per case (event placements) or shared (global placements).
//! Every event records the current value, so the log is dense.
//!
//! Condition scenarios build a three-block model whose split decisions are
//! driven by data, and are simulated directly.
//!
//! Pattern forms chosen here (state `x`, modification count `k`):
//! LT `a·x + b`; EG `(1 + r)·x`; LN lognormal draw; AR1 `phi·x + N(0, sigma)`;
//! CE `x + Exp(rate)`; SS `m + amp·sin(2πk/period)`; SR `(x + step) mod top`;
//! PL `c·k^p`; UD uniform draw; ND normal draw. Categorical patterns use
//! four states for Markov chains and two or five states for generators.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::das_model::UpdateRule;
use crate::das_model::{
    Anchor, AttributeDecl, Calendar, Condition, DasModel, Distribution, FlowPolicy, GatewayPolicy, Pool, RuleAnchor,
    Scope,
};
use crate::event_log::{Event, EventLog, LogError};
use crate::process_model::{Direction, GateType, ModelBuilder, ProcessModel};
use crate::sim_engine::{simulate, SimConfig, SimError};
use crate::stats;
use crate::value::{AttrKind, Value};

pub const DEFAULT_CASES: usize = 2000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown pattern {0}")]
    UnknownPattern(String),
    #[error("pattern {0} does not support {1}")]
    Unsupported(String, String),
    #[error("noise must lie in [0, 1], got {0}")]
    Noise(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pattern {
    Lt,
    Eg,
    Ln,
    Ar1,
    Ce,
    Ss,
    Sr,
    Pl,
    Ud,
    Nd,
    Hst,
    Uet,
    Uit,
    Rst,
    Sdt,
    Ct,
    E2p,
    N2p,
    E5p,
    N5p,
}

impl Pattern {
    pub const ALL: [Pattern; 20] = [
        Pattern::Lt,
        Pattern::Eg,
        Pattern::Ln,
        Pattern::Ar1,
        Pattern::Ce,
        Pattern::Ss,
        Pattern::Sr,
        Pattern::Pl,
        Pattern::Ud,
        Pattern::Nd,
        Pattern::Hst,
        Pattern::Uet,
        Pattern::Uit,
        Pattern::Rst,
        Pattern::Sdt,
        Pattern::Ct,
        Pattern::E2p,
        Pattern::N2p,
        Pattern::E5p,
        Pattern::N5p,
    ];

    pub fn kind(self) -> AttrKind {
        if self < Pattern::Hst {
            AttrKind::Numeric
        } else {
            AttrKind::Categorical
        }
    }

    pub fn code(self) -> &'static str {
        [
            "LT", "EG", "LN", "AR1", "CE", "SS", "SR", "PL", "UD", "ND", "HST", "UET", "UIT", "RST", "SDT", "CT",
            "E2P", "N2P", "E5P", "N5P",
        ][self as usize]
    }

    /// Parameters used when a spec gives none. Linear growth at global
    /// placements uses slope 1, since the shared state is updated thousands
    /// of times.
    pub fn default_params(self, placement: Placement) -> BTreeMap<String, f64> {
        let global = placement.scope() == Scope::Global;
        let p: &[(&str, f64)] = match self {
            Pattern::Lt if global => &[("a", 1.0), ("b", 1.0)],
            Pattern::Lt => &[("a", 2.0), ("b", 1.0)],
            Pattern::Eg => &[("r", 0.05)],
            Pattern::Ln => &[("mu", 1.0), ("sigma", 0.5)],
            Pattern::Ar1 => &[("phi", 0.8), ("sigma", 1.0)],
            Pattern::Ce => &[("rate", 0.5)],
            Pattern::Ss => &[("m", 50.0), ("amp", 10.0), ("period", 12.0)],
            Pattern::Sr => &[("step", 3.0), ("top", 30.0)],
            Pattern::Pl => &[("c", 2.0), ("p", 1.5)],
            Pattern::Ud => &[("lo", 0.0), ("hi", 100.0)],
            Pattern::Nd => &[("mean", 50.0), ("sd", 10.0)],
            Pattern::Hst => &[("stay", 0.9)],
            Pattern::Rst => &[("rare", 0.05)],
            Pattern::Sdt => &[("dominant", 0.7)],
            _ => &[],
        };
        p.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Pattern {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScenarioError::UnknownPattern(s.to_string()))
    }
}

/// Which activities modify the attribute and whether its state is per case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Placement {
    /// One activity, per-case state.
    Se,
    /// Several activities, per-case state.
    Me,
    /// One activity, shared state.
    Sg,
    /// Several activities, shared state.
    Mg,
}

impl Placement {
    pub const ALL: [Placement; 4] = [Placement::Se, Placement::Me, Placement::Sg, Placement::Mg];

    pub fn scope(self) -> Scope {
        match self {
            Placement::Se | Placement::Me => Scope::Event,
            Placement::Sg | Placement::Mg => Scope::Global,
        }
    }

    fn modifiers(self) -> usize {
        match self {
            Placement::Se | Placement::Sg => 1,
            Placement::Me | Placement::Mg => 3,
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Se => "SE",
            Placement::Me => "ME",
            Placement::Sg => "SG",
            Placement::Mg => "MG",
        })
    }
}

impl FromStr for Placement {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Placement::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScenarioError::UnknownPattern(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub pattern: Pattern,
    pub placement: Placement,
    /// Overrides of the pattern's default parameters.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

impl PatternSpec {
    pub fn new(pattern: Pattern, placement: Placement, seed: u64) -> Self {
        PatternSpec { pattern, placement, params: BTreeMap::new(), noise: 0.0, seed }
    }

    pub fn attribute_name(&self) -> String {
        format!("{}_{}", self.pattern, self.placement).to_lowercase()
    }

    fn resolved_params(&self) -> BTreeMap<String, f64> {
        let mut p = self.pattern.default_params(self.placement);
        p.extend(self.params.iter().map(|(k, v)| (k.clone(), *v)));
        p
    }
}

/// What an attribute scenario injected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTruth {
    pub attribute: String,
    pub kind: AttrKind,
    pub scope: Scope,
    pub modifying: Vec<String>,
    pub pattern: Pattern,
    pub params: BTreeMap<String, f64>,
    /// The equivalent update rule, for patterns that have one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<UpdateRule>,
    pub initializer: UpdateRule,
}

const STATES4: [&str; 4] = ["s0", "s1", "s2", "s3"];

fn markov(pattern: Pattern, p: &BTreeMap<String, f64>) -> Option<Vec<Vec<f64>>> {
    let k = STATES4.len();
    let rows = (0..k).map(|i| -> Vec<f64> {
        (0..k)
            .map(|j| match pattern {
                Pattern::Hst => {
                    let stay = p["stay"];
                    if i == j {
                        stay
                    } else {
                        (1.0 - stay) / (k - 1) as f64
                    }
                }
                Pattern::Uet => {
                    if i == j {
                        0.0
                    } else {
                        1.0 / (k - 1) as f64
                    }
                }
                Pattern::Uit => 1.0 / k as f64,
                Pattern::Rst => {
                    // Mostly stay; rarely jump to the last state, which is left half the time.
                    let rare = p["rare"];
                    match (i == k - 1, j) {
                        (true, 0) => 0.5,
                        (true, j) if j == k - 1 => 0.5,
                        (true, _) => 0.0,
                        (false, j) if j == i => 1.0 - rare,
                        (false, j) if j == k - 1 => rare,
                        _ => 0.0,
                    }
                }
                Pattern::Sdt => {
                    let d = p["dominant"];
                    if j == 0 {
                        d
                    } else {
                        (1.0 - d) / (k - 1) as f64
                    }
                }
                Pattern::Ct => f64::from(u8::from(j == (i + 1) % k)),
                _ => 0.0,
            })
            .collect()
    });
    matches!(pattern, Pattern::Hst | Pattern::Uet | Pattern::Uit | Pattern::Rst | Pattern::Sdt | Pattern::Ct)
        .then(|| rows.collect())
}

fn categorical_generator(pattern: Pattern) -> Option<(Vec<String>, Vec<f64>)> {
    let (n, probs): (usize, Vec<f64>) = match pattern {
        Pattern::E2p => (2, vec![0.5, 0.5]),
        Pattern::N2p => (2, vec![0.3, 0.7]),
        Pattern::E5p => (5, vec![0.2; 5]),
        Pattern::N5p => (5, vec![0.1, 0.15, 0.2, 0.25, 0.3]),
        _ => return None,
    };
    Some(((0..n).map(|i| format!("s{i}")).collect(), probs))
}

fn truth_rule(pattern: Pattern, p: &BTreeMap<String, f64>) -> Option<UpdateRule> {
    let dg = |distribution| Some(UpdateRule::DistributionGenerator { distribution });
    match pattern {
        Pattern::Lt => Some(UpdateRule::Linear { slope: p["a"], intercept: p["b"] }),
        Pattern::Eg => Some(UpdateRule::Linear { slope: 1.0 + p["r"], intercept: 0.0 }),
        Pattern::Ln => dg(Distribution::Lognormal { mu: p["mu"], sigma: p["sigma"] }),
        Pattern::Ce => Some(UpdateRule::DeltaDistribution { delta: Distribution::Exponential { rate: p["rate"] } }),
        Pattern::Ud => dg(Distribution::Uniform { lo: p["lo"], hi: p["hi"] }),
        Pattern::Nd => dg(Distribution::Normal { mean: p["mean"], sd: p["sd"] }),
        Pattern::Ar1 | Pattern::Ss | Pattern::Sr | Pattern::Pl => None,
        _ => {
            if let Some(matrix) = markov(pattern, p) {
                let states: Vec<String> = STATES4.iter().map(|s| s.to_string()).collect();
                let fallback = vec![1.0 / states.len() as f64; states.len()];
                return Some(UpdateRule::MarkovMatrix { states, matrix, fallback, support: Vec::new() });
            }
            categorical_generator(pattern).map(|(states, probs)| UpdateRule::ProbabilisticGenerator { states, probs })
        }
    }
}

/// Initial value generator: random per case for event placements, fixed for
/// global ones.
fn initializer(pattern: Pattern, scope: Scope) -> UpdateRule {
    let global = scope == Scope::Global;
    match pattern.kind() {
        AttrKind::Numeric if global => UpdateRule::constant(&Value::Num(5.0)),
        AttrKind::Numeric => {
            UpdateRule::DistributionGenerator { distribution: Distribution::Uniform { lo: 1.0, hi: 10.0 } }
        }
        AttrKind::Categorical => {
            let states: Vec<String> = match categorical_generator(pattern) {
                Some((s, _)) => s,
                None => STATES4.iter().map(|s| s.to_string()).collect(),
            };
            if global {
                UpdateRule::constant(&Value::cat(states[0].clone()))
            } else {
                let probs = vec![1.0 / states.len() as f64; states.len()];
                UpdateRule::ProbabilisticGenerator { states, probs }
            }
        }
    }
}

/// The loan-application process: register, check credit, verify documents,
/// assess, approve (70%) or reject, notify and archive.
pub fn base_model() -> DasModel {
    let process = ModelBuilder::new()
        .start("start")
        .task("register", "Register application")
        .task("check", "Check credit")
        .task("verify", "Verify documents")
        .task("assess", "Assess application")
        .gateway("decide", GateType::Xor, Direction::Split)
        .task("approve", "Approve loan")
        .task("reject", "Reject loan")
        .gateway("merge", GateType::Xor, Direction::Join)
        .task("notify", "Notify applicant")
        .task("archive", "Archive case")
        .end("end")
        .flow("f_start", "start", "register")
        .flow("f_register", "register", "check")
        .flow("f_check", "check", "verify")
        .flow("f_verify", "verify", "assess")
        .flow("f_assess", "assess", "decide")
        .flow("f_approve", "decide", "approve")
        .flow("f_reject", "decide", "reject")
        .flow("f_approved", "approve", "merge")
        .flow("f_rejected", "reject", "merge")
        .flow("f_merge", "merge", "notify")
        .flow("f_notify", "notify", "archive")
        .flow("f_end", "archive", "end")
        .default_flow("decide", "f_approve")
        .build()
        .expect("loan model is valid");
    let mut model = DasModel::with_defaults(process, 12, 600.0, 600.0);
    let proc_time = [
        ("Register application", Distribution::Exponential { rate: 1.0 / 600.0 }),
        ("Check credit", Distribution::Normal { mean: 1200.0, sd: 300.0 }),
        ("Verify documents", Distribution::Lognormal { mu: 900f64.ln() - 0.125, sigma: 0.5 }),
        ("Assess application", Distribution::Uniform { lo: 900.0, hi: 2700.0 }),
        ("Approve loan", Distribution::Normal { mean: 600.0, sd: 120.0 }),
        ("Reject loan", Distribution::Normal { mean: 300.0, sd: 60.0 }),
        ("Notify applicant", Distribution::Exponential { rate: 1.0 / 300.0 }),
        ("Archive case", Distribution::Uniform { lo: 60.0, hi: 240.0 }),
    ];
    model.resources.pools[0].name = "clerk".into();
    for (task, d) in proc_time {
        model.resources.task_pool.insert(task.into(), "clerk".into());
        model.resources.proc_time.insert(task.into(), d);
    }
    let flows = [("f_approve", 0.7), ("f_reject", 0.3)]
        .into_iter()
        .map(|(f, p)| (f.to_string(), FlowPolicy::new(Condition::True, p)))
        .collect();
    model.policies.insert("decide".into(), GatewayPolicy { flows });
    model
}

/// Picks the modifying activities; the entry task never modifies.
fn pick_modifiers(model: &DasModel, placement: Placement, seed: u64) -> Vec<String> {
    let entry = {
        let p = &model.process;
        let first = p.target_of(p.outgoing_ix(p.start_node())[0]);
        p.node(first).label.clone()
    };
    let mut pool: Vec<String> = model.process.task_labels().filter(|l| *l != entry).map(str::to_string).collect();
    pool.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    pool.shuffle(&mut rng);
    pool.truncate(placement.modifiers().min(pool.len()));
    pool.sort();
    pool
}

/// A model whose rules realize the pattern where a single rule can, and the
/// ground truth. Patterns without an equivalent rule get no rules; their
/// values exist only in logs from [`generate_attribute_log`].
pub fn build_attribute_scenario(
    spec: &PatternSpec,
    base: &DasModel,
) -> Result<(DasModel, AttributeTruth), ScenarioError> {
    if !(0.0..=1.0).contains(&spec.noise) {
        return Err(ScenarioError::Noise(spec.noise));
    }
    let params = spec.resolved_params();
    let scope = spec.placement.scope();
    let name = spec.attribute_name();
    let modifying = pick_modifiers(base, spec.placement, spec.seed);
    let rule = truth_rule(spec.pattern, &params);
    let init = initializer(spec.pattern, scope);
    let mut model = base.clone();
    model.attributes.push(AttributeDecl {
        name: name.clone(),
        scope,
        kind: spec.pattern.kind(),
        initializer: init.clone(),
    });
    if let Some(rule) = &rule {
        for a in &modifying {
            model.rules.push(RuleAnchor {
                attribute: name.clone(),
                anchor: Anchor::TaskCompletion(a.clone()),
                rule: rule.clone(),
            });
        }
    }
    let truth = AttributeTruth {
        attribute: name,
        kind: spec.pattern.kind(),
        scope,
        modifying,
        pattern: spec.pattern,
        params,
        rule,
        initializer: init,
    };
    Ok((model, truth))
}

/// Per-state memory of one attribute (per case or shared).
#[derive(Debug, Clone)]
struct Cell {
    value: Value,
    count: u32,
}

fn step<R: Rng>(truth: &AttributeTruth, cell: &mut Cell, noise_sd: f64, noise: f64, rng: &mut R) {
    let p = &truth.params;
    cell.count += 1;
    let k = f64::from(cell.count);
    let next = match (&truth.rule, truth.pattern) {
        (_, Pattern::Ar1) => {
            let x = cell.value.as_num().unwrap_or(0.0);
            Value::Num(p["phi"] * x + Normal::new(0.0, p["sigma"]).expect("valid sd").sample(rng))
        }
        (_, Pattern::Ss) => Value::Num(p["m"] + p["amp"] * (2.0 * std::f64::consts::PI * k / p["period"]).sin()),
        (_, Pattern::Sr) => Value::Num((cell.value.as_num().unwrap_or(0.0) + p["step"]).rem_euclid(p["top"])),
        (_, Pattern::Pl) => Value::Num(p["c"] * k.powf(p["p"])),
        (Some(rule), _) => rule.apply(&cell.value, rng).expect("rule matches kind").value,
        (None, _) => unreachable!("every other pattern has a rule"),
    };
    cell.value = match next {
        Value::Num(x) if noise_sd > 0.0 => Value::Num(x + Normal::new(0.0, noise_sd).expect("valid sd").sample(rng)),
        Value::Cat(s) if noise > 0.0 && rng.gen::<f64>() < noise => {
            let states = match &truth.rule {
                Some(UpdateRule::MarkovMatrix { states, .. })
                | Some(UpdateRule::ProbabilisticGenerator { states, .. }) => states.clone(),
                _ => vec![s],
            };
            Value::cat(states[rng.gen_range(0..states.len())].clone())
        }
        v => v,
    };
}

/// Rewrites `log` with the attribute of `truth`: events are visited in order
/// of completion and each records the current value after any update.
/// Returns the log and the values produced at modifying events.
fn inject(
    log: &EventLog,
    truth: &AttributeTruth,
    noise: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(EventLog, Vec<f64>), LogError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let traces = log.traces();
    let mut order: Vec<(DateTime<Utc>, usize, usize)> = Vec::new();
    for (c, t) in traces.iter().enumerate() {
        for (i, e) in t.events.iter().enumerate() {
            order.push((e.end, c, i));
        }
    }
    order.sort();
    let modifying: BTreeSet<&str> = truth.modifying.iter().map(String::as_str).collect();
    let mut cases: HashMap<usize, Cell> = HashMap::new();
    let mut shared: Option<Cell> = None;
    let mut produced = Vec::new();
    let mut out: Vec<Event> = Vec::with_capacity(log.len());
    for (_, c, i) in order {
        let e = traces[c].events[i];
        let init = |rng: &mut ChaCha8Rng| Cell {
            value: truth.initializer.apply(&Value::default_for(truth.kind), rng).expect("generator").value,
            count: 0,
        };
        let cell = match truth.scope {
            Scope::Global => shared.get_or_insert_with(|| init(&mut rng)),
            _ => cases.entry(c).or_insert_with(|| init(&mut rng)),
        };
        if modifying.contains(e.activity.as_str()) {
            step(truth, cell, noise_sd, noise, &mut rng);
            if let Some(x) = cell.value.as_num() {
                produced.push(x);
            }
        }
        out.push(e.clone().with_attr(truth.attribute.clone(), cell.value.clone()));
    }
    Ok((EventLog::from_events(out)?, produced))
}

/// Simulates the base process and injects the attribute of `spec`.
pub fn generate_attribute_log(
    spec: &PatternSpec,
    base: &DasModel,
    n_cases: usize,
) -> Result<(EventLog, AttributeTruth), ScenarioError> {
    let (_, truth) = build_attribute_scenario(spec, base)?;
    let mut plain = base.clone();
    plain.attributes.clear();
    plain.rules.clear();
    let flow = simulate(&plain, &SimConfig::new(n_cases, spec.seed))?.log;
    let (clean, produced) = inject(&flow, &truth, 0.0, 0.0, spec.seed)?;
    if spec.noise == 0.0 {
        return Ok((clean, truth));
    }
    let sd = if produced.len() > 1 { stats::variance(&produced).sqrt() } else { 0.0 };
    let (noisy, _) = inject(&flow, &truth, spec.noise, spec.noise * sd, spec.seed)?;
    Ok((noisy, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConditionPattern {
    Eq,
    Ub,
    Rd,
    Nd,
    Ed,
    Cc1,
    Cc2,
    Cc3,
    Cc4,
    Cc5,
}

impl ConditionPattern {
    pub const ALL: [ConditionPattern; 10] = [
        ConditionPattern::Eq,
        ConditionPattern::Ub,
        ConditionPattern::Rd,
        ConditionPattern::Nd,
        ConditionPattern::Ed,
        ConditionPattern::Cc1,
        ConditionPattern::Cc2,
        ConditionPattern::Cc3,
        ConditionPattern::Cc4,
        ConditionPattern::Cc5,
    ];
}

impl FromStr for ConditionPattern {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = serde_json::Value::String(s.to_uppercase());
        serde_json::from_value(v).map_err(|_| ScenarioError::UnknownPattern(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Fixed per case at creation.
    Case,
    /// Redrawn by the first activity of every block.
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionScenario {
    pub gate: GateType,
    pub pattern: ConditionPattern,
    pub basis: Basis,
    /// OR only: how many flows each valid data state activates (1, 2 or 5).
    #[serde(default = "one")]
    pub flows_active: usize,
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl ConditionScenario {
    pub fn new(gate: GateType, pattern: ConditionPattern, basis: Basis, seed: u64) -> Self {
        ConditionScenario { gate, pattern, basis, flows_active: 1, noise: 0.0, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTruth {
    /// Condition of every conditional flow, by gateway then flow id.
    pub conditions: BTreeMap<String, BTreeMap<String, Condition>>,
    /// Default flow of every split.
    pub default_flows: BTreeMap<String, String>,
}

pub const BLOCKS: usize = 3;
pub const BRANCHES: usize = 5;
/// Numeric value that lies outside every numeric condition.
const NOISE_VALUE: f64 = -1000.0;
const NOISE_STATE: &str = "none";

struct DataDesign {
    /// (attribute, kind, generator for valid data)
    attrs: Vec<(&'static str, AttrKind, UpdateRule)>,
    /// One condition per cell; cells partition the valid data space.
    cells: Vec<Condition>,
}

fn cats(states: &[&str], probs: &[f64]) -> UpdateRule {
    UpdateRule::ProbabilisticGenerator { states: states.iter().map(|s| s.to_string()).collect(), probs: probs.to_vec() }
}

fn design(pattern: ConditionPattern) -> DataDesign {
    let c = |v: &str| Condition::eq("c", v);
    let x = |lo: f64, hi: f64| Condition::within("x", lo, hi);
    let and = |a: Condition, b: Condition| Condition::all(vec![a, b]);
    let or = |a: Condition, b: Condition| Condition::any(vec![a, b]);
    let five = ["v1", "v2", "v3", "v4", "v5"];
    let uniform_x = UpdateRule::DistributionGenerator { distribution: Distribution::Uniform { lo: 0.0, hi: 100.0 } };
    match pattern {
        ConditionPattern::Eq => DataDesign {
            attrs: vec![("c", AttrKind::Categorical, cats(&five, &[0.2; 5]))],
            cells: five.iter().map(|v| c(v)).collect(),
        },
        ConditionPattern::Ub => DataDesign {
            attrs: vec![("c", AttrKind::Categorical, cats(&["v1"], &[1.0]))],
            cells: five.iter().map(|v| c(v)).collect(),
        },
        ConditionPattern::Rd => DataDesign {
            attrs: vec![("c", AttrKind::Categorical, cats(&five, &[0.4, 0.25, 0.15, 0.12, 0.08]))],
            cells: five.iter().map(|v| c(v)).collect(),
        },
        ConditionPattern::Nd => DataDesign {
            attrs: vec![(
                "x",
                AttrKind::Numeric,
                UpdateRule::DistributionGenerator { distribution: Distribution::Normal { mean: 50.0, sd: 10.0 } },
            )],
            cells: vec![x(0.0, 40.0), x(40.0, 47.0), x(47.0, 53.0), x(53.0, 60.0), x(60.0, 100.0)],
        },
        ConditionPattern::Ed => DataDesign {
            attrs: vec![(
                "x",
                AttrKind::Numeric,
                UpdateRule::DistributionGenerator { distribution: Distribution::Exponential { rate: 0.1 } },
            )],
            cells: vec![x(0.0, 3.0), x(3.0, 7.0), x(7.0, 12.0), x(12.0, 20.0), x(20.0, 1000.0)],
        },
        ConditionPattern::Cc1 => DataDesign {
            attrs: vec![
                ("c", AttrKind::Categorical, cats(&["a", "b"], &[0.5, 0.5])),
                ("x", AttrKind::Numeric, uniform_x),
            ],
            cells: vec![
                and(c("a"), x(0.0, 50.0)),
                and(c("a"), x(50.0, 100.0)),
                and(c("b"), x(0.0, 30.0)),
                and(c("b"), x(30.0, 70.0)),
                and(c("b"), x(70.0, 100.0)),
            ],
        },
        ConditionPattern::Cc2 => DataDesign {
            attrs: vec![
                ("c", AttrKind::Categorical, cats(&["a", "b"], &[0.6, 0.4])),
                ("x", AttrKind::Numeric, uniform_x),
            ],
            cells: vec![
                x(0.0, 20.0),
                and(x(20.0, 40.0), c("a")),
                and(x(20.0, 40.0), c("b")),
                x(40.0, 70.0),
                x(70.0, 100.0),
            ],
        },
        ConditionPattern::Cc3 => DataDesign {
            attrs: vec![
                ("c", AttrKind::Categorical, cats(&["a", "b"], &[0.5, 0.5])),
                ("x", AttrKind::Numeric, uniform_x),
            ],
            cells: vec![
                or(and(c("a"), x(0.0, 25.0)), and(c("b"), x(75.0, 100.0))),
                and(c("a"), x(25.0, 50.0)),
                and(c("a"), x(50.0, 100.0)),
                and(c("b"), x(0.0, 40.0)),
                and(c("b"), x(40.0, 75.0)),
            ],
        },
        ConditionPattern::Cc4 => DataDesign {
            attrs: vec![
                ("c", AttrKind::Categorical, cats(&["a", "b", "d"], &[0.2, 0.4, 0.4])),
                ("x", AttrKind::Numeric, uniform_x),
            ],
            cells: vec![
                and(c("a"), x(0.0, 100.0)),
                and(c("b"), x(0.0, 50.0)),
                and(c("b"), x(50.0, 100.0)),
                and(c("d"), x(0.0, 50.0)),
                and(c("d"), x(50.0, 100.0)),
            ],
        },
        ConditionPattern::Cc5 => DataDesign {
            attrs: vec![
                ("c", AttrKind::Categorical, cats(&["a", "b", "d"], &[0.3, 0.3, 0.4])),
                ("x", AttrKind::Numeric, uniform_x),
            ],
            cells: vec![
                or(and(c("a"), x(0.0, 33.0)), and(c("d"), x(66.0, 100.0))),
                or(and(c("b"), x(0.0, 33.0)), and(c("a"), x(66.0, 100.0))),
                or(and(c("d"), x(0.0, 33.0)), and(c("b"), x(66.0, 100.0))),
                and(Condition::Ne { attr: "c".into(), value: "d".into() }, x(33.0, 66.0)),
                and(c("d"), x(33.0, 66.0)),
            ],
        },
    }
}

/// Replaces a generator's output by the noise value with probability `noise`.
fn with_noise(rule: &UpdateRule, noise: f64) -> UpdateRule {
    if noise <= 0.0 {
        return rule.clone();
    }
    match rule {
        UpdateRule::ProbabilisticGenerator { states, probs } => {
            let mut states = states.clone();
            let mut probs: Vec<f64> = probs.iter().map(|p| p * (1.0 - noise)).collect();
            states.push(NOISE_STATE.into());
            probs.push(noise);
            UpdateRule::ProbabilisticGenerator { states, probs }
        }
        other => other.clone(),
    }
}

/// Three blocks of task, split over five tasks, join; decisions driven by
/// data. 100 always-available resources; per-task duration families drawn
/// from the seed.
pub fn build_condition_scenario(s: &ConditionScenario) -> Result<(DasModel, ConditionTruth), ScenarioError> {
    if !(0.0..=1.0).contains(&s.noise) {
        return Err(ScenarioError::Noise(s.noise));
    }
    let k = match s.gate {
        GateType::Xor => 1,
        GateType::Or if matches!(s.flows_active, 1 | 2 | 5) => s.flows_active,
        GateType::Or => return Err(ScenarioError::Unsupported(format!("OR F{}", s.flows_active), "flow count".into())),
        GateType::And => return Err(ScenarioError::Unsupported("AND".into(), "conditions".into())),
    };
    let process = condition_process(s.gate);
    let mut model = DasModel::with_defaults(process.clone(), 100, 600.0, 120.0);
    model.resources.pools = vec![Pool { name: "team".into(), size: 100, calendar: Calendar::always() }];
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(3));
    for label in process.task_labels() {
        let mean = rng.gen_range(600.0..3600.0);
        let d = match rng.gen_range(0..4) {
            0 => Distribution::Exponential { rate: 1.0 / mean },
            1 => Distribution::Normal { mean, sd: mean / 5.0 },
            2 => Distribution::Uniform { lo: mean / 2.0, hi: 1.5 * mean },
            _ => Distribution::Lognormal { mu: mean.ln() - 0.125, sigma: 0.5 },
        };
        model.resources.task_pool.insert(label.to_string(), "team".into());
        model.resources.proc_time.insert(label.to_string(), d);
    }

    let d = design(s.pattern);
    // Numeric noise goes through a flag, so one generator stays one distribution.
    let numeric_only = d.attrs.iter().all(|a| a.1 == AttrKind::Numeric);
    let mut attrs: Vec<(String, AttrKind, UpdateRule)> = d
        .attrs
        .iter()
        .map(|(n, kind, g)| {
            (n.to_string(), *kind, if *kind == AttrKind::Categorical { with_noise(g, s.noise) } else { g.clone() })
        })
        .collect();
    let valid = if numeric_only && s.noise > 0.0 {
        attrs.push(("z".into(), AttrKind::Categorical, cats(&["ok", NOISE_STATE], &[1.0 - s.noise, s.noise])));
        Some(Condition::eq("z", "ok"))
    } else {
        None
    };
    let cell = |i: usize| match &valid {
        Some(v) => Condition::all(vec![v.clone(), d.cells[i].clone()]),
        None => d.cells[i].clone(),
    };
    for (name, kind, generator) in &attrs {
        match s.basis {
            Basis::Case => model.attributes.push(AttributeDecl {
                name: name.clone(),
                scope: Scope::Case,
                kind: *kind,
                initializer: generator.clone(),
            }),
            Basis::Event => {
                let start = if *kind == AttrKind::Numeric { Value::Num(NOISE_VALUE) } else { Value::cat(NOISE_STATE) };
                model.attributes.push(AttributeDecl {
                    name: name.clone(),
                    scope: Scope::Event,
                    kind: *kind,
                    initializer: UpdateRule::constant(&start),
                });
                for b in 1..=BLOCKS {
                    model.rules.push(RuleAnchor {
                        attribute: name.clone(),
                        anchor: Anchor::TaskCompletion(format!("A{b}")),
                        rule: generator.clone(),
                    });
                }
            }
        }
    }

    let mut truth = ConditionTruth { conditions: BTreeMap::new(), default_flows: process.default_flows().clone() };
    for b in 1..=BLOCKS {
        let gid = format!("g{b}");
        let mut flows = BTreeMap::new();
        let mut conds = BTreeMap::new();
        for i in 0..BRANCHES {
            // Flow i is taken in cells i, i-1, ... (k cells in total).
            let parts: Vec<Condition> = (0..k).map(|j| cell((i + BRANCHES - j) % BRANCHES)).collect();
            let condition = Condition::any(parts);
            let fid = format!("g{b}_f{}", i + 1);
            let p = if s.gate == GateType::Xor { 1.0 / BRANCHES as f64 } else { 1.0 };
            flows.insert(fid.clone(), FlowPolicy::new(condition.clone(), p));
            conds.insert(fid, condition);
        }
        model.policies.insert(gid.clone(), GatewayPolicy { flows });
        truth.conditions.insert(gid, conds);
    }
    Ok((model, truth))
}

fn condition_process(gate: GateType) -> ProcessModel {
    let mut b = ModelBuilder::new().start("start").end("end");
    let mut prev = "start".to_string();
    for k in 1..=BLOCKS {
        let (a, g, j) = (format!("a{k}"), format!("g{k}"), format!("j{k}"));
        b = b
            .task(&a, &format!("A{k}"))
            .gateway(&g, gate, Direction::Split)
            .gateway(&j, gate, Direction::Join)
            .flow(&format!("in{k}"), &prev, &a)
            .flow(&format!("to_g{k}"), &a, &g)
            .default_flow(&g, &format!("g{k}_f1"));
        for i in 1..=BRANCHES {
            let t = format!("b{k}_{i}");
            b = b.task(&t, &format!("B{k}_{i}")).flow(&format!("g{k}_f{i}"), &g, &t).flow(&format!("r{k}_{i}"), &t, &j);
        }
        prev = j;
    }
    b.flow("out", &prev, "end").build().expect("block model is valid")
}

/// Everything needed to score a generated scenario, written beside its log.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Manifest {
    Attribute { spec: PatternSpec, cases: usize, truth: AttributeTruth },
    Condition { spec: ConditionScenario, cases: usize, truth: ConditionTruth },
}
