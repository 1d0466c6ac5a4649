//! Commands behind the `dasim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value as Json};
use thiserror::Error;

use dasim::attribute_discovery::DiscoveryConfig;
use dasim::branching_discovery::{BranchConfig, BranchError};
use dasim::das_model::{load_das, DasModel};
use dasim::discovery::{discover, PipelineConfig};
use dasim::event_log::{parse_log, split_temporal, write_log, CsvOptions, EventLog};
use dasim::metrics::{compare_logs, Metric};
use dasim::process_model::{parse_model, GateType, ProcessModel};
use dasim::scenario_gen::{
    base_model, build_attribute_scenario, build_condition_scenario, generate_attribute_log, Basis, ConditionPattern,
    ConditionScenario, Manifest, Pattern, PatternSpec, Placement,
};
use dasim::sim_engine::{simulate, SimConfig, SimError};

#[derive(Debug, Parser)]
#[command(name = "dasim", version, about = "Discover and simulate data-aware process simulation models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Where to write the JSON run report. Defaults to the output path with
    /// a `.report.json` suffix, or `dasim-report.json`.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Discover a DAS model from a log and a process model.
    Discover(DiscoverArgs),
    /// Simulate a DAS model into a CSV log.
    Simulate(SimulateArgs),
    /// Compare two logs.
    Evaluate(EvaluateArgs),
    /// Split a log by trace start time into train and test parts.
    Split(SplitArgs),
    /// Generate a synthetic scenario log with its ground truth.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Process model (JSON or BPMN XML) or a DAS JSON whose process,
    /// resources and arrivals are reused.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Share of cases in which an attribute must stay constant to be a case attribute.
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f64,
    /// Minimum transitions per activity for an update-rule fit.
    #[arg(long, default_value_t = 30)]
    pub min_samples: usize,
    /// Emit the data-unaware baseline: TRUE conditions, probabilities only.
    #[arg(long)]
    pub no_data: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub das: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record only the attributes updated by each event.
    #[arg(long)]
    pub sparse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Emd,
    Ks,
    Ngram,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// The two logs to compare; give the flag twice.
    #[arg(long, num_args = 1, required = true)]
    pub log: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "emd,ks,ngram")]
    pub metrics: Vec<MetricArg>,
    #[arg(long, default_value_t = 3)]
    pub ngram_n: usize,
    /// Metrics JSON; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
    /// Directory receiving `train.csv` and `test.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GateArg {
    Xor,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Case,
    Event,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Attribute pattern (LT, AR1, HST, ...) or, with --gate, a condition
    /// pattern (EQ, UB, RD, ND, ED, CC1..CC5).
    #[arg(long)]
    pub pattern: String,
    /// SE, ME, SG or MG (attribute scenarios).
    #[arg(long)]
    pub placement: Option<String>,
    /// Split gateway type; selects a condition scenario.
    #[arg(long, value_enum)]
    pub gate: Option<GateArg>,
    #[arg(long, value_enum, default_value = "case")]
    pub basis: BasisArg,
    /// OR scenarios: flows activated per decision (1, 2 or 5).
    #[arg(long, default_value_t = 1)]
    pub flows: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 2000)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Log CSV; the manifest and the generating DAS model go beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Replay(String),
    #[error("{0}")]
    Deadlock(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Replay(_) => 3,
            CliError::Deadlock(_) => 4,
        }
    }
}

fn input<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{context}: {e}"))
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Deadlock { .. } => CliError::Deadlock(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

/// Machine-readable record of one command run.
#[derive(Debug, Default, Serialize)]
pub struct RunReport {
    pub command: String,
    pub inputs: Vec<String>,
    pub config: Json,
    pub timings_ms: serde_json::Map<String, Json>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    pub details: Json,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    fn time<T>(&mut self, step: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings_ms.insert(step.into(), json!(t.elapsed().as_secs_f64() * 1000.0));
        out
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn read_log(path: &Path) -> Result<EventLog, CliError> {
    let file = fs::File::open(path).map_err(input(&path_str(path)))?;
    parse_log(std::io::BufReader::new(file), &CsvOptions::default()).map_err(input(&path_str(path)))
}

pub fn save_log(log: &EventLog, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(input(&path_str(dir)))?;
    }
    let file = fs::File::create(path).map_err(input(&path_str(path)))?;
    write_log(log, std::io::BufWriter::new(file), &CsvOptions::default()).map_err(input(&path_str(path)))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(input(&path_str(dir)))?;
    }
    fs::write(path, text).map_err(input(&path_str(path)))
}

/// A process model, plus the DAS model it came from when the file is one.
pub fn read_model(path: &Path) -> Result<(ProcessModel, Option<DasModel>), CliError> {
    let text = fs::read_to_string(path).map_err(input(&path_str(path)))?;
    let is_das = serde_json::from_str::<Json>(&text).ok().is_some_and(|v| v.get("das_version").is_some());
    if is_das {
        let das = load_das(&text).map_err(input(&path_str(path)))?;
        Ok((das.process.clone(), Some(das)))
    } else {
        Ok((parse_model(&text).map_err(input(&path_str(path)))?, None))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_discover(a: &DiscoverArgs, r: &mut RunReport) -> Result<String, CliError> {
    r.inputs = vec![path_str(&a.log), path_str(&a.model)];
    r.config = json!({ "threshold": a.threshold, "min_samples": a.min_samples, "no_data": a.no_data });
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::Input(format!("threshold must lie in [0, 1], got {}", a.threshold)));
    }
    let log = r.time("parse_log", || read_log(&a.log))?;
    let (process, template) = read_model(&a.model)?;
    let cfg = PipelineConfig {
        attributes: DiscoveryConfig { case_threshold: a.threshold, min_samples: a.min_samples, ..Default::default() },
        branching: BranchConfig { no_data: a.no_data, ..Default::default() },
    };
    let found = r.time("discover", || discover(&log, &process, template.as_ref(), &cfg)).map_err(|e| match e {
        BranchError::NonConforming { .. } => CliError::Replay(e.to_string()),
    })?;
    found.model.validate().map_err(input("discovered model"))?;
    write_text(&a.out, &found.model.to_json_string())?;
    r.outputs.push(path_str(&a.out));
    r.warnings.extend(found.warnings.iter().cloned());
    r.details = serde_json::to_value(&found).unwrap_or(Json::Null);
    let scopes: Vec<String> =
        found.classification.attributes.iter().map(|x| format!("{}={}", x.name, x.scope)).collect();
    Ok(format!(
        "discovered {} [{}], {}, {}; replayed {}/{} traces",
        count(found.model.attributes.len(), "attribute"),
        scopes.join(", "),
        count(found.model.rules.len(), "rule"),
        count(found.model.policies.len(), "gateway"),
        found.replay.replayed,
        found.replay.traces
    ))
}

fn count(n: usize, noun: &str) -> String {
    format!("{n} {noun}{}", if n == 1 { "" } else { "s" })
}

fn cmd_simulate(a: &SimulateArgs, r: &mut RunReport) -> Result<String, CliError> {
    r.inputs = vec![path_str(&a.das)];
    r.config = json!({ "cases": a.cases, "seed": a.seed, "dense": !a.sparse });
    let text = fs::read_to_string(&a.das).map_err(input(&path_str(&a.das)))?;
    let das = load_das(&text).map_err(input(&path_str(&a.das)))?;
    let mut cfg = SimConfig::new(a.cases, a.seed);
    cfg.dense = !a.sparse;
    let out = r.time("simulate", || simulate(&das, &cfg))?;
    save_log(&out.log, &a.out)?;
    r.outputs.push(path_str(&a.out));
    if out.stats.markov_fallbacks > 0 {
        r.warnings.push(format!("{} Markov updates met an unknown state", out.stats.markov_fallbacks));
    }
    r.details = serde_json::to_value(&out.stats).unwrap_or(Json::Null);
    Ok(format!("simulated {} cases, {} events", out.stats.cases, out.stats.events))
}

fn cmd_evaluate(a: &EvaluateArgs, r: &mut RunReport) -> Result<String, CliError> {
    r.inputs = a.log.iter().map(|p| path_str(p)).collect();
    r.config = json!({ "metrics": format!("{:?}", a.metrics), "ngram_n": a.ngram_n });
    let [left, right] = a.log.as_slice() else {
        return Err(CliError::Input(format!("evaluate needs exactly two --log values, got {}", a.log.len())));
    };
    let (la, lb) = (read_log(left)?, read_log(right)?);
    let metrics: Vec<Metric> = a
        .metrics
        .iter()
        .map(|m| match m {
            MetricArg::Emd => Metric::Emd,
            MetricArg::Ks => Metric::Ks,
            MetricArg::Ngram => Metric::Ngram,
        })
        .collect();
    let cmp = r.time("compare", || compare_logs(&la, &lb, &metrics, a.ngram_n)).map_err(input("comparison"))?;
    let text = serde_json::to_string_pretty(&cmp).expect("metrics serialize");
    match &a.out {
        Some(p) => {
            write_text(p, &text)?;
            r.outputs.push(path_str(p));
        }
        None => println!("{text}"),
    }
    r.details = serde_json::to_value(&cmp).unwrap_or(Json::Null);
    let ngram = cmp.ngram.map_or_else(String::new, |d| format!(", {}-gram distance {d:.4}", a.ngram_n));
    Ok(format!("compared {}{ngram}", count(cmp.attributes.len(), "shared attribute")))
}

fn cmd_split(a: &SplitArgs, r: &mut RunReport) -> Result<String, CliError> {
    r.inputs = vec![path_str(&a.log)];
    r.config = json!({ "ratio": a.ratio });
    let log = read_log(&a.log)?;
    let (train, test) = split_temporal(&log, a.ratio).map_err(input("split"))?;
    let (tp, sp) = (a.out.join("train.csv"), a.out.join("test.csv"));
    save_log(&train, &tp)?;
    save_log(&test, &sp)?;
    r.outputs = vec![path_str(&tp), path_str(&sp)];
    Ok(format!("split into {} and {} traces", train.traces().len(), test.traces().len()))
}

fn cmd_scenario(a: &ScenarioArgs, r: &mut RunReport) -> Result<String, CliError> {
    r.config = json!({
        "pattern": a.pattern, "placement": a.placement, "gate": a.gate.map(|g| format!("{g:?}")),
        "basis": format!("{:?}", a.basis), "flows": a.flows, "noise": a.noise, "cases": a.cases, "seed": a.seed,
    });
    let (log, manifest, das) = match a.gate {
        None => {
            let pattern: Pattern = a.pattern.parse().map_err(input("--pattern"))?;
            let placement: Placement = a
                .placement
                .as_deref()
                .ok_or_else(|| CliError::Input("attribute scenarios need --placement".into()))?
                .parse()
                .map_err(input("--placement"))?;
            let mut spec = PatternSpec::new(pattern, placement, a.seed);
            spec.noise = a.noise;
            let base = base_model();
            let (das, _) = build_attribute_scenario(&spec, &base).map_err(input("scenario"))?;
            let (log, truth) =
                r.time("generate", || generate_attribute_log(&spec, &base, a.cases)).map_err(input("scenario"))?;
            (log, Manifest::Attribute { spec, cases: a.cases, truth }, das)
        }
        Some(gate) => {
            let pattern: ConditionPattern = a.pattern.parse().map_err(input("--pattern"))?;
            let gate = match gate {
                GateArg::Xor => GateType::Xor,
                GateArg::Or => GateType::Or,
            };
            let basis = match a.basis {
                BasisArg::Case => Basis::Case,
                BasisArg::Event => Basis::Event,
            };
            let spec = ConditionScenario { gate, pattern, basis, flows_active: a.flows, noise: a.noise, seed: a.seed };
            let (das, truth) = build_condition_scenario(&spec).map_err(input("scenario"))?;
            let log = r.time("generate", || simulate(&das, &SimConfig::new(a.cases, a.seed)))?.log;
            (log, Manifest::Condition { spec, cases: a.cases, truth }, das)
        }
    };
    save_log(&log, &a.out)?;
    let manifest_path = sibling(&a.out, ".manifest.json");
    let das_path = sibling(&a.out, ".das.json");
    write_text(&manifest_path, &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    write_text(&das_path, &das.to_json_string())?;
    r.outputs = vec![path_str(&a.out), path_str(&manifest_path), path_str(&das_path)];
    Ok(format!("generated {} traces, {} events", log.traces().len(), log.len()))
}

fn default_report(cli: &Cli) -> PathBuf {
    if let Some(p) = &cli.report {
        return p.clone();
    }
    let out = match &cli.command {
        Command::Discover(a) => Some(a.out.clone()),
        Command::Simulate(a) => Some(a.out.clone()),
        Command::Evaluate(a) => a.out.clone(),
        Command::Split(a) => Some(a.out.join("split")),
        Command::Scenario(a) => Some(a.out.clone()),
    };
    out.map_or_else(|| PathBuf::from("dasim-report.json"), |o| sibling(&o, ".report.json"))
}

/// Runs one command, writes its report and returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let mut report = RunReport::default();
    let t = Instant::now();
    let (name, result) = match &cli.command {
        Command::Discover(a) => ("discover", cmd_discover(a, &mut report)),
        Command::Simulate(a) => ("simulate", cmd_simulate(a, &mut report)),
        Command::Evaluate(a) => ("evaluate", cmd_evaluate(a, &mut report)),
        Command::Split(a) => ("split", cmd_split(a, &mut report)),
        Command::Scenario(a) => ("scenario", cmd_scenario(a, &mut report)),
    };
    report.command = name.into();
    report.timings_ms.insert("total".into(), json!(t.elapsed().as_secs_f64() * 1000.0));
    match &result {
        Ok(summary) => {
            println!("{name}: {summary}");
            for w in &report.warnings {
                println!("warning: {w}");
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            report.exit_code = e.exit_code();
            report.error = Some(e.to_string());
        }
    }
    let path = default_report(cli);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Err(e) = write_text(&path, &text) {
        eprintln!("error: cannot write report: {e}");
    }
    report.exit_code
}
