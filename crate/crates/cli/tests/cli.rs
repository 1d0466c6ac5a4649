use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dasim::das_model::{load_das, Anchor, AttributeDecl, DasModel, RuleAnchor, Scope, UpdateRule};
use dasim::event_log::{parse_log, CsvOptions, EventLog};
use dasim::process_model::{Direction, GateType, ModelBuilder, ProcessModel};
use dasim::value::{AttrKind, Value};
use serde_json::Value as Json;

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dasim-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn dasim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dasim")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_log(path: &Path) -> EventLog {
    parse_log(fs::File::open(path).unwrap(), &CsvOptions::default()).unwrap()
}

fn read_json(path: &Path) -> Json {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn sequence(labels: &[&str]) -> ProcessModel {
    let mut b = ModelBuilder::new().start("s").end("e");
    let mut prev = "s".to_string();
    for (i, l) in labels.iter().enumerate() {
        let id = format!("t{i}");
        b = b.task(&id, l).flow(&format!("f{i}"), &prev, &id);
        prev = id;
    }
    b.flow("f_end", &prev, "e").build().unwrap()
}

/// Event-scope counter starting at 0, incremented by each of three tasks.
fn counter_model() -> DasModel {
    let mut m = DasModel::with_defaults(sequence(&["A", "B", "C"]), 3, 60.0, 45.0);
    m.attributes.push(AttributeDecl {
        name: "x".into(),
        scope: Scope::Event,
        kind: AttrKind::Numeric,
        initializer: UpdateRule::constant(&Value::Num(0.0)),
    });
    for t in ["A", "B", "C"] {
        m.rules.push(RuleAnchor {
            attribute: "x".into(),
            anchor: Anchor::TaskCompletion(t.into()),
            rule: UpdateRule::Linear { slope: 1.0, intercept: 1.0 },
        });
    }
    m
}

fn write_das(dir: &Path, name: &str, m: &DasModel) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, m.to_json_string()).unwrap();
    path
}

const TEN_TRACES: &str = "case_id,activity,resource,start_time,end_time,amount\n\
c9,A,r-1,2024-01-01T09:00:00Z,2024-01-01T09:10:00Z,9\n\
c0,A,r-1,2024-01-01T00:00:00Z,2024-01-01T00:10:00Z,0\n\
c1,A,r-1,2024-01-01T01:00:00Z,2024-01-01T01:10:00Z,1\n\
c1,B,r-2,2024-01-01T01:20:00Z,2024-01-01T01:30:00Z,2\n\
c2,A,r-1,2024-01-01T02:00:00Z,2024-01-01T02:10:00Z,2\n\
c3,A,r-1,2024-01-01T03:00:00Z,2024-01-01T03:10:00Z,3\n\
c4,A,r-1,2024-01-01T04:00:00Z,2024-01-01T04:10:00Z,4\n\
c5,A,r-1,2024-01-01T05:00:00Z,2024-01-01T05:10:00Z,5\n\
c6,A,r-1,2024-01-01T06:00:00Z,2024-01-01T06:10:00Z,6\n\
c7,A,r-1,2024-01-01T07:00:00Z,2024-01-01T07:10:00Z,7\n\
c8,A,r-1,2024-01-01T08:00:00Z,2024-01-01T08:10:00Z,8\n";

#[test]
fn missing_column_exits_2_and_still_reports() {
    let dir = workdir("missing-column");
    let log = dir.join("log.csv");
    fs::write(&log, "case_id,activity,start_time\nc,A,2024-01-01T00:00:00Z\n").unwrap();
    let model = dir.join("model.json");
    fs::write(&model, serde_json::to_string(&sequence(&["A"])).unwrap()).unwrap();
    let out = dir.join("das.json");
    let r = dasim(&["discover", "--log", p(&log), "--model", p(&model), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("end_time"));
    let report = read_json(&dir.join("das.report.json"));
    assert_eq!(report["exit_code"], 2);
    assert_eq!(report["command"], "discover");
    assert!(!out.exists());
}

#[test]
fn zero_cases_exits_2() {
    let dir = workdir("zero-cases");
    let das = write_das(&dir, "m.json", &counter_model());
    let out = dir.join("sim.csv");
    let r = dasim(&["simulate", "--das", p(&das), "--out", p(&out), "--cases", "0"]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(read_json(&dir.join("sim.report.json"))["exit_code"], 2);
}

#[test]
fn equal_seeds_give_identical_files() {
    let dir = workdir("determinism");
    let das = write_das(&dir, "m.json", &counter_model());
    let (a, b, c) = (dir.join("a.csv"), dir.join("b.csv"), dir.join("c.csv"));
    for (out, seed) in [(&a, "11"), (&b, "11"), (&c, "12")] {
        let r = dasim(&["simulate", "--das", p(&das), "--out", p(out), "--cases", "40", "--seed", seed]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn default_scale_simulation_has_2000_cases() {
    let dir = workdir("scale");
    let das = write_das(&dir, "m.json", &counter_model());
    let out = dir.join("sim.csv");
    let r = dasim(&["simulate", "--das", p(&das), "--out", p(&out), "--cases", "2000", "--seed", "1"]);
    assert_eq!(r.status.code(), Some(0));
    let log = read_log(&out);
    assert_eq!(log.traces().len(), 2000);
    assert_eq!(log.len(), 6000);
    assert_eq!(read_json(&dir.join("sim.report.json"))["details"]["cases"], 2000);
}

#[test]
fn deadlock_exits_4() {
    let dir = workdir("deadlock");
    let process = ModelBuilder::new()
        .start("s")
        .gateway("g", GateType::Xor, Direction::Split)
        .task("a", "A")
        .task("b", "B")
        .gateway("j", GateType::And, Direction::Join)
        .end("e")
        .flow("f0", "s", "g")
        .flow("f1", "g", "a")
        .flow("f2", "g", "b")
        .flow("f3", "a", "j")
        .flow("f4", "b", "j")
        .flow("f5", "j", "e")
        .default_flow("g", "f1")
        .build()
        .unwrap();
    let das = write_das(&dir, "m.json", &DasModel::with_defaults(process, 1, 1.0, 10.0));
    let out = dir.join("sim.csv");
    let r = dasim(&["simulate", "--das", p(&das), "--out", p(&out), "--cases", "5"]);
    assert_eq!(r.status.code(), Some(4));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("case_0") && err.contains('j'), "{err}");
}

#[test]
fn split_ten_traces_in_half() {
    let dir = workdir("split");
    let log = dir.join("log.csv");
    fs::write(&log, TEN_TRACES).unwrap();
    let parts = dir.join("parts");
    let r = dasim(&["split", "--log", p(&log), "--ratio", "0.5", "--out", p(&parts)]);
    assert_eq!(r.status.code(), Some(0));
    let train = read_log(&parts.join("train.csv"));
    let test = read_log(&parts.join("test.csv"));
    let ids = |l: &EventLog| l.traces().iter().map(|t| t.case_id.to_string()).collect::<Vec<_>>();
    let mut train_ids = ids(&train);
    train_ids.sort();
    assert_eq!(train_ids, ["c0", "c1", "c2", "c3", "c4"]);
    assert_eq!(test.traces().len(), 5);
    assert_eq!(train.len() + test.len(), 11);
    assert!(parts.join("split.report.json").exists());
}

#[test]
fn invalid_ratio_exits_2() {
    let dir = workdir("bad-ratio");
    let log = dir.join("log.csv");
    fs::write(&log, TEN_TRACES).unwrap();
    for ratio in ["0", "1", "1.5", "-0.2"] {
        let r = dasim(&["split", "--log", p(&log), "--ratio", ratio, "--out", p(&dir.join("parts"))]);
        assert_eq!(r.status.code(), Some(2), "ratio {ratio}");
    }
}

#[test]
fn identical_logs_have_zero_distances() {
    let dir = workdir("evaluate-same");
    let log = dir.join("log.csv");
    fs::write(&log, TEN_TRACES).unwrap();
    let out = dir.join("metrics.json");
    let r = dasim(&["evaluate", "--log", p(&log), "--log", p(&log), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(0));
    let m = read_json(&out);
    assert_eq!(m["ngram"], 0.0);
    let attrs = m["attributes"].as_object().unwrap();
    assert_eq!(attrs.len(), 1);
    assert_eq!(attrs["amount"]["emd"], 0.0);
    assert_eq!(attrs["amount"]["ks"], 0.0);
}

#[test]
fn logs_without_shared_attributes_still_get_ngram() {
    let dir = workdir("evaluate-disjoint");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    fs::write(&a, TEN_TRACES).unwrap();
    fs::write(&b, TEN_TRACES.replace("amount", "weight")).unwrap();
    let out = dir.join("metrics.json");
    let r = dasim(&["evaluate", "--log", p(&a), "--log", p(&b), "--metrics", "emd,ks,ngram", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(0));
    let m = read_json(&out);
    assert!(m["attributes"].as_object().unwrap().is_empty());
    assert_eq!(m["ngram"], 0.0);
}

#[test]
fn counter_log_round_trips_to_event_linear_rules() {
    let dir = workdir("counter");
    let das = write_das(&dir, "truth.json", &counter_model());
    let log = dir.join("log.csv");
    let r = dasim(&["simulate", "--das", p(&das), "--out", p(&log), "--cases", "200", "--seed", "3"]);
    assert_eq!(r.status.code(), Some(0));
    let out = dir.join("found.json");
    let r = dasim(&["discover", "--log", p(&log), "--model", p(&das), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let found = load_das(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(found.attribute("x").unwrap().scope, Scope::Event);
    // Every case enters A with 0, B with 1 and C with 2; a constant start
    // value leaves the slope undetermined, so check the predicted step.
    let rules: Vec<_> = found.rules.iter().filter(|r| r.attribute == "x").collect();
    assert_eq!(rules.len(), 3);
    for (r, (label, prev)) in rules.iter().zip([("A", 0.0), ("B", 1.0), ("C", 2.0)]) {
        assert_eq!(r.anchor, Anchor::TaskCompletion(label.into()));
        match r.rule {
            UpdateRule::Linear { slope, intercept } => {
                assert!((slope * prev + intercept - (prev + 1.0)).abs() < 1e-9, "{:?}", r.rule);
            }
            ref other => panic!("expected a linear rule, got {other:?}"),
        }
    }
}

#[test]
fn no_data_flag_gives_true_conditions() {
    let dir = workdir("no-data");
    let log = dir.join("log.csv");
    let r = dasim(&["scenario", "--pattern", "EQ", "--gate", "xor", "--cases", "400", "--seed", "5", "--out", p(&log)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let truth = dir.join("log.das.json");
    for (flag, expect_true) in [(true, true), (false, false)] {
        let out = dir.join(format!("found-{flag}.json"));
        let mut args = vec!["discover", "--log", p(&log), "--model", p(&truth), "--out", p(&out)];
        if flag {
            args.push("--no-data");
        }
        assert_eq!(dasim(&args).status.code(), Some(0));
        let found = load_das(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(found.policies.len(), 3);
        let all_true = found.policies.values().flat_map(|g| g.flows.values()).all(|f| f.condition.is_true());
        assert_eq!(all_true, expect_true);
        for g in found.policies.values() {
            let sum: f64 = g.flows.values().map(|f| f.probability).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn scenario_writes_manifest_beside_log() {
    let dir = workdir("scenario");
    let log = dir.join("lt.csv");
    let r =
        dasim(&["scenario", "--pattern", "LT", "--placement", "SE", "--cases", "50", "--seed", "2", "--out", p(&log)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let manifest = read_json(&dir.join("lt.manifest.json"));
    assert_eq!(manifest["kind"], "attribute");
    assert_eq!(manifest["cases"], 50);
    assert_eq!(manifest["truth"]["scope"], "event");
    assert!(dir.join("lt.das.json").exists());
    assert_eq!(read_log(&log).traces().len(), 50);
}

#[test]
fn unknown_pattern_exits_2() {
    let dir = workdir("bad-pattern");
    let r = dasim(&["scenario", "--pattern", "ZZ", "--placement", "SE", "--out", p(&dir.join("x.csv"))]);
    assert_eq!(r.status.code(), Some(2));
}
