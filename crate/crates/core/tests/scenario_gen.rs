use std::collections::BTreeMap;

use dasim::das_model::{Condition, Scope, UpdateRule};
use dasim::event_log::EventLog;
use dasim::process_model::GateType;
use dasim::scenario_gen::{
    base_model, build_attribute_scenario, build_condition_scenario, generate_attribute_log, Basis, ConditionPattern,
    ConditionScenario, Pattern, PatternSpec, Placement, BLOCKS, BRANCHES, DEFAULT_CASES,
};
use dasim::sim_engine::{simulate, SimConfig};

fn sd(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// (value before, value after) at every event of `activity`, following the
/// completion order within each case.
fn steps(log: &EventLog, attr: &str, activity: &str) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for t in log.traces() {
        let mut events: Vec<_> = t.events.iter().enumerate().collect();
        events.sort_by_key(|(i, e)| (e.end, *i));
        for w in events.windows(2) {
            if w[1].1.activity == activity {
                let v = |k: usize| w[k].1.attributes[attr].as_num().unwrap();
                out.push((v(0), v(1)));
            }
        }
    }
    out
}

#[test]
fn default_scale_is_2000_cases() {
    assert_eq!(DEFAULT_CASES, 2000);
}

#[test]
fn lt_single_event_truth() {
    let spec = PatternSpec::new(Pattern::Lt, Placement::Se, 4);
    let (model, truth) = build_attribute_scenario(&spec, &base_model()).unwrap();
    assert_eq!(truth.scope, Scope::Event);
    assert_eq!(truth.modifying.len(), 1);
    assert_eq!(truth.rule, Some(UpdateRule::Linear { slope: 2.0, intercept: 1.0 }));
    let anchored: Vec<_> = model.rules.iter().filter(|r| r.attribute == truth.attribute).collect();
    assert_eq!(anchored.len(), 1);
    model.validate().unwrap();
}

#[test]
fn hst_global_truth_has_dominant_diagonal() {
    let spec = PatternSpec::new(Pattern::Hst, Placement::Sg, 4);
    let (_, truth) = build_attribute_scenario(&spec, &base_model()).unwrap();
    assert_eq!(truth.scope, Scope::Global);
    match truth.rule {
        Some(UpdateRule::MarkovMatrix { matrix, .. }) => {
            for (i, row) in matrix.iter().enumerate() {
                assert!((row[i] - 0.9).abs() < 1e-12);
            }
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn every_pattern_builds_a_valid_model() {
    for p in Pattern::ALL {
        let spec = PatternSpec::new(p, Placement::Me, 1);
        let (model, truth) = build_attribute_scenario(&spec, &base_model()).unwrap();
        assert_eq!(truth.kind, p.kind());
        assert_eq!(truth.modifying.len(), 3);
        model.validate().unwrap();
    }
    let mut spec = PatternSpec::new(Pattern::Lt, Placement::Se, 1);
    spec.noise = 1.5;
    assert!(build_attribute_scenario(&spec, &base_model()).is_err());
}

#[test]
fn clean_lt_log_follows_the_rule_exactly() {
    let spec = PatternSpec::new(Pattern::Lt, Placement::Se, 9);
    let (log, truth) = generate_attribute_log(&spec, &base_model(), 300).unwrap();
    let s = steps(&log, &truth.attribute, &truth.modifying[0]);
    assert_eq!(s.len(), 300);
    for (before, after) in s {
        assert!((after - (2.0 * before + 1.0)).abs() < 1e-9);
    }
}

#[test]
fn numeric_noise_has_a_fifth_of_the_sample_sd() {
    let base = base_model();
    let clean_spec = PatternSpec::new(Pattern::Lt, Placement::Se, 21);
    let (clean, truth) = generate_attribute_log(&clean_spec, &base, DEFAULT_CASES).unwrap();
    let produced: Vec<f64> = steps(&clean, &truth.attribute, &truth.modifying[0]).iter().map(|s| s.1).collect();
    let mut noisy_spec = clean_spec.clone();
    noisy_spec.noise = 0.2;
    let (noisy, _) = generate_attribute_log(&noisy_spec, &base, DEFAULT_CASES).unwrap();
    let residuals: Vec<f64> = steps(&noisy, &truth.attribute, &truth.modifying[0])
        .iter()
        .map(|(before, after)| after - (2.0 * before + 1.0))
        .collect();
    let expected = 0.2 * sd(&produced);
    let got = sd(&residuals);
    assert!((got / expected - 1.0).abs() < 0.1, "noise sd {got}, expected {expected}");
}

#[test]
fn global_placement_shares_state_across_cases() {
    let spec = PatternSpec::new(Pattern::Lt, Placement::Sg, 3);
    let (log, truth) = generate_attribute_log(&spec, &base_model(), 50).unwrap();
    let mut events: Vec<_> = log.events().iter().collect();
    events.sort_by_key(|e| e.end);
    let values: Vec<f64> = events.iter().map(|e| e.attributes[&truth.attribute].as_num().unwrap()).collect();
    // a = 1, b = 1 and the entry task never modifies: each modifying
    // completion adds one to the shared value.
    assert!(values.windows(2).all(|w| w[1] >= w[0]));
    let bumps = events.iter().filter(|e| truth.modifying.contains(&e.activity)).count();
    assert!((values.last().unwrap() - values[0] - bumps as f64).abs() < 1e-9);
}

fn condition_run(s: &ConditionScenario, cases: usize) -> dasim::sim_engine::SimOutput {
    let (model, _) = build_condition_scenario(s).unwrap();
    simulate(&model, &SimConfig::new(cases, s.seed)).unwrap()
}

#[test]
fn unbalanced_scenario_always_takes_its_flow() {
    let s = ConditionScenario::new(GateType::Xor, ConditionPattern::Ub, Basis::Case, 1);
    let (_, truth) = build_condition_scenario(&s).unwrap();
    assert_eq!(truth.conditions.len(), BLOCKS);
    let out = condition_run(&s, 1000);
    for b in 1..=BLOCKS {
        let taken = &out.stats.decisions[&format!("g{b}")];
        assert_eq!(taken.get(&format!("g{b}_f1")).copied(), Some(1000));
        assert_eq!(taken.values().sum::<u64>(), 1000);
    }
}

#[test]
fn or_f5_runs_five_tokens_per_block() {
    let mut s = ConditionScenario::new(GateType::Or, ConditionPattern::Eq, Basis::Case, 2);
    s.flows_active = 5;
    let out = condition_run(&s, 100);
    for t in out.log.traces() {
        assert_eq!(t.events.len(), BLOCKS * (1 + BRANCHES));
    }
}

#[test]
fn or_flow_counts_follow_the_design() {
    for k in [1, 2] {
        let mut s = ConditionScenario::new(GateType::Or, ConditionPattern::Eq, Basis::Event, 6);
        s.flows_active = k;
        let out = condition_run(&s, 200);
        for t in out.log.traces() {
            assert_eq!(t.events.len(), BLOCKS * (1 + k));
        }
    }
    let mut s = ConditionScenario::new(GateType::Or, ConditionPattern::Eq, Basis::Case, 0);
    s.flows_active = 3;
    assert!(build_condition_scenario(&s).is_err());
}

#[test]
fn noise_routes_a_fifth_of_decisions_to_the_default() {
    let cases = DEFAULT_CASES;
    for pattern in [ConditionPattern::Eq, ConditionPattern::Nd] {
        let mut s = ConditionScenario::new(GateType::Xor, pattern, Basis::Event, 8);
        s.noise = 0.2;
        let out = condition_run(&s, cases);
        let decisions = (BLOCKS * cases) as f64;
        let fallbacks: u64 = out.stats.default_fallbacks.values().sum();
        let share = fallbacks as f64 / decisions;
        assert!((share - 0.2).abs() < 0.02, "{pattern:?}: {share}");
        if pattern == ConditionPattern::Eq {
            // Default branch = noise plus a fifth of the valid data.
            let first: usize =
                out.log.events().iter().filter(|e| e.activity.starts_with('B') && e.activity.ends_with("_1")).count();
            let share = first as f64 / decisions;
            assert!((share - (0.2 + 0.8 * 0.2)).abs() < 0.02, "{share}");
        }
    }
}

#[test]
fn clean_scenarios_never_fall_back() {
    for pattern in ConditionPattern::ALL {
        let s = ConditionScenario::new(GateType::Xor, pattern, Basis::Case, 5);
        let out = condition_run(&s, 300);
        assert!(out.stats.default_fallbacks.values().all(|&n| n == 0), "{pattern:?}");
    }
}

#[test]
fn cells_partition_the_data() {
    // Exactly one XOR condition holds for every sampled data state.
    for pattern in ConditionPattern::ALL {
        let s = ConditionScenario::new(GateType::Xor, pattern, Basis::Case, 12);
        let (model, truth) = build_condition_scenario(&s).unwrap();
        let out = simulate(&model, &SimConfig::new(200, 12)).unwrap();
        let conds: &BTreeMap<String, Condition> = &truth.conditions["g1"];
        for e in out.log.events() {
            let lookup = |name: &str| e.attributes.get(name);
            let holds = conds.values().filter(|c| c.evaluate(&lookup)).count();
            assert_eq!(holds, 1, "{pattern:?} {:?}", e.attributes);
        }
    }
}
