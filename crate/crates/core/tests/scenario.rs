use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use mgrid_core::config::{load_system, DefenderKind, ScenarioFile, ScenarioSpec};
use mgrid_core::game::EnvConfig;
use mgrid_core::neuralnet::Mlp;
use mgrid_core::scenario::{compare, load_metrics, policy_for, pretrain, run_scenario, write_artifacts, PretrainOutcome};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn spec(name: &str) -> ScenarioSpec {
    ScenarioSpec::load(&scenario_path(name)).unwrap()
}

fn pretrained() -> &'static PretrainOutcome {
    static CELL: OnceLock<PretrainOutcome> = OnceLock::new();
    CELL.get_or_init(|| pretrain(&spec("sub_case_1.toml")).unwrap())
}

#[test]
fn shipped_scenarios_load() {
    for name in ["benign.toml", "case_a.toml", "sub_case_1.toml", "sub_case_2.toml", "sub_case_3.toml"] {
        let s = spec(name);
        assert!(s.duration > 0.0 && s.epochs() > 0, "{name}");
    }
    assert_eq!(load_system(&scenario_path("system.toml")).unwrap(), EnvConfig::default());
    assert_eq!(spec("sub_case_1.toml").defender, DefenderKind::Dqn);
    assert_eq!(spec("case_a.toml").schedule.stages.len(), 4);
}

#[test]
fn bad_scenarios_are_configuration_errors() {
    let err = ScenarioFile::parse("name = \"x\"\nduration = [\n").unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("line"), "{err}");
    assert!(ScenarioFile::parse("name = \"x\"\nbogus = 1\n").unwrap_err().is_config());
    assert!(ScenarioSpec::load(Path::new("/nonexistent/scenario.toml")).unwrap_err().is_config());
}

#[test]
fn benign_run_meets_objectives_without_scans() {
    let s = spec("benign.toml");
    let out = run_scenario(&s, policy_for(&s, None).unwrap()).unwrap();
    let m = out.summary();
    assert!(m.objectives_met);
    assert!(m.scans.is_empty() && m.activations.is_empty() && m.burned.is_empty());
    assert_eq!(out.metrics.epochs.len(), s.epochs());
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let s = spec("case_a.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut written = Vec::new();
    for d in &dirs {
        let out = run_scenario(&s, policy_for(&s, None).unwrap()).unwrap();
        written.push(write_artifacts(&out, d.path()).unwrap());
    }
    assert_eq!(written[0].len(), written[1].len());
    for (a, b) in written[0].iter().zip(&written[1]) {
        assert_eq!(a.file_name(), b.file_name());
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), "{}", a.display());
    }
    let m = load_metrics(dirs[0].path()).unwrap();
    assert_eq!(m.summary.scenario, s.name);
}

#[test]
fn pretraining_is_seeded_and_reduces_loss() {
    let first = pretrained();
    let again = pretrain(&spec("sub_case_1.toml")).unwrap();
    assert_eq!(first.network.to_json().unwrap(), again.network.to_json().unwrap());
    assert!(first.final_loss < first.initial_loss, "{} -> {}", first.initial_loss, first.final_loss);
    assert!(first.log.windows(2).all(|w| w[0].step < w[1].step));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    first.network.save(&path).unwrap();
    assert_eq!(Mlp::load(&path).unwrap(), first.network);
}

#[test]
fn learned_defense_beats_the_static_baseline() {
    let dynamic = spec("sub_case_1.toml");
    let fixed = dynamic.clone().with_defender(DefenderKind::Static);
    let a = run_scenario(&dynamic, policy_for(&dynamic, Some(pretrained().network.clone())).unwrap()).unwrap();
    let b = run_scenario(&fixed, policy_for(&fixed, None).unwrap()).unwrap();
    let (a, b) = (a.summary(), b.summary());
    assert!(a.objectives_met && !b.objectives_met);
    assert!(a.max_frequency_deviation < b.max_frequency_deviation);
    assert!(a.cumulative_u_d > b.cumulative_u_d);
    assert_eq!(a.burned, vec![1, 2, 3, 4]);
    assert!(b.scans.is_empty() && b.switches.is_empty());
}

#[test]
fn comparing_a_run_with_itself_gives_zero_deltas() {
    let s = spec("benign.toml");
    let out = run_scenario(&s, policy_for(&s, None).unwrap()).unwrap();
    let c = compare(out.summary(), out.summary());
    assert!(!c.rows.is_empty());
    assert!(c.rows.iter().all(|r| r.delta == 0.0 && r.a == r.b));
    assert!(c.table().contains("cumulative"));
}
