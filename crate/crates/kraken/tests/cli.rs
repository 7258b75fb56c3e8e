use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;

use kraken::formats::{read_predictions, read_scenes, write_jsonl, PredictionRecord, SceneRecord};
use kraken::report::metric_json_string;
use kraken_core::metrics::{DuplicatePolicy, WindowConfig};
use kraken_core::mixture::CovarianceSchedule;
use kraken_core::synth::{gen_scene, gen_scenes, oracle_map, DuplicatingPredictor, GenConfig, OraclePredictor, Predictor};
use kraken_core::{PredictionSet, Scene};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn kraken(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kraken"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture_arg(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

/// Rebuilds the bundled fixture; the golden report comes from the naive oracle.
#[test]
#[ignore]
fn regenerate_golden() {
    let dir = fixtures();
    fs::create_dir_all(&dir).unwrap();
    let scenes = gen_scenes(7, 12, 4, 0.5).unwrap();
    let predictor = DuplicatingPredictor {
        base: OraclePredictor { seed: 7, ..OraclePredictor::default() },
        ..DuplicatingPredictor::default()
    };
    let schedule = CovarianceSchedule::default();
    let mut preds = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        preds.extend(predictor.predict(s, &schedule, i as u64).unwrap());
    }
    write_jsonl(&dir.join("scenes.jsonl"), scenes.iter().map(|s| SceneRecord::from(&s.scene))).unwrap();
    write_jsonl(&dir.join("pred.jsonl"), preds.iter().map(PredictionRecord::from)).unwrap();
    let pairs: Vec<(&PredictionSet, &Scene)> = preds
        .iter()
        .map(|p| (p, &scenes.iter().find(|s| s.scene.scene_id() == p.scene_id()).unwrap().scene))
        .collect();
    let report = oracle_map(&pairs, &WindowConfig::default(), DuplicatePolicy::FalsePositive).unwrap();
    fs::write(dir.join("golden_report.json"), metric_json_string(&report)).unwrap();
}

#[test]
fn eval_matches_golden_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kraken(
        tmp.path(),
        &["eval", "--scenes", &fixture_arg("scenes.jsonl"), "--pred", &fixture_arg("pred.jsonl"), "--out", "report.json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = fs::read(tmp.path().join("report.json")).unwrap();
    assert_eq!(got, fs::read(fixtures().join("golden_report.json")).unwrap());
}

fn map_of(path: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    v["map"].as_f64().unwrap()
}

#[test]
fn gmp_raises_map_on_duplicate_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let (scenes, pred) = (fixture_arg("scenes.jsonl"), fixture_arg("pred.jsonl"));
    assert!(kraken(tmp.path(), &["eval", "--scenes", &scenes, "--pred", &pred, "--out", "raw.json"]).status.success());
    assert!(kraken(tmp.path(), &["gmp", "--scenes", &scenes, "--pred", &pred, "--out", "gmp.jsonl"]).status.success());
    assert!(kraken(tmp.path(), &["eval", "--scenes", &scenes, "--pred", "gmp.jsonl", "--out", "gmp.json"]).status.success());
    read_predictions(&tmp.path().join("gmp.jsonl")).unwrap();
    assert!(map_of(&tmp.path().join("gmp.json")) > map_of(&tmp.path().join("raw.json")));
}

#[test]
fn joint_output_revalidates() {
    let tmp = tempfile::tempdir().unwrap();
    let (scenes, pred) = (fixture_arg("scenes.jsonl"), fixture_arg("pred.jsonl"));
    let out = kraken(tmp.path(), &["joint", "--scenes", &scenes, "--pred", &pred, "--out", "joint.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = kraken(tmp.path(), &["eval", "--scenes", &scenes, "--joint", "joint.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn no_args_prints_usage_and_exits_1() {
    let out = kraken(Path::new("."), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_seed_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(kraken(tmp.path(), &["gen", "--out", "s.jsonl"]).status.code(), Some(1));
}

#[test]
fn malformed_input_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.jsonl"), "{not json}\n").unwrap();
    let out = kraken(tmp.path(), &["eval", "--scenes", "bad.jsonl", "--pred", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.jsonl:1"));
}

#[test]
fn gen_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["gen", "--seed", "9", "--n-scenes", "5", "--out", "s.jsonl"];
    assert!(kraken(a.path(), &args).status.success());
    assert!(kraken(b.path(), &args).status.success());
    assert_eq!(fs::read(a.path().join("s.jsonl")).unwrap(), fs::read(b.path().join("s.jsonl")).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scene_and_prediction_files_roundtrip(seed in 0u64..1000, index in 0usize..50) {
        let labeled = gen_scene(seed, index, &GenConfig::default()).unwrap();
        let preds = OraclePredictor { seed, ..OraclePredictor::default() }
            .predict(&labeled, &CovarianceSchedule::default(), 0)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (sp, pp) = (dir.path().join("s.jsonl"), dir.path().join("p.jsonl"));
        write_jsonl(&sp, [SceneRecord::from(&labeled.scene)]).unwrap();
        write_jsonl(&pp, preds.iter().map(PredictionRecord::from)).unwrap();
        prop_assert_eq!(read_scenes(&sp).unwrap(), vec![labeled.scene.clone()]);
        prop_assert_eq!(read_predictions(&pp).unwrap(), preds);
    }
}
