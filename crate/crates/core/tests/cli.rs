use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use igdbn::config::RunConfig;
use igdbn::io::{self, ModelStore};
use igdbn::pipeline::{Summary, TrackSelection};
use igdbn::scene::{load_frames, LaneSegment, SceneConfig, VehicleSpec};
use igdbn::DUMMY_ID_BASE;

fn igdbn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igdbn"))
        .args(args)
        .current_dir(cwd)
        .env_remove("IGDBN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Two cars, one per lane, never in each other's line of sight.
fn two_vehicle_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scene.occluders.clear();
    cfg.scene.lanes[1] = LaneSegment {
        start: [-10.0, -13.0, 0.0],
        end: [-10.0, 35.0, 0.0],
    };
    cfg.scene.vehicles.push(VehicleSpec {
        entry_time: 2.5,
        speed: 10.0,
        lane: 1,
        extents: [1.8, 4.5, 1.4],
        dropout_frames: vec![],
    });
    cfg
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_parsable_frames_and_truth() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&igdbn(&["simulate", "--out-dir", "sim"], tmp.path()));
    let sim = tmp.path().join("sim");
    let frames = load_frames(&sim.join("frames.txt")).unwrap();
    assert_eq!(frames.len(), SceneConfig::default().frame_count());
    let truth = io::load_tracks(&sim.join("truth.tracks")).unwrap();
    assert_eq!(truth.len(), 2);
    assert!(sim.join("run.json").exists());
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&igdbn(&["--seed", "5", "simulate", "--out-dir", "a"], tmp.path()));
    ok(&igdbn(&["simulate", "--seed", "5", "--out-dir", "b"], tmp.path()));
    ok(&igdbn(&["simulate", "--seed", "6", "--out-dir", "c"], tmp.path()));
    let a = files(&tmp.path().join("a"));
    assert_eq!(a, files(&tmp.path().join("b")));
    assert_ne!(a, files(&tmp.path().join("c")));
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = igdbn(&["simulate", "--config", "does-not-exist.toml"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does-not-exist.toml"));
}

#[test]
fn bad_config_and_usage_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("typo.toml"), "[gng]\nmax_node = 4\n").unwrap();
    assert_eq!(code(&igdbn(&["simulate", "--config", "typo.toml"], tmp.path())), 2);
    assert_eq!(code(&igdbn(&["train", "--frames", "a", "--tracks", "b"], tmp.path())), 2);
    assert_eq!(code(&igdbn(&["train"], tmp.path())), 2);
}

#[test]
fn out_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_igdbn"))
        .arg("simulate")
        .current_dir(tmp.path())
        .env("IGDBN_OUT_DIR", "from-env")
        .output()
        .unwrap();
    ok(&out);
    assert!(tmp.path().join("from-env/frames.txt").exists());
}

#[test]
fn two_vehicle_scene_trains_two_normal_models() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "two.toml", &two_vehicle_config());
    ok(&igdbn(&["simulate", "--config", "two.toml", "--out-dir", "sim"], tmp.path()));
    ok(&igdbn(
        &["train", "--config", "two.toml", "--frames", "sim/frames.txt", "--out-dir", "store"],
        tmp.path(),
    ));
    let store = ModelStore::load(&tmp.path().join("store")).unwrap();
    assert_eq!(store.models.len(), 2);
    assert!(store.models.iter().all(|m| m.model_id < DUMMY_ID_BASE));
    assert!(store.book.len() > 1);

    // a training track tested against the store picks its own model
    ok(&igdbn(
        &["test", "--config", "two.toml", "--tracks", "store/tracks.tracks", "--store", "store", "--out-dir", "res"],
        tmp.path(),
    ));
    let sels: Vec<TrackSelection> =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("res/selection.json")).unwrap()).unwrap();
    assert_eq!(sels.len(), 2);
    for s in &sels {
        assert_eq!(s.report.selected, s.track_id);
    }
}

#[test]
fn occluded_scene_adds_a_dummy_model_and_retrains_identically() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&igdbn(&["simulate", "--out-dir", "sim"], tmp.path()));
    for dir in ["s1", "s2"] {
        ok(&igdbn(&["train", "--frames", "sim/frames.txt", "--out-dir", dir], tmp.path()));
    }
    let store = ModelStore::load(&tmp.path().join("s1")).unwrap();
    assert!(store.models.iter().any(|m| m.model_id >= DUMMY_ID_BASE));
    assert_eq!(files(&tmp.path().join("s1")), files(&tmp.path().join("s2")));
    assert_eq!(store.manifest.config_hash, RunConfig::default().hash());
}

#[test]
fn empty_frames_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text: String = (0..10).map(|i| format!("frame {}\n", f64::from(i) * 0.1)).collect();
    std::fs::write(tmp.path().join("empty.txt"), text).unwrap();
    let out = igdbn(&["train", "--frames", "empty.txt", "--out-dir", "s"], tmp.path());
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_or_corrupt_store_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&igdbn(&["simulate", "--out-dir", "sim"], tmp.path()));
    assert_eq!(
        code(&igdbn(&["test", "--frames", "sim/frames.txt", "--store", "nowhere"], tmp.path())),
        4
    );
    ok(&igdbn(&["train", "--frames", "sim/frames.txt", "--out-dir", "store"], tmp.path()));
    std::fs::write(tmp.path().join("store/models/55.model"), "{}").unwrap();
    assert_eq!(
        code(&igdbn(&["test", "--frames", "sim/frames.txt", "--store", "store"], tmp.path())),
        4
    );
}

#[test]
fn summary_agrees_with_the_log_and_plots_match() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&igdbn(&["simulate", "--out-dir", "sim"], tmp.path()));
    ok(&igdbn(&["train", "--frames", "sim/frames.txt", "--out-dir", "store"], tmp.path()));

    // same scene with the car hidden for longer than in training
    let mut cfg = RunConfig::default();
    cfg.scene.vehicles[0].dropout_frames = vec![[23, 27]];
    write_config(tmp.path(), "longer.toml", &cfg);
    ok(&igdbn(&["simulate", "--config", "longer.toml", "--out-dir", "sim2"], tmp.path()));
    ok(&igdbn(&["test", "--frames", "sim2/frames.txt", "--store", "store", "--out-dir", "res"], tmp.path()));

    let res = tmp.path().join("res");
    let log_path = res.join("inference.log");
    let steps = io::parse_inference_log(&std::fs::read_to_string(&log_path).unwrap(), &log_path).unwrap();
    let summary: Summary = serde_json::from_str(&std::fs::read_to_string(res.join("summary.json")).unwrap()).unwrap();
    let anomalies = steps.iter().filter(|s| s.anomaly).count();
    assert_eq!(summary.total_frames, steps.len());
    assert_eq!(summary.anomaly_count, anomalies);
    assert_eq!(summary.anomaly_rate, anomalies as f64 / steps.len() as f64);
    let unknown: Vec<f64> = steps.iter().filter(|s| s.estimated_word.is_none()).map(|s| s.timestamp).collect();
    assert!(!unknown.is_empty(), "the longer blockage should produce untrained words");
    assert_eq!(summary.unknown_word_timestamps, unknown);

    ok(&igdbn(&["plot", "res", "store", "--out-dir", "fig"], tmp.path()));
    let timeline = std::fs::read_to_string(tmp.path().join("fig/timeline.svg")).unwrap();
    assert_eq!(timeline.matches(r#"class="step""#).count(), steps.len());
    assert!(tmp.path().join("fig/model_1000_tm.svg").exists());
    assert!(tmp.path().join("fig/errors_track_1.svg").exists());
}

#[test]
fn plot_rejects_unknown_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("notes.txt"), "hello").unwrap();
    assert_eq!(code(&igdbn(&["plot", "notes.txt"], tmp.path())), 2);
    std::fs::write(tmp.path().join("other.json"), "{\"a\": 1}").unwrap();
    assert_eq!(code(&igdbn(&["plot", "other.json"], tmp.path())), 2);
}
