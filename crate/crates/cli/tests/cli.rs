use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn vgfne(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vgfne"))
        .args(args)
        .current_dir(cwd)
        .env_remove("VGFNE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_grid(dir: &Path) -> PathBuf {
    let o = vgfne(&["grid", "--rows", "2", "--cols", "2", "--horizon", "8", "-o", "spec.json"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("spec.json")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn valid_grid_spec_passes_validation() {
    let tmp = TempDir::new().unwrap();
    small_grid(tmp.path());
    let o = vgfne(&["validate", "spec.json"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn zero_input_weight_fails_validation_by_name() {
    let tmp = TempDir::new().unwrap();
    let spec = small_grid(tmp.path());
    let mut doc = read_json(&spec);
    for w in doc["w_u"].as_array_mut().unwrap() {
        for row in w.as_array_mut().unwrap() {
            for v in row.as_array_mut().unwrap() {
                *v = 0.0.into();
            }
        }
    }
    fs::write(tmp.path().join("bad.json"), doc.to_string()).unwrap();
    let o = vgfne(&["validate", "bad.json"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("W_u[0] full column rank"), "{}", stderr(&o));
}

#[test]
fn malformed_json_is_a_parse_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("broken.json"), "{\n  \"num_players\": 2,\n  oops\n}").unwrap();
    let o = vgfne(&["validate", "broken.json"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let o = vgfne(&["validate", "nope.json"], tmp.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn oversized_step_is_refused_before_iterating() {
    let tmp = TempDir::new().unwrap();
    small_grid(tmp.path());
    let o = vgfne(&["seek", "spec.json", "-o", "run", "--eta", "1e6"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("admissible"), "{}", stderr(&o));
    assert!(!tmp.path().join("run/iterates.jsonl").exists());
}

#[test]
fn seek_is_reproducible_and_embeds_config() {
    let tmp = TempDir::new().unwrap();
    small_grid(tmp.path());
    let args = |out| ["seek", "spec.json", "-o", out, "--max-updates", "15", "--checkpoint-every", "5"];
    for out in ["a", "b"] {
        let o = vgfne(&args(out), tmp.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = fs::read(tmp.path().join("a/response.json")).unwrap();
    let b = fs::read(tmp.path().join("b/response.json")).unwrap();
    assert_eq!(a, b);

    let response = read_json(&tmp.path().join("a/response.json"));
    assert_eq!(response["config"]["seeker"]["max_updates"], 15);
    let constants = read_json(&tmp.path().join("a/constants.json"));
    assert_eq!(constants["updates"], 15);
    let rate = constants["predicted_rate"].as_f64().unwrap();
    assert!(rate > 0.0 && rate < 1.0);
    let log = fs::read_to_string(tmp.path().join("a/iterates.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 15);
    let objectives = fs::read_to_string(tmp.path().join("a/objectives.csv")).unwrap();
    assert!(objectives.starts_with("update,J0,J1,J2,J3,rel_step"));
    let checkpoints: Vec<_> = fs::read_dir(tmp.path().join("a/checkpoints")).unwrap().collect();
    assert_eq!(checkpoints.len(), 3);
}

#[test]
fn thread_cap_from_flag_or_environment() {
    let tmp = TempDir::new().unwrap();
    small_grid(tmp.path());
    let o = vgfne(&["--threads", "1", "seek", "spec.json", "-o", "one", "--max-updates", "3"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_vgfne"))
        .args(["seek", "spec.json", "-o", "two", "--max-updates", "3"])
        .current_dir(tmp.path())
        .env("VGFNE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(tmp.path().join("one/response.json")).unwrap(),
        fs::read(tmp.path().join("two/response.json")).unwrap()
    );
}

#[test]
fn inputs_are_never_overwritten() {
    let tmp = TempDir::new().unwrap();
    small_grid(tmp.path());
    fs::create_dir(tmp.path().join("out")).unwrap();
    fs::copy(tmp.path().join("spec.json"), tmp.path().join("out/response.json")).unwrap();
    let before = fs::read(tmp.path().join("out/response.json")).unwrap();
    let o = vgfne(&["seek", "out/response.json", "-o", "out", "--max-updates", "2"], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(fs::read(tmp.path().join("out/response.json")).unwrap(), before);
}

#[test]
fn zero_noise_simulation_is_all_zero() {
    let tmp = TempDir::new().unwrap();
    small_grid(tmp.path());
    let o = vgfne(&["seek", "spec.json", "-o", "run", "--max-updates", "5"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = vgfne(
        &["simulate", "spec.json", "run/response.json", "-o", "sim", "--steps", "40", "--zero-noise"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["closed_loop.csv", "open_loop.csv"] {
        let text = fs::read_to_string(tmp.path().join("sim").join(name)).unwrap();
        assert_eq!(text.lines().count(), 41);
        for line in text.lines().skip(1) {
            let mut cells = line.split(',');
            cells.next();
            assert!(cells.all(|c| c.parse::<f64>().unwrap() == 0.0), "{line}");
        }
    }
    let stats = read_json(&tmp.path().join("sim/stats.json"));
    assert_eq!(stats["closed_loop"]["constraints"]["joint"], 1.0);
    assert_eq!(stats["config"]["noise"]["kind"], "zero");
}

#[test]
fn impulse_writes_traces_and_delay_table() {
    let tmp = TempDir::new().unwrap();
    small_grid(tmp.path());
    let o = vgfne(&["seek", "spec.json", "-o", "run", "--max-updates", "5"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = vgfne(
        &["impulse", "spec.json", "run/response.json", "-o", "imp", "--channel", "1", "--channel", "3"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(tmp.path().join("imp/impulse_ch3.csv")).unwrap();
    assert_eq!(trace.lines().count(), 8 + 10 + 1);
    let delays = fs::read_to_string(tmp.path().join("imp/delays.csv")).unwrap();
    assert_eq!(delays.lines().next().unwrap(), "channel,player,state_distance,first_input");
    assert_eq!(delays.lines().count(), 1 + 2 * 4);
    let o = vgfne(&["impulse", "spec.json", "run/response.json", "-o", "imp", "--channel", "99"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn bench_grid_reports_joint_satisfaction() {
    let tmp = TempDir::new().unwrap();
    let o = vgfne(
        &["bench-grid", "--rows", "2", "--cols", "2", "--horizon", "8", "--steps", "300", "-o", "bench"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats = read_json(&tmp.path().join("bench/stats.json"));
    let joint = stats["joint_satisfaction"]["closed_loop"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&joint));
    assert_eq!(stats["updates"], 29);
    assert_eq!(stats["config"]["grid"]["rows"], 2);
    for name in [
        "spec.json",
        "response.json",
        "iterates.jsonl",
        "objectives.csv",
        "closed_loop.csv",
        "open_loop.csv",
        "impulse_center.csv",
        "delays.csv",
        "constants.json",
    ] {
        assert!(tmp.path().join("bench").join(name).exists(), "{name}");
    }
    let o = vgfne(&["validate", "bench/spec.json"], tmp.path());
    assert_eq!(code(&o), 0);
}
