use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn csa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csa")).args(args).output().expect("binary runs")
}

fn tiny_config(extra: Value) -> Value {
    let mut cfg = json!({
        "gen_spec": {"num_videos": 10, "t": 16, "c_in": 6, "segments_per_video": [1, 2], "max_segment_len": 5},
        "model": {"hidden": 6, "c_out": 4},
        "training": {"epochs": 2, "seed": 1}
    });
    merge(&mut cfg, extra);
    cfg
}

fn merge(a: &mut Value, b: Value) {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn without_wall_clock(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_seconds");
    v
}

#[test]
fn run_writes_all_files_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &tiny_config(json!({})));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = csa(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.json", "history.jsonl", "metrics.csv", "losses.csv"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    assert_eq!(without_wall_clock(&a.join("report.json")), without_wall_clock(&b.join("report.json")));
    assert_eq!(fs::read(a.join("checkpoint.json")).unwrap(), fs::read(b.join("checkpoint.json")).unwrap());
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &tiny_config(json!({})));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(csa(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(csa(&["run", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "9"]).status.success());
    let rb = without_wall_clock(&b.join("report.json"));
    assert_eq!(rb["config"]["training"]["seed"], 9);
    assert_ne!(fs::read(a.join("checkpoint.json")).unwrap(), fs::read(b.join("checkpoint.json")).unwrap());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases = [
        tiny_config(json!({"csa": {"kernel_size": 4}})),
        tiny_config(json!({"csa": {"kernal_size": 3}})),
        json!({"training": {"epochs": 1}}),
    ];
    for (i, cfg) in cases.iter().enumerate() {
        let path = write_config(dir.path(), &format!("bad{i}.json"), cfg);
        let o = csa(&["run", "--config", &path, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    }
    let o = csa(&["run", "--config", dir.path().join("missing.json").to_str().unwrap(), "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(json!({"training": {"epochs": 50, "lr": 1e300, "weight_decay": 0.0}}));
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let o = csa(&["run", "--config", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn compare_keeps_input_order_and_checks_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (name, variant) in [("baseline", "NONE"), ("csa", "CSA")] {
        let cfg = tiny_config(json!({"name": name, "csa": {"variant": variant}}));
        let path = write_config(dir.path(), &format!("{name}.json"), &cfg);
        let out = dir.path().join(name);
        assert!(csa(&["run", "--config", &path, "--out", out.to_str().unwrap()]).status.success());
        runs.push(out.join("report.json").to_string_lossy().into_owned());
    }
    let cmp = dir.path().join("cmp");
    let o = csa(&["compare", &runs[1], &runs[0], &runs[1], "--out", cmp.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "run,0.3,0.4,0.5,0.6,0.7,Avg mAP,AUC");
    assert!(lines[1].starts_with("csa,") && lines[2].starts_with("baseline,"));
    assert_eq!(lines[1], lines[3]);
    let losses = fs::read_to_string(cmp.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().next().unwrap(), "run,epoch,train_loss,val_loss,val_mAP_avg");
    assert_eq!(losses.lines().count(), 1 + 3 * 2);

    let cfg = tiny_config(json!({"name": "other", "eval": {"tiou_thresholds": [0.5]}}));
    let path = write_config(dir.path(), "other.json", &cfg);
    let other = dir.path().join("other");
    assert!(csa(&["run", "--config", &path, "--out", other.to_str().unwrap()]).status.success());
    let o = csa(&["compare", &runs[0], other.to_str().unwrap(), "--out", cmp.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("threshold"));

    let o = csa(&["compare", &runs[0], "--out", cmp.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn gradcheck_passes() {
    let o = csa(&["gradcheck", "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ok"));
}

#[test]
fn sweep_preset_with_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_config(dir.path(), "base.json", &tiny_config(json!({"training": {"epochs": 1}})));
    let out = dir.path().join("tables");
    let o = csa(&["sweep", "--preset", "branches", "--config", &base, "--jobs", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("branches.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "Channel,Temporal,0.3,0.4,0.5,0.6,0.7,Avg mAP");
    assert_eq!(table.lines().count(), 4);

    let o = csa(&["sweep", "--preset", "nonexistent", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &tiny_config(json!({})));
    let data = dir.path().join("data.json");
    assert!(csa(&["generate", "--config", &cfg, "--out", data.to_str().unwrap()]).status.success());
    let ds: Value = serde_json::from_str(&fs::read_to_string(&data).unwrap()).unwrap();
    assert_eq!(ds["videos"].as_array().unwrap().len(), 10);

    let gts = json!([{"video_id": "a", "start": 0.0, "end": 10.0, "class_id": 0}]);
    let dets = json!([{"video_id": "a", "start": 0.0, "end": 10.0, "score": 0.9, "class_id": 0}]);
    let (g, d) = (dir.path().join("gt.json"), dir.path().join("det.json"));
    fs::write(&g, gts.to_string()).unwrap();
    fs::write(&d, dets.to_string()).unwrap();
    let o = csa(&["evaluate", "--detections", d.to_str().unwrap(), "--ground-truth", g.to_str().unwrap(), "--tious", "0.5,0.7"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["map"]["average"], 1.0);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        csa_core::experiment::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 2);
}
