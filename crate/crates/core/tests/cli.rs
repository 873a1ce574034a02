use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_scene-cluster");

const SMALL: &str = r#"
seed = 3
validation_ids = ["p000"]

[synth]
participants = 3
images = [8, 12]
environments = [2, 3]

[extractor]
backend = "random-projection"
resize = 32

[sweep]
alphas = [0.0, 0.5, 1.0]
layers = [2, 4]
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), config).unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.path("config.toml");
        Command::new(BIN)
            .args(args)
            .arg("--config")
            .arg(&config)
            .env_remove("SCENE_CLUSTER_CACHE")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> serde_json::Value {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice(&out.stdout).unwrap()
    }
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line on stderr");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn full_pipeline_writes_every_output() {
    let ws = Workspace::new(SMALL);
    for stage in ["synth", "preprocess", "extract", "cluster", "evaluate", "sweep"] {
        let s = ws.ok(&[stage]);
        assert_eq!(s["stage"], stage);
    }
    assert!(ws.path("synth/manifest.csv").exists());
    assert!(ws.path("cache/preprocess/p001/img000.global.png").exists());
    assert!(ws.path("cache/preprocess/p001/export_list.tsv").exists());
    assert!(ws.path("cache/extract/p001/img000.local.4.ftns").exists());

    let c: serde_json::Value = serde_json::from_str(&read(&ws.path("cache/cluster/p001/proposed.json"))).unwrap();
    for key in ["participant_id", "method", "params", "labels", "exemplars", "converged"] {
        assert!(c.get(key).is_some(), "cluster JSON lacks {key}");
    }
    assert_eq!(c["method"], "proposed");
    assert_eq!(c["params"]["alpha"], 0.44);

    let report = read(&ws.path("cache/evaluate/proposed/report.csv"));
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("participant_id,ari,nmi,n_images,n_pred,n_true"));
    // p000 is held out for validation
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| !r.starts_with("p000")));
    let summary: serde_json::Value =
        serde_json::from_str(&read(&ws.path("cache/evaluate/proposed/summary.json"))).unwrap();
    assert_eq!(summary["participants"], 2);
    assert_eq!(summary["ap_preference"], "median");

    let grid = read(&ws.path("cache/sweep/grid_ari.csv"));
    assert_eq!(grid.lines().count(), 4);
    assert!(ws.path("cache/sweep/heatmap.png").exists());
    let best: serde_json::Value = serde_json::from_str(&read(&ws.path("cache/sweep/best.json"))).unwrap();
    assert_eq!(best["participants"], serde_json::json!(["p000"]));
}

#[test]
fn reruns_are_no_ops_unless_forced() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["synth"]);
    let first = ws.ok(&["preprocess"]);
    assert_eq!(first["ran"], 3);
    let png = ws.path("cache/preprocess/p000/img000.global.png");
    let before = std::fs::metadata(&png).unwrap().modified().unwrap();
    let again = ws.ok(&["preprocess"]);
    assert_eq!((again["ran"].as_u64(), again["skipped"].as_u64()), (Some(0), Some(3)));
    assert_eq!(std::fs::metadata(&png).unwrap().modified().unwrap(), before);
    let forced = ws.ok(&["preprocess", "--force"]);
    assert_eq!(forced["ran"], 3);
}

#[test]
fn missing_stages_are_named() {
    let ws = Workspace::new(SMALL);
    let out = ws.run(&["cluster"]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_line(&out);
    assert_eq!(e["error"]["kind"], "missing_stage");
    assert_eq!(e["error"]["stage"], "cluster");
    assert!(e["error"]["message"].as_str().unwrap().contains("synth"));

    ws.ok(&["synth"]);
    let out = ws.run(&["extract"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out)["error"]["message"].as_str().unwrap().contains("`preprocess`"));

    ws.ok(&["preprocess"]);
    let out = ws.run(&["cluster"]);
    assert!(error_line(&out)["error"]["message"].as_str().unwrap().contains("`extract`"));
    let out = ws.run(&["evaluate"]);
    assert!(error_line(&out)["error"]["message"].as_str().unwrap().contains("`cluster`"));
}

#[test]
fn pixel_baselines_skip_extraction() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["synth"]);
    for m in ["ap", "dbscan", "meanshift", "optics"] {
        ws.ok(&["cluster", "--method", m]);
        ws.ok(&["evaluate", "--method", m]);
        assert!(ws.path(&format!("cache/evaluate/{m}/report.csv")).exists());
    }
    let s: serde_json::Value = serde_json::from_str(&read(&ws.path("cache/evaluate/ap/summary.json"))).unwrap();
    assert_eq!(s["ap_preference"], "median");
    let s: serde_json::Value = serde_json::from_str(&read(&ws.path("cache/evaluate/optics/summary.json"))).unwrap();
    assert!(s.get("ap_preference").is_none());
    let c: serde_json::Value = serde_json::from_str(&read(&ws.path("cache/cluster/p002/dbscan.json"))).unwrap();
    assert_eq!(c["exemplars"], serde_json::json!([]));
}

#[test]
fn bad_config_is_a_config_error() {
    let ws = Workspace::new("seed = 1\n[cluster]\nalpha = 1.5\n");
    let out = ws.run(&["synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"]["kind"], "config");

    let ws = Workspace::new("sed = 1\n");
    let out = ws.run(&["synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["error"]["message"].as_str().unwrap().contains("sed"));
}

#[test]
fn cache_dir_can_be_overridden() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["synth"]);
    let elsewhere = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["preprocess", "--config"])
        .arg(ws.path("config.toml"))
        .env("SCENE_CLUSTER_CACHE", elsewhere.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(elsewhere.path().join("preprocess/p000/summary.json").exists());
    assert!(!ws.path("cache/preprocess").exists());
}

#[test]
fn dump_intermediates_writes_component_tables() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["synth"]);
    ws.ok(&["preprocess", "--dump-intermediates", "--jobs", "2"]);
    let table: serde_json::Value =
        serde_json::from_str(&read(&ws.path("cache/preprocess/p000/img000.components.json"))).unwrap();
    assert!(table.as_array().unwrap().len() >= 2);
}

#[test]
fn precomputed_backend_reads_exported_maps() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["synth"]);
    ws.ok(&["preprocess"]);
    // stand-in for the external exporter: write full maps for every listed image
    let ext = scene_cluster::features::RandomProjectionExtractor::new(3, 32);
    let layers = [scene_cluster::features::Layer::new(2).unwrap(), scene_cluster::features::Layer::new(4).unwrap()];
    for pid in ["p000", "p001", "p002"] {
        let list = scene_cluster::features::export::read_export_list(&ws.path(&format!("cache/preprocess/{pid}/export_list.tsv"))).unwrap();
        scene_cluster::features::export::export_activation_maps(&ext, pid, &list, &layers, &ws.path(&format!("tensors/{pid}"))).unwrap();
    }
    let cfg = SMALL.replace(
        "backend = \"random-projection\"\nresize = 32",
        "backend = \"precomputed\"\ntensor_dir = \"tensors\"",
    );
    std::fs::write(ws.path("config.toml"), &cfg).unwrap();
    ws.ok(&["extract"]);
    let direct = Workspace::new(SMALL);
    direct.ok(&["synth"]);
    direct.ok(&["preprocess"]);
    direct.ok(&["extract"]);
    // same maps through either backend give the same pooled vectors
    for f in ["img000.global.2.ftns", "img003.local.4.ftns"] {
        let a = std::fs::read(ws.path(&format!("cache/extract/p001/{f}"))).unwrap();
        let b = std::fs::read(direct.path(&format!("cache/extract/p001/{f}"))).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
