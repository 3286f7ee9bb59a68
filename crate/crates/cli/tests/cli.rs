use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL_SCENE: &str = r#"{
    "size": [24.0, 24.0, 8.0],
    "buildings": 3,
    "footprint": [3.0, 6.0],
    "height": [2.0, 8.0],
    "d_max": 12.0,
    "scan_samples": 4000,
    "margin": 4.0
}"#;

fn bbs3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbs3d"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates the small scene for `seed` into `dir/scene<seed>`.
fn scene(dir: &TempDir, seed: u64) -> PathBuf {
    let cfg = dir.path().join("scene.json");
    fs::write(&cfg, SMALL_SCENE).unwrap();
    let out = dir.path().join(format!("scene{seed}"));
    let o = bbs3d(&[
        "gen-scene",
        "--out",
        s(&out),
        "--seed",
        &seed.to_string(),
        "--scene-config",
        s(&cfg),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn build_map_reports_levels_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let sc = scene(&dir, 1);
    let a = dir.path().join("a.map");
    let b = dir.path().join("b.map");
    for out in [&a, &b] {
        let o = bbs3d(&[
            "build-map",
            "--map",
            s(&sc.join("map.xyz")),
            "--out",
            s(out),
            "--lmax",
            "4",
            "--json",
        ]);
        assert_eq!(code(&o), 0);
        let v = stdout_json(&o);
        assert_eq!(v["level_count"], 5);
        assert_eq!(v["levels"].as_array().unwrap().len(), 5);
        assert!(v["create_voxel_maps_ms"].as_f64().unwrap() >= 0.0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn build_map_reads_ply() {
    let dir = TempDir::new().unwrap();
    let ply = dir.path().join("cloud.ply");
    let mut text = String::from("ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nend_header\n");
    for p in ["0 0 0", "1 0 0", "0 1 0", "5 5 2"] {
        text.push_str(p);
        text.push('\n');
    }
    fs::write(&ply, text).unwrap();
    let out = dir.path().join("cloud.map");
    let o = bbs3d(&["build-map", "--map", s(&ply), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("levels: 7"));
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.ply");
    let o = bbs3d(&[
        "build-map",
        "--map",
        s(&missing),
        "--out",
        s(&dir.path().join("x.map")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.ply"));
    let o = bbs3d(&["localize", "--map", s(&missing), "--scan", s(&missing)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.ply"));
}

#[test]
fn gen_scene_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("scene.json");
    fs::write(&cfg, SMALL_SCENE).unwrap();
    let mut outs = Vec::new();
    for name in ["x", "y"] {
        let out = dir.path().join(name);
        let o = bbs3d(&[
            "gen-scene",
            "--out",
            s(&out),
            "--seed",
            "3",
            "--scene-config",
            s(&cfg),
        ]);
        assert_eq!(code(&o), 0);
        outs.push(out);
    }
    for f in ["map.xyz", "scan.xyz", "scene.json"] {
        assert_eq!(
            fs::read(outs[0].join(f)).unwrap(),
            fs::read(outs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let meta: Value =
        serde_json::from_slice(&fs::read(outs[0].join("scene.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert!(meta["feasible_fraction"].as_f64().unwrap() >= 0.95);
}

#[test]
fn localize_self_scene() {
    let dir = TempDir::new().unwrap();
    let sc = scene(&dir, 2);
    let map = dir.path().join("m.map");
    assert_eq!(
        code(&bbs3d(&[
            "build-map",
            "--map",
            s(&sc.join("map.xyz")),
            "--out",
            s(&map),
            "--lmax",
            "3"
        ])),
        0
    );
    let out = dir.path().join("result.json");
    let o = bbs3d(&[
        "localize",
        "--map",
        s(&map),
        "--scan",
        s(&sc.join("scan.xyz")),
        "--downsample-target",
        "300",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["matched"], true);
    assert!(v["score"].as_u64().unwrap() >= v["score_threshold"].as_u64().unwrap());
    assert_eq!(v["pose"]["xyz"].as_array().unwrap().len(), 3);
    assert_eq!(v["pose"]["rpy"].as_array().unwrap().len(), 3);
    assert_eq!(v["pose"]["matrix_4x4"].as_array().unwrap().len(), 4);
    for k in [
        "create_voxel_maps_ms",
        "set_source_ms",
        "initial_nodes_ms",
        "find_best_score_ms",
        "pop_remaining_queue_ms",
        "nodes_generated",
        "nodes_pruned",
        "batches_flushed",
    ] {
        assert!(v["stats"].get(k).is_some(), "{k}");
    }
    let phases: Vec<&str> = v["breakdown"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|g| {
            g["phases"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| p[0].as_str().unwrap())
        })
        .collect();
    assert_eq!(
        phases,
        [
            "Create voxel maps",
            "Set source point cloud",
            "Initial nodes calculation",
            "Find best score",
            "Pop remaining queue"
        ]
    );
    assert_eq!(v["breakdown"][0]["name"], "Preprocessing");
    assert_eq!(v["breakdown"][1]["name"], "Localization");
    // map file values replace the default l_max; the echo shows what ran
    assert_eq!(v["config"]["l_max"], 3);
    assert_eq!(v["config"]["downsample_target"], 300);
    let written: Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(written, v);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Pop remaining queue"));
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let sc = scene(&dir, 2);
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"l_max": 2, "batch_size": 64, "strategy": "dfs", "branch_mode": "trans", "downsample_target": 300}"#,
    )
    .unwrap();
    let o = bbs3d(&[
        "localize",
        "--map",
        s(&sc.join("map.xyz")),
        "--scan",
        s(&sc.join("scan.xyz")),
        "--config",
        s(&cfg),
        "--strategy",
        "bfs",
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["config"]["strategy"], "bfs");
    assert_eq!(v["config"]["branch_mode"], "trans");
    assert_eq!(v["config"]["batch_size"], 64);
    assert_eq!(v["config"]["l_max"], 2);
    assert!(o.stderr.is_empty());
}

#[test]
fn disjoint_scan_exits_3() {
    let dir = TempDir::new().unwrap();
    let sc = scene(&dir, 4);
    let scan = dir.path().join("far.xyz");
    let pts: String = (0..50).map(|i| format!("0 0 {}\n", 200 + i)).collect();
    fs::write(&scan, pts).unwrap();
    let o = bbs3d(&[
        "localize",
        "--map",
        s(&sc.join("map.xyz")),
        "--scan",
        s(&scan),
        "--lmax",
        "2",
        "--branch",
        "trans",
    ]);
    assert_eq!(code(&o), 3);
    assert_eq!(stdout_json(&o)["matched"], false);
}

#[test]
fn degenerate_scan_exits_4() {
    let dir = TempDir::new().unwrap();
    let sc = scene(&dir, 4);
    let scan = dir.path().join("origin.xyz");
    fs::write(&scan, "0 0 0\n0 0 0\n").unwrap();
    let o = bbs3d(&[
        "localize",
        "--map",
        s(&sc.join("map.xyz")),
        "--scan",
        s(&scan),
        "--lmax",
        "2",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_exit_5() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&bbs3d(&["localize", "--strategy", "random"])), 5);
    assert_eq!(
        code(&bbs3d(&[
            "localize",
            "--batch-size",
            "0",
            "--map",
            "x",
            "--scan",
            "y"
        ])),
        5
    );
    assert_eq!(code(&bbs3d(&["frobnicate"])), 5);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"l_maxx": 3}"#).unwrap();
    let o = bbs3d(&["localize", "--config", s(&bad), "--map", "x", "--scan", "y"]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("l_maxx"));
    assert_eq!(code(&bbs3d(&["localize", "--scan", "y"])), 5);
    assert_eq!(code(&bbs3d(&["--help"])), 0);
}

#[test]
fn oracle_equals_trans_only_localize() {
    let dir = TempDir::new().unwrap();
    let sc = scene(&dir, 5);
    let (map, scan) = (sc.join("map.xyz"), sc.join("scan.xyz"));
    let common = [
        "--map",
        s(&map),
        "--scan",
        s(&scan),
        "--lmax",
        "2",
        "--branch",
        "trans",
        "--downsample-target",
        "300",
        "--json",
    ];
    let oracle = bbs3d(&[&["oracle"], &common[..]].concat());
    assert_eq!(
        code(&oracle),
        0,
        "{}",
        String::from_utf8_lossy(&oracle.stderr)
    );
    let loc = bbs3d(&[&["localize"], &common[..]].concat());
    assert_eq!(code(&loc), 0);
    let (o, l) = (stdout_json(&oracle), stdout_json(&loc));
    assert_eq!(o["score"], l["score"]);
    assert!(o["argmax_count"].as_u64().unwrap() >= 1);
    assert!(o["leaves"].as_u64().unwrap() > 0);
}

#[test]
fn benchmark_rows_per_scene_and_config() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("scene.json");
    fs::write(&cfg, SMALL_SCENE).unwrap();
    let report = dir.path().join("report.jsonl");
    let o = bbs3d(&[
        "benchmark",
        "--scenes",
        "2",
        "--configs",
        "a,i",
        "--scene-config",
        s(&cfg),
        "--lmax",
        "2",
        "--downsample-target",
        "300",
        "--multi-workers",
        "2",
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&report).unwrap();
    let rows: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["config"], "a");
    assert_eq!(rows[1]["config"], "i");
    assert_eq!(rows[2]["scene"], 1);
    assert!(rows[1]["label"]
        .as_str()
        .unwrap()
        .contains("gpu -> multi x2"));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("median [ms]"));
    assert!(table.contains("Pop remaining queue"));
    assert_eq!(code(&bbs3d(&["benchmark", "--configs", "z"])), 5);
}
