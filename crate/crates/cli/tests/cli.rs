use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

fn poinav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poinav"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let one_room = fixture("scenes/one_room.json");
    let ok = poinav(&["run", "--scene", s(&one_room), "--timing", "off"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("success"));

    assert_eq!(code(&poinav(&["run", "--scene", s(&one_room), "--policy", "teleport"])), 2);
    assert_eq!(code(&poinav(&["batch", "--scenes", s(&one_room), "--seeds", "3..1"])), 2);
    assert_eq!(code(&poinav(&["run", "--scene", "/nonexistent/scene.json"])), 3);
    assert_eq!(code(&poinav(&["validate-scene", s(&fixture("scenes/unreachable_goal.json"))])), 4);
    let remote = poinav(&["--offline", "run", "--scene", s(&one_room), "--policy", "remote-vlm"]);
    assert_eq!(code(&remote), 5);
}

#[test]
fn validate_scene_reports_each_file() {
    let o = poinav(&["validate-scene", s(&fixture("scenes"))]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.starts_with("ok ")).count(), 2, "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("invalid ")).count(), 1, "{out}");
    assert_eq!(code(&o), 4);
    assert_eq!(code(&poinav(&["validate-scene", s(&fixture("suite10"))])), 0);
}

#[test]
fn run_writes_outputs_and_render_draws_every_poi() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = poinav(&[
        "run",
        "--scene",
        s(&fixture("scenes/artwork_trap.json")),
        "--out",
        s(&out),
        "--timing",
        "off",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.json", "trajectory.jsonl", "record.json", "map.pgm"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let record: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("record.json")).unwrap()).unwrap();
    assert_eq!(record["success"], true);
    assert!(std::fs::read(out.join("map.pgm")).unwrap().starts_with(b"P5\n"));

    let svg = dir.path().join("trace.svg");
    let pois = dir.path().join("pois.json");
    let o = poinav(&[
        "render",
        "--trace",
        s(&out.join("trace.json")),
        "--out",
        s(&svg),
        "--poi-json",
        s(&pois),
        "--scene",
        s(&fixture("scenes/artwork_trap.json")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(svg).unwrap();
    let pois: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(pois).unwrap()).unwrap();
    assert!(!pois.is_empty());
    for p in &pois {
        let id = p["id"].as_u64().unwrap();
        assert!(svg.contains(&format!("id=\"poi-{id}\"")), "poi {id} not drawn");
    }
    assert!(svg.contains("id=\"object-7\""));
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let o = poinav(&[
            "gen-data",
            "--scenes",
            s(&fixture("suite10")),
            "--episodes",
            "4",
            "--seed",
            "2",
            "--jobs",
            jobs,
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("dataset.jsonl")).unwrap()
    };
    let a = run("a", "1");
    assert!(!a.is_empty());
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
}

#[test]
fn batch_output_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |jobs: &str| {
        let out = dir.path().join(format!("j{jobs}"));
        let o = poinav(&[
            "batch",
            "--scenes",
            s(&fixture("suite10")),
            "--seeds",
            "0..2",
            "--jobs",
            jobs,
            "--policy",
            "epsilon",
            "--timing",
            "off",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("1"), run("4"));
    for f in ["report.json", "report.txt", "episodes.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let names = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d.join("traces")).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    assert_eq!(names(&a).len(), 20);
    assert_eq!(names(&a), names(&b));
    for n in names(&a) {
        let p = Path::new("traces").join(&n);
        assert_eq!(std::fs::read(a.join(&p)).unwrap(), std::fs::read(b.join(&p)).unwrap(), "{n:?}");
    }
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "max_steps = 3\ntiming = \"off\"\n").unwrap();
    let out = dir.path().join("run");
    let o = poinav(&[
        "--config",
        s(&cfg),
        "run",
        "--scene",
        s(&fixture("suite10/suite10_00.json")),
        "--max-steps",
        "400",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let record: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("record.json")).unwrap()).unwrap();
    assert!(record["steps"].as_u64().unwrap() <= 3, "{record}");
    assert_eq!(record["wall_time"], 0.0);

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = poinav(&["--config", s(&cfg), "run", "--scene", s(&fixture("scenes/one_room.json"))]);
    assert_eq!(code(&o), 2);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("no_such_key"), "{stderr}");
}

#[test]
fn train_toy_on_the_fixed_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.json");
    let o = poinav(&["train-toy", "--fixed", "--iters", "150", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    let curve = report["expected_reward"].as_array().unwrap();
    assert_eq!(curve.len(), 150);
    assert!(curve.last().unwrap().as_f64().unwrap() > curve[0].as_f64().unwrap());
    assert_eq!(code(&poinav(&["train-toy"])), 2);
}
