use std::path::Path;
use std::process::{Command, Output};

fn objreloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objreloc")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    let cfg = r#"{
        "seed": 21,
        "runs": 1,
        "rs": [{ "view_change_deg": 90.0, "frame_count": 3 }]
    }"#;
    std::fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn simulate_build_and_relocalise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();

    let out = objreloc(&["simulate", "--config", &cfg, "--out", &d("run0")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["scene.json", "keyframes.jsonl", "lost.jsonl"] {
        assert!(dir.path().join("run0").join(f).exists(), "{f}");
    }

    let out = objreloc(&[
        "build-map",
        "--config",
        &cfg,
        "--scene",
        &d("run0/scene.json"),
        "--detections",
        &d("run0/keyframes.jsonl"),
        "--map",
        &d("map.json"),
        "--surface",
        &d("surface.bin"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = objreloc(&[
        "relocalise",
        "--config",
        &cfg,
        "--map",
        &d("map.json"),
        "--surface",
        &d("surface.bin"),
        "--detections",
        &d("run0/lost.jsonl"),
        "--dump-adjacency",
        &d("adjacency.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["results"].as_array().unwrap().len(), 3);
    assert_eq!(doc["evaluation"]["success_rate_at"].as_array().unwrap().len(), 3);
    let dump: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d("adjacency.json")).unwrap()).unwrap();
    assert_eq!(dump.as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());

    assert_eq!(code(&objreloc(&["--help"])), 0);
    assert_eq!(code(&objreloc(&["no-such-command"])), 1);

    let out = objreloc(&["bench", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/cfg.json"));

    let out = objreloc(&["bench", "--config", &cfg, "--w1", "-1"]);
    assert_eq!(code(&out), 1);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"noise": {"sigma_centroid": "big"}}"#).unwrap();
    let out = objreloc(&["bench", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise.sigma_centroid"));

    let out = objreloc(&["simulate", "--config", &cfg, "--run", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}
