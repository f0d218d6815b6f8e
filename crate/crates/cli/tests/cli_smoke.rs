use std::path::Path;
use std::process::Command;

const TOY: &str = r#"
seed = 11

[dataset]
source = "synthetic"
kind = { clustered = { dim = 16 } }
n_base = 1000
n_queries = 40

[pq]
m = 8
iters = 8
calib_sample = 200
calib_pairs = 20

[graph]
r = 12
l_build = 32

[search]
l = [16, 32]

[mapping]
l = 32
trace_samples = 100

[sweep]
queue_sizes = [2, 8]
hot_fractions = [0.0, 0.05]
error_rates = [0.0, 1e-3]
"#;

fn nsann(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nsann"))
        .args(["--config", dir.join("toy.toml").to_str().unwrap(), "--out", dir.join("out").to_str().unwrap(), "-q"])
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.toml"), TOY).unwrap();
    let out = nsann(dir.path(), &["run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    for f in [
        "manifest.json",
        "base.fvecs",
        "queries.fvecs",
        "graph.bin",
        "graph_gap.bin",
        "pq_model.bin",
        "pq_codes.bin",
        "beta.json",
        "results.jsonl",
        "search.csv",
        "layout.json",
        "traces.bin",
        "sim_report.json",
        "sim.csv",
        "eval.json",
    ] {
        assert!(o.join(f).exists(), "missing {f}");
    }
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("eval.json")).unwrap()).unwrap();
    let recall = eval[1]["recall"].as_f64().unwrap();
    assert!(recall > 0.8, "recall {recall}");

    let before = std::fs::read(o.join("graph.bin")).unwrap();
    let mtime = std::fs::metadata(o.join("graph.bin")).unwrap().modified().unwrap();
    let again = nsann(dir.path(), &["build"]);
    assert!(again.status.success());
    assert_eq!(std::fs::read(o.join("graph.bin")).unwrap(), before);
    assert_eq!(std::fs::metadata(o.join("graph.bin")).unwrap().modified().unwrap(), mtime, "cached stage was rebuilt");

    for kind in ["recall_qps", "queue_size", "hot_nodes", "bit_error", "traffic"] {
        let s = nsann(dir.path(), &["sweep", kind]);
        assert!(s.status.success(), "{kind}: {}", String::from_utf8_lossy(&s.stderr));
        let csv = std::fs::read_to_string(o.join(format!("sweep_{kind}.csv"))).unwrap();
        assert!(csv.lines().count() >= 3, "{kind}");
    }
}

#[test]
fn failures_emit_a_json_error_record() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.toml"), "[graph]\nr = 4\n").unwrap();
    let out = nsann(dir.path(), &["build"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "malformed");

    let out = Command::new(env!("CARGO_BIN_EXE_nsann")).args(["gen"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid_param");

    std::fs::write(dir.path().join("toy.toml"), "seed = 1\n").unwrap();
    let out = nsann(dir.path(), &["sweep", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}
