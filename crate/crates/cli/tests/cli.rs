use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn t3former(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t3former")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn synth(dir: &Path) -> String {
    let spec = dir.join("spec.txt");
    fs::write(&spec, "num_graphs = 12\nnodes = 10\ntimesteps = 8\ncycle_density = 0, 2\n").unwrap();
    let data = dir.join("data");
    let out = t3former(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data.to_str().unwrap().to_string()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("run.txt");
    fs::write(&path, "epochs = 2\nfolds = 2\nhidden_dim = 8\nd_model = 8\nffn_dim = 16\nlayers = 1\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&t3former(&["--help"])), 0);
    assert_eq!(code(&t3former(&[])), 1);
    assert_eq!(code(&t3former(&["frobnicate"])), 1);
    assert_eq!(code(&t3former(&["stability", "--mode", "sideways"])), 1);
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = t3former(&["extract", "--data", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_window_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("cache");
    let out = t3former(&["extract", "--data", &data, "--out", out.to_str().unwrap(), "--delta", "2", "--sigma", "3"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn extract_writes_cache() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cache = dir.path().join("cache");
    let out = t3former(&["extract", "--data", &data, "--out", cache.to_str().unwrap(), "--bins", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let topo = fs::read_to_string(cache.join("topo.csv")).unwrap();
    assert!(topo.starts_with("graph_id,window_index,v,e,b0,b1\n"));
    let dos = fs::read_to_string(cache.join("dos.csv")).unwrap();
    assert!(dos.starts_with("graph_id,window_index,dos_0,dos_1,dos_2,dos_3,dos_4,empty_flag\n"));
}

#[test]
fn train_eval_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let config = small_config(dir.path());
    let run = dir.path().join("run");
    let out = t3former(&["train", "--data", &data, "--config", &config, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["model.json", "metrics.csv", "loss.csv", "timing.csv"] {
        assert!(run.join(file).exists(), "{file}");
    }
    let report = dir.path().join("attention.csv");
    let emb = dir.path().join("emb.csv");
    let out = t3former(&[
        "eval",
        "--model",
        run.join("model.json").to_str().unwrap(),
        "--data",
        &data,
        "--report",
        report.to_str().unwrap(),
        "--embeddings",
        emb.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("dataset,structural,topo,dos"));
    let row: Vec<f64> = lines.next().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    assert_eq!(fs::read_to_string(&emb).unwrap().lines().count(), 13);
}

#[test]
fn cv_prints_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let config = small_config(dir.path());
    let out = t3former(&["cv", "--data", &data, "--config", &config]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("fold,accuracy,final_loss\n"));
    assert!(text.contains("\nmean,"));
}

#[test]
fn sweep_marks_invalid_cells() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let config = small_config(dir.path());
    let out = t3former(&["sweep", "--data", &data, "--config", &config, "--deltas", "2,4", "--sigmas", "1,3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("2,3,NaN,NaN"));
}

#[test]
fn stability_csv() {
    let out = t3former(&["stability", "--mode", "spectral", "--trials", "10", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "trial,mode,magnitude,distance,ratio");
    assert_eq!(lines.len(), 12);
    assert!(lines[11].starts_with("summary,spectral,"));

    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let csv = dir.path().join("topo.csv");
    let out = t3former(&["stability", "--data", &data, "--mode", "topo", "--trials", "6", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 8);
}

#[test]
fn divergence_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let config = dir.path().join("huge.txt");
    fs::write(&config, "epochs = 3\nfolds = 2\nlr = 1e300\n").unwrap();
    let out = t3former(&["cv", "--data", &data, "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
