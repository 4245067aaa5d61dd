use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cloudsvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloudsvm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const PAIR: &str = "+1 1:1\n-1 1:-1\n";

fn blobs() -> String {
    let mut s = String::new();
    for i in 0..40 {
        let t = i as f64 * 0.37;
        let (label, cx) = if i % 2 == 0 { ("+1", 1.0) } else { ("-1", -1.0) };
        s.push_str(&format!("{label} 1:{} 2:{}\n", cx + 0.8 * t.sin(), 0.9 * (1.3 * t).cos()));
    }
    s
}

fn train(dir: &Path, data: &str, extra: &[&str]) -> Output {
    let data_path = dir.join("train.libsvm");
    fs::write(&data_path, data).unwrap();
    let out = dir.join("out");
    let mut args = vec![
        "train",
        "--data",
        data_path.to_str().unwrap(),
        "--format",
        "libsvm",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cloudsvm(&args)
}

#[test]
fn train_writes_artifacts_and_round_lines() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &blobs(), &["--l", "4", "--c", "1", "--kernel", "rbf:gamma=0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rounds: Vec<&str> = text.lines().filter(|l| l.starts_with("t=")).collect();
    assert!(!rounds.is_empty());
    let first: Vec<&str> = rounds[0].split(' ').collect();
    assert_eq!(first[0], "t=1");
    assert!(first[1].starts_with("risk=") && first[2].starts_with("acc=") && first[3].starts_with("svs="));
    let written: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("wrote ")).collect();
    assert_eq!(written.len(), 3);
    for p in written {
        assert!(Path::new(p).exists(), "{p}");
    }
    let trace = fs::read_to_string(dir.path().join("out/trace.csv")).unwrap();
    assert!(trace.starts_with("t,risk,accuracy,global_sv_count,per_node_sv_counts\n"));
    assert_eq!(trace.lines().count(), rounds.len() + 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["converged"], true);
}

#[test]
fn identical_invocations_give_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--l", "3", "--scale", "minmax", "--parallelism", "2"];
    assert!(train(a.path(), &blobs(), &args).status.success());
    assert!(train(b.path(), &blobs(), &args).status.success());
    for f in ["model.json", "trace.csv"] {
        assert_eq!(
            fs::read(a.path().join("out").join(f)).unwrap(),
            fs::read(b.path().join("out").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn zero_partitions_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), PAIR, &["--l", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--l"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_and_bad_kernel_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(train(dir.path(), PAIR, &["--l", "1", "--frobnicate"]).status.code(), Some(1));
    let o = train(dir.path(), PAIR, &["--l", "1", "--kernel", "rbf"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
}

#[test]
fn missing_data_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.libsvm");
    let o = cloudsvm(&[
        "train", "--data", missing.to_str().unwrap(), "--l", "1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(missing.to_str().unwrap()));
}

#[test]
fn single_class_data_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "+1 1:1\n+1 1:2\n", &["--l", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_on_the_analytic_pair() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train(dir.path(), PAIR, &["--l", "1", "--c", "10"]).status.success());
    let model = dir.path().join("out/model.json");
    let data = dir.path().join("train.libsvm");
    let o = cloudsvm(&["predict", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "0,+1,1\n1,-1,-1\n");
    assert!(stderr(&o).contains("accuracy=1"), "{}", stderr(&o));

    let unlabeled = dir.path().join("u.libsvm");
    fs::write(&unlabeled, "1:2\n1:-0.5\n").unwrap();
    let o = cloudsvm(&["predict", "--model", model.to_str().unwrap(), "--data", unlabeled.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "0,+1,2\n1,-1,-0.5\n");
    assert!(!stderr(&o).contains("accuracy"));

    let wide = dir.path().join("w.libsvm");
    fs::write(&wide, "+1 1:1 5:2\n").unwrap();
    let o = cloudsvm(&["predict", "--model", model.to_str().unwrap(), "--data", wide.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let data = dir.path().join("d.libsvm");
    fs::write(&model, "{\"format\": \"cloudsvm-model\", ").unwrap();
    fs::write(&data, PAIR).unwrap();
    let o = cloudsvm(&["predict", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_experiment(dir: &Path, extra: &str) -> std::path::PathBuf {
    fs::write(dir.join("toy.libsvm"), blobs()).unwrap();
    let cfg = dir.join("exp.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"dataset": {{"path": "toy.libsvm", "format": "libsvm"}},
                 "cloud": {{"l": 2, "train": {{"c": 1, "kernel": {{"kind": "linear"}}}}}},
                 "cv_folds": 4, "grid": {{"c": [0.1, 1]}}, "seed": 1, "output_dir": "results"{extra}}}"#
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn experiment_reports_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_experiment(dir.path(), "");
    let o = cloudsvm(&["experiment", "--config", cfg.to_str().unwrap(), "--parallelism", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    let parts: Vec<&str> = last.split(' ').collect();
    assert!(parts[0].starts_with("accuracy=") && parts[1].starts_with("iterations=") && parts[2].starts_with("svs="), "{last}");
    for p in text.lines().filter_map(|l| l.strip_prefix("wrote ")) {
        assert!(Path::new(p).exists(), "{p}");
    }
    for f in ["report.json", "folds.csv", "trace_fold1.csv", "trace_fold4.csv"] {
        assert!(dir.path().join("results").join(f).exists(), "{f}");
    }
}

#[test]
fn experiment_schema_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_experiment(dir.path(), r#", "colour": "blue""#);
    let o = cloudsvm(&["experiment", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let o = cloudsvm(&["experiment", "--config", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn inspect_data_and_model() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train(dir.path(), PAIR, &["--l", "1", "--c", "10"]).status.success());
    let data = dir.path().join("train.libsvm");
    let o = cloudsvm(&["inspect", "--data", data.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "samples=2\ndim=1\npositive=1\nnegative=1\n");
    let model = dir.path().join("out/model.json");
    let o = cloudsvm(&["inspect", "--model", model.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("support_vectors=2"));
    assert_eq!(cloudsvm(&["inspect"]).status.code(), Some(1));
}
