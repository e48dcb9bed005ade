use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmdae::data::{read_dataset, write_signal, Precision};
use cmdae::evaluation::{EvaluationReport, CODE_HASH};

const MINI_CONFIG: &str = r#"
arch = "mini"
holdout_per_class = 2
folds = 3

[synthetic]
n_classes = 3
per_class_counts = [12, 10, 11]
signal_length = 64
class_separation = 2.5

[train]
batch_size = 6
max_epochs = 2

[probe]
max_iterations = 200
"#;

fn cmdae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmdae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = cmdae(args);
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("mini.toml");
    std::fs::write(&config, MINI_CONFIG).unwrap();
    Workspace { _dir: dir, root, config }
}

impl Workspace {
    fn out(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn mini_dataset(&self) -> PathBuf {
        let out = self.out("data");
        ok(&["gen-data", "--config", s(&self.config), "--out", s(&out)]);
        out.join("dataset.cmd")
    }
}

#[test]
fn gen_data_default_counts() {
    let w = workspace();
    let out = w.out("default");
    let text = ok(&["gen-data", "--out", s(&out), "--signal-length", "64"]);
    for (name, n) in [("H", 244), ("C1", 120), ("C2", 173), ("C3", 168), ("total", 705)] {
        assert!(
            text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == [name, &n.to_string()]),
            "missing `{name} {n}` in\n{text}"
        );
    }
    let ds = read_dataset(&out.join("dataset.cmd")).unwrap();
    assert_eq!(ds.len(), 705);
    assert_eq!(ds.provenance.config["code_hash"], CODE_HASH);
    assert_eq!(ds.provenance.config["run_config"]["synthetic"]["signal_length"], 64);
}

#[test]
fn gen_data_is_seeded() {
    let w = workspace();
    let (a, b, c) = (w.out("a"), w.out("b"), w.out("c"));
    for dir in [&a, &b] {
        ok(&["gen-data", "--seed", "7", "--counts", "5,5", "--signal-length", "64", "--out", s(dir)]);
    }
    ok(&["gen-data", "--seed", "8", "--counts", "5,5", "--signal-length", "64", "--out", s(&c)]);
    // the provenance echo names each output directory, so compare the samples
    let samples = |d: &Path| read_dataset(&d.join("dataset.cmd")).unwrap().samples;
    assert_eq!(samples(&a), samples(&b));
    assert_ne!(samples(&a), samples(&c));
}

#[test]
fn gen_data_custom_classes() {
    let w = workspace();
    let out = w.out("two");
    ok(&["gen-data", "--classes", "2", "--counts", "10,10", "--signal-length", "64", "--out", s(&out)]);
    let ds = read_dataset(&out.join("dataset.cmd")).unwrap();
    assert_eq!(ds.len(), 20);
    assert_eq!(ds.class_counts(), vec![10, 10]);
    assert!(!cmdae(&["gen-data", "--classes", "3", "--counts", "10,10", "--out", s(&out)]).status.success());
}

#[test]
fn invalid_config_is_rejected() {
    let w = workspace();
    let bad = w.out("bad.toml");
    std::fs::write(&bad, "[train]\nmax_epoch = 3\n").unwrap();
    let o = cmdae(&["gen-data", "--config", s(&bad), "--out", s(&w.out("x"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_epoch"));
}

#[test]
fn ingest_recordings_fixture() {
    let w = workspace();
    let out = w.out("rec");
    ok(&["gen-recordings", "--per-class", "2", "--out", s(&out)]);
    let rec = out.join("recordings");
    let text = ok(&["ingest", s(&rec), "--signal-length", "64", "--out", s(&out)]);
    // 5 s at 867 rpm spans 72.25 revolutions: 35 or 36 complete two-revolution
    // windows per recording, depending on where the first trigger falls
    assert!(text.contains("revolutions"), "{text}");
    let line = text.lines().find(|l| l.starts_with("windows ")).unwrap();
    let windows: usize = line["windows ".len()..].split(',').next().unwrap().parse().unwrap();
    assert!((8 * 35..=8 * 36).contains(&windows), "{line}");
    assert!(line.contains("outliers dropped"));
    let ds = read_dataset(&out.join("dataset.cmd")).unwrap();
    assert_eq!(ds.signal_length, 64);
    assert!(ds.len() <= windows);
    assert!(out.join("ingest_report.json").exists());

    let keep = w.out("keep");
    let text = ok(&["ingest", s(&rec), "--signal-length", "64", "--outlier-z", "inf", "--out", s(&keep)]);
    assert!(text.contains("outliers dropped 0"), "{text}");
    assert_eq!(read_dataset(&keep.join("dataset.cmd")).unwrap().len(), windows);

    let empty = w.out("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(!cmdae(&["ingest", s(&empty), "--out", s(&w.out("e"))]).status.success());
}

#[test]
fn train_predict_and_exports() {
    let w = workspace();
    let data = w.mini_dataset();
    let out = w.out("model");
    let cfg = s(&w.config);
    ok(&["train", "--config", cfg, "--data", s(&data), "--out", s(&out)]);
    for f in ["model.ckpt", "classifier.json", "history.tsv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(out.join("history.tsv")).unwrap();
    assert!(history.starts_with(&format!("# code_hash {CODE_HASH}\n# run_config {{")));

    let ds = read_dataset(&data).unwrap();
    let a = w.out("a.bin");
    let v = w.out("v.bin");
    write_signal(&a, &ds.samples[0].acoustic, Precision::F64).unwrap();
    write_signal(&v, &ds.samples[0].vibration, Precision::F64).unwrap();
    let (m, c) = (out.join("model.ckpt"), out.join("classifier.json"));
    let base = ["predict", "--model", s(&m), "--classifier", s(&c), "--out", s(&out)];

    let run = |extra: &[&str]| -> Output { cmdae(&[&base[..], extra].concat()) };
    let parse = |o: Output| -> serde_json::Value {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice(&o.stdout).unwrap()
    };
    let single = parse(run(&["--mode", "a", "--acoustic", s(&a)]));
    let conf: Vec<f64> = serde_json::from_value(single["confidence"].clone()).unwrap();
    assert_eq!(conf.len(), 3);
    assert!((conf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(single["code_hash"], CODE_HASH);
    parse(run(&["--mode", "v", "--vibration", s(&v)]));
    let joint = parse(run(&["--mode", "joint", "--acoustic", s(&a), "--vibration", s(&v)]));
    assert!(joint["label"].as_u64().unwrap() < 3);

    let missing = run(&["--mode", "joint", "--acoustic", s(&a)]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("vibration"));
    assert!(!run(&["--mode", "a", "--vibration", s(&v)]).status.success());

    ok(&["export-embeddings", "--model", s(&m), "--data", s(&data), "--out", s(&out)]);
    let table = std::fs::read_to_string(out.join("embeddings.tsv")).unwrap();
    assert!(table.starts_with(&format!("# code_hash {CODE_HASH}\n")));
    let header = table.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "sample_id\tmode\tlabel\tz0\tz1\tz2\tz3\tx2d\ty2d");
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * ds.len());

    let text = ok(&["band-report", "--model", s(&m), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(text.lines().count(), 8);
    assert!(out.join("band_report.json").exists());
    assert!(!cmdae(&["band-report", "--model", s(&m), "--data", s(&data), "--cutoff-hz", "0", "--out", s(&out)])
        .status
        .success());
}

#[test]
fn cross_validate_report_shapes_and_determinism() {
    let w = workspace();
    let data = w.mini_dataset();
    let cfg = s(&w.config);
    let one = w.out("one");
    ok(&["cross-validate", "--config", cfg, "--data", s(&data), "--variants", "proposed", "--out", s(&one)]);
    let r = EvaluationReport::from_json(&std::fs::read_to_string(one.join("report.json")).unwrap()).unwrap();
    assert_eq!(r.cells.len(), 12);
    assert_eq!(r.code_hash, CODE_HASH);
    assert_eq!(r.run_config["variants"], serde_json::json!(["proposed"]));
    assert!(one.join("report.txt").exists() && one.join("confusion.txt").exists());

    let all = "proposed,vanilla,no-missing,corrnet";
    let (a, b) = (w.out("all1"), w.out("all2"));
    ok(&["cross-validate", "--config", cfg, "--data", s(&data), "--variants", all, "--jobs", "1", "--out", s(&a)]);
    ok(&["cross-validate", "--config", cfg, "--data", s(&data), "--variants", all, "--jobs", "2", "--out", s(&b)]);
    let ra = std::fs::read_to_string(a.join("report.json")).unwrap();
    let rb = std::fs::read_to_string(b.join("report.json")).unwrap();
    let full = EvaluationReport::from_json(&ra).unwrap();
    assert_eq!(full.cells.len(), 48);
    // the echoed config differs only in the worker count and output directory
    let strip = |t: &str| {
        let mut v: serde_json::Value = serde_json::from_str(t).unwrap();
        v["run_config"]["jobs"] = serde_json::Value::Null;
        v["run_config"]["out"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&ra), strip(&rb));
}

#[test]
fn failed_runs_give_nonzero_exit() {
    let w = workspace();
    let data = w.mini_dataset();
    let cfg = w.out("big_batch.toml");
    std::fs::write(&cfg, MINI_CONFIG.replace("batch_size = 6", "batch_size = 500")).unwrap();
    let out = w.out("cv");
    let o = cmdae(&["cross-validate", "--config", s(&cfg), "--data", s(&data), "--variants", "corrnet", "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("3 of 3 runs failed"));
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("failed runs:"));
}

#[test]
fn import_directory_round_trip() {
    let w = workspace();
    let data = w.mini_dataset();
    let ds = read_dataset(&data).unwrap();
    let dir = w.out("export");
    cmdae::data::export_directory(&ds, &dir, Precision::F64).unwrap();
    let out = w.out("imported");
    let text = ok(&["import", s(&dir), "--out", s(&out)]);
    assert!(text.contains("total"));
    let back = read_dataset(&out.join("dataset.cmd")).unwrap();
    assert_eq!(back.samples, ds.samples);
}
