use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::io::Write;

use ova_inn::continual::{self, EvalReport};
use ova_inn::dataio::{self, LabeledVectors};
use ova_inn::numkit::{Rng, Vector};

fn ova(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ova-inn"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Three well separated 4-d clusters labeled 0, 1, 2.
fn clusters(n: usize, seed: u64) -> LabeledVectors {
    let mut rng = Rng::new(seed);
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for c in 0..3u32 {
        for _ in 0..n {
            let v: Vec<f64> = (0..4)
                .map(|i| if i == c as usize { 4.0 } else { 0.0 } + 0.2 * rng.normal())
                .collect();
            vectors.push(Vector::from(v));
            labels.push(c);
        }
    }
    LabeledVectors::new(4, vectors, labels).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train: String,
    test: String,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let train = root.join("train.feat");
        let test = root.join("test.feat");
        dataio::write_feature_file(&clusters(40, 1), &train).unwrap();
        dataio::write_feature_file(&clusters(10, 2), &test).unwrap();
        Fixture {
            train: train.to_string_lossy().into(),
            test: test.to_string_lossy().into(),
            root,
            _dir: dir,
        }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into()
    }

    fn train(&self, model: &str, extra: &[&str]) -> Output {
        let model = self.path(model);
        let mut args = vec!["train", "--features", &self.train, "--epochs", "20", "--model", &model];
        args.extend_from_slice(extra);
        ova(&args)
    }
}

fn report(path: &Path) -> EvalReport {
    serde_json::from_str(&std::fs::read_to_string(path.with_extension("json")).unwrap()).unwrap()
}

#[test]
fn train_eval_predict_inspect() {
    let fx = Fixture::new();
    let out = fx.train("m.bin", &[]);
    assert_eq!(code(&out), 0);
    let csv = stdout(&out);
    assert!(csv.starts_with("class_id,samples,initial_loss,final_loss\n"));
    assert_eq!(csv.lines().count(), 4);

    let rep = fx.path("rep");
    let out = ova(&["eval", "--model", &fx.path("m.bin"), "--features", &fx.test, "--report", &rep]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("classes_seen,accuracy\n"));
    let r = report(Path::new(&rep));
    assert_eq!(r.model, "ova_inn");
    assert_eq!(r.test_count, 30);
    assert_eq!(r.accuracy_after_each_batch.len(), 3);
    assert_eq!(r.final_accuracy(), Some(1.0));
    let csv = std::fs::read_to_string(Path::new(&rep).with_extension("csv")).unwrap();
    assert_eq!(csv, r.to_csv());

    let input = fx.path("rows.csv");
    std::fs::write(&input, "4,0,0,0\n0,0,4,0\n").unwrap();
    let out = ova(&["predict", "--model", &fx.path("m.bin"), "--input", &input]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,class_id,score_0,score_1,score_2");
    assert!(lines[1].starts_with("0,0,"));
    assert!(lines[2].starts_with("1,2,"));

    let out = ova(&["inspect", "--model", &fx.path("m.bin")]);
    assert_eq!(code(&out), 0);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["magic"], "OVAINN01");
    assert_eq!(json["net_count"], 3);
    assert_eq!(json["dim"], 4);
}

#[test]
fn predict_reads_stdin() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.train("m.bin", &[])), 0);
    let mut child = Command::new(env!("CARGO_BIN_EXE_ova-inn"))
        .args(["predict", "--model", &fx.path("m.bin"), "--input", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"0,4,0,0\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).lines().nth(1).unwrap().starts_with("0,1,"));
}

#[test]
fn resume_skips_trained_classes_and_matches_full_run() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.train("full.bin", &[])), 0);
    assert_eq!(code(&fx.train("part.bin", &["--class-order", "0,1"])), 0);
    let out = fx.train("part.bin", &["--class-order", "0-2"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().count(), 2, "only class 2 is trained on resume");
    assert_eq!(
        std::fs::read(fx.path("full.bin")).unwrap(),
        std::fs::read(fx.path("part.bin")).unwrap()
    );
}

#[test]
fn config_file_and_flag_precedence() {
    let fx = Fixture::new();
    let cfg = fx.path("run.cfg");
    std::fs::write(&cfg, "# run\nepochs = 2\nclass_order = 1\n").unwrap();
    let model = fx.path("c.bin");
    let out = ova(&["train", "--config", &cfg, "--features", &fx.train, "--model", &model, "--class-order", "2,0"]);
    assert_eq!(code(&out), 0);
    let reg = continual::load_registry(&model).unwrap();
    let ids: Vec<u32> = reg.iter().map(|(c, _)| c).collect();
    assert_eq!(ids, vec![2, 0]);
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    // Configuration errors.
    assert_eq!(code(&ova(&["train", "--features", &fx.train])), 1);
    assert_eq!(code(&fx.train("x.bin", &["--epochs", "0"])), 1);
    assert_eq!(code(&fx.train("x.bin", &["--mode", "multi"])), 1);
    assert_eq!(code(&ova(&["train", "--bogus"])), 1);
    let bad_cfg = fx.path("bad.cfg");
    std::fs::write(&bad_cfg, "colour = blue\n").unwrap();
    assert_eq!(code(&ova(&["inspect", "--config", &bad_cfg])), 1);
    assert_eq!(code(&ova(&["--help"])), 0);

    // Missing classes in the requested order are a configuration error and
    // leave no registry behind.
    let out = fx.train("y.bin", &["--class-order", "0,7"]);
    assert_eq!(code(&out), 1);
    assert!(!Path::new(&fx.path("y.bin")).exists());

    // Data errors.
    let out = ova(&["train", "--features", &fx.path("missing.feat"), "--model", &fx.path("z.bin")]);
    assert_eq!(code(&out), 2);
    assert!(!Path::new(&fx.path("z.bin")).exists());
    let corrupt = fx.path("corrupt.bin");
    std::fs::write(&corrupt, b"OVAINN01\x01").unwrap();
    assert_eq!(code(&ova(&["inspect", "--model", &corrupt])), 2);

    assert_eq!(code(&fx.train("m.bin", &["--class-order", "0,1"])), 0);
    // Test labels without an expert.
    let out = ova(&["eval", "--model", &fx.path("m.bin"), "--features", &fx.test]);
    assert_eq!(code(&out), 2);
    // Wrong input width.
    let rows = fx.path("wide.csv");
    std::fs::write(&rows, "1,2,3,4,5,6\n").unwrap();
    assert_eq!(code(&ova(&["predict", "--model", &fx.path("m.bin"), "--input", &rows])), 2);

    // I/O errors.
    assert_eq!(code(&ova(&["inspect", "--model", &fx.path("nope.bin")])), 3);
    let out = fx.train("no-such-dir/m.bin", &[]);
    assert_eq!(code(&out), 3);
}

#[test]
fn multi_head_needs_tasks_and_reports() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.train("m.bin", &[])), 0);
    let rep = fx.path("multi");
    let out = ova(&[
        "eval", "--model", &fx.path("m.bin"), "--features", &fx.test,
        "--mode=multi", "--tasks", "0,1;2", "--report", &rep,
    ]);
    assert_eq!(code(&out), 0);
    let r = report(Path::new(&rep));
    assert_eq!(r.final_accuracy(), Some(1.0));
    assert_eq!(serde_json::to_value(r.mode).unwrap(), "multi_head");
}

#[test]
fn baseline_reports_prototype_curve() {
    let fx = Fixture::new();
    let rep = fx.path("proto");
    let out = ova(&["baseline", "--features", &fx.train, "--test-features", &fx.test, "--report", &rep]);
    assert_eq!(code(&out), 0);
    let r = report(Path::new(&rep));
    assert_eq!(r.model, "prototype");
    assert_eq!(r.final_accuracy(), Some(1.0));
}
