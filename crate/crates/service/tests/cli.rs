use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use signdigit_core::imaging::encode_netpbm;
use signdigit_core::model_io::save_model;
use signdigit_core::nn::NetworkSpec;
use signdigit_core::synthetic::{glyph_set, write_glyph_tree};
use signdigit_core::train::{fit, TrainConfig};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_signdigit"));
    cmd.env_remove("SIGNDIGIT_CONFIG");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ten one-per-class glyphs on disk plus a model that has memorized them.
struct Memorized {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn memorized() -> &'static Memorized {
    static FIXTURE: OnceLock<Memorized> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("fixtures");
        write_glyph_tree(&data, 1, 10).unwrap();
        let samples = glyph_set(1, 10);
        let spec = NetworkSpec::sign_digits();
        let config = TrainConfig {
            epochs: 60,
            batch_size: 10,
            seed: 10,
            ..TrainConfig::default()
        };
        let fitted = fit(&spec, &samples, &samples, &config).unwrap();
        let model = dir.path().join("memorized.sdb");
        save_model(
            &spec,
            &fitted.params,
            std::fs::File::create(&model).unwrap(),
        )
        .unwrap();
        Memorized {
            _dir: dir,
            data,
            model,
        }
    })
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["train", "--data", "d", "--out", "m.sdb", "--epochs", "0"],
        vec![
            "train",
            "--data",
            "d",
            "--out",
            "m.sdb",
            "--test-fraction",
            "1.5",
        ],
        vec!["train", "--out", "m.sdb"],
        vec!["serve", "--port", "0"],
        vec!["frobnicate"],
        vec![],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_is_deterministic_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(run(&[
        "gen-glyphs",
        "--out",
        s(&data),
        "--per-class",
        "4",
        "--seed",
        "1"
    ])
    .status
    .success());
    let mut models = Vec::new();
    for name in ["a.sdb", "b.sdb"] {
        let out = dir.path().join(name);
        let o = run(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--epochs",
            "2",
            "--seed",
            "1",
            "--augment",
            "--test-fraction",
            "0.25",
            "--quiet",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let line = stdout(&o);
        assert!(line.trim().starts_with("val_accuracy="), "{line}");
        models.push(std::fs::read(&out).unwrap());
        let history = std::fs::read_to_string(out.with_extension("history.csv")).unwrap();
        assert_eq!(history.lines().count(), 3);
        assert!(history.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out.with_extension("report.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report["test_samples"], 10);
        assert_eq!(report["summary"]["precision"].as_array().unwrap().len(), 10);
    }
    assert_eq!(models[0], models[1]);
}

#[test]
fn train_reports_dataset_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("cat")).unwrap();
    let o = run(&[
        "train",
        "--data",
        s(dir.path()),
        "--out",
        s(&dir.path().join("m.sdb")),
        "--epochs",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error:"));
}

#[test]
fn eval_memorized_model() {
    let m = memorized();
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "eval",
        "--model",
        s(&m.model),
        "--data",
        s(&m.data),
        "--out",
        s(out.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("accuracy=1.0000 samples=10"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["accuracy"], 1.0);
    let confusion = std::fs::read_to_string(out.path().join("confusion.csv")).unwrap();
    let row_sums: Vec<u64> = confusion
        .lines()
        .map(|l| l.split(',').map(|c| c.parse::<u64>().unwrap()).sum())
        .collect();
    assert_eq!(row_sums, vec![1; 10]);
    for k in 0..10 {
        assert!(out.path().join(format!("roc_class_{k}.csv")).is_file());
    }
}

#[test]
fn eval_missing_model_names_path() {
    let o = run(&["eval", "--model", "/no/such/model.sdb", "--data", "."]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/model.sdb"), "{}", stderr(&o));
}

#[test]
fn predict_memorized_fixtures() {
    let m = memorized();
    let bangla = ["শূন্য", "এক", "দুই", "তিন", "চার", "পাঁচ", "ছয়", "সাত", "আট", "নয়"];
    let work = tempfile::tempdir().unwrap();
    for (digit, word) in bangla.iter().enumerate() {
        let src = m.data.join(format!("{digit}/glyph_0000.pgm"));
        let image = work.path().join(format!("sign{digit}.pgm"));
        std::fs::copy(&src, &image).unwrap();
        let o = run(&["predict", "--model", s(&m.model), s(&image), "--speak"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let line = stdout(&o);
        let line = line.trim_end();
        let (head, tail) = line.split_once(" bangla=").unwrap();
        assert_eq!(tail, *word);
        let (d, p) = head.split_once(" p=").unwrap();
        assert_eq!(d, format!("digit={digit}"));
        assert_eq!(p.len(), 8, "six decimals: {p}");
        assert!(p.parse::<f64>().unwrap() > 0.5);
        let wav = std::fs::read(image.with_extension("wav")).unwrap();
        assert_eq!(&wav[..4], b"RIFF");
    }
}

#[test]
fn predict_rejects_undecodable_image() {
    let m = memorized();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pgm");
    std::fs::write(&bad, b"definitely not netpbm").unwrap();
    let o = run(&["predict", "--model", s(&m.model), s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.pgm"));
}

#[test]
fn augment_preview_writes_variants() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("in.pgm");
    std::fs::write(&image, encode_netpbm(&glyph_set(1, 0)[7].image.to_raster())).unwrap();
    let out = dir.path().join("preview");
    let o = run(&[
        "augment-preview",
        s(&image),
        "--out",
        s(&out),
        "--count",
        "3",
        "--seed",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "augmented_000.pgm",
            "augmented_001.pgm",
            "augmented_002.pgm",
            "original.pgm"
        ]
    );
}

#[test]
fn bad_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sd.toml");
    std::fs::write(&cfg, "port = \"eighty\"").unwrap();
    let o = bin()
        .env("SIGNDIGIT_CONFIG", &cfg)
        .args([
            "gen-glyphs",
            "--out",
            s(&dir.path().join("g")),
            "--per-class",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sd.toml"));
}

#[test]
fn serve_missing_model_fails() {
    let o = run(&["serve", "--model", "/no/such/model.sdb", "--port", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/model.sdb"));
}

#[test]
fn serve_answers_health_over_tcp() {
    let m = memorized();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sd.toml");
    std::fs::write(&cfg, format!("port = {port}\nmodel = {:?}\n", s(&m.model))).unwrap();
    let mut child = bin().args(["serve", "--config", s(&cfg)]).spawn().unwrap();
    let url = format!("http://127.0.0.1:{port}/api/health");
    let deadline = Instant::now() + Duration::from_secs(20);
    let body = loop {
        match ureq::get(&url).call() {
            Ok(mut r) => break r.body_mut().read_to_string().unwrap(),
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(100)),
            Err(e) => {
                child.kill().ok();
                panic!("service never came up: {e}");
            }
        }
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(body, r#"{"status":"ok"}"#);
}
