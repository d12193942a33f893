use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pki(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pki"))
        .current_dir(dir)
        .env_remove("PKI_OUT_DIR")
        .args(args)
        .output()
        .expect("spawn pki")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Small stream spec so runs stay quick.
const SPEC: &str = r#"
d = 16
cluster_std = 0.1
center_scale = 5.0
train_per_base_class = 10
test_per_class = 10
seed = 3

[layout]
base_classes = 4
num_incremental = 3
n_way = 2
k_shot = 3
"#;

const CONFIG: &str = "base_epochs = 20\nincr_iters = 20\n";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
    fs::write(dir.path().join("cfg.toml"), CONFIG).unwrap();
    let o = pki(dir.path(), &["synth", "--spec", "spec.toml", "--out", "stream"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

#[test]
fn synth_is_deterministic_and_refuses_overwrite() {
    let dir = setup();
    let d = dir.path();
    let first = fs::read(d.join("stream/session_02_train.pkif")).unwrap();
    assert_eq!(code(&pki(d, &["synth", "--spec", "spec.toml", "--out", "stream"])), 2);
    assert_eq!(
        code(&pki(
            d,
            &["synth", "--spec", "spec.toml", "--out", "stream", "--overwrite"]
        )),
        0
    );
    assert_eq!(fs::read(d.join("stream/session_02_train.pkif")).unwrap(), first);
    assert_eq!(
        code(&pki(
            d,
            &["synth", "--spec", "spec.toml", "--out", "other", "--seed", "4"]
        )),
        0
    );
    assert_ne!(fs::read(d.join("other/session_02_train.pkif")).unwrap(), first);
}

#[test]
fn cifar_like_preset_writes_nine_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let o = pki(dir.path(), &["synth", "--preset", "cifar-like", "--out", "c"]);
    assert_eq!(code(&o), 0);
    let names: Vec<String> = fs::read_dir(dir.path().join("c"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.ends_with("_train.pkif")).count(), 9);
    assert_eq!(names.iter().filter(|n| n.ends_with("_test.pkif")).count(), 9);
    assert!(names.contains(&"manifest.toml".to_string()));
}

#[test]
fn default_output_root_comes_from_environment() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_pki"))
        .current_dir(dir.path())
        .env("PKI_OUT_DIR", dir.path().join("root"))
        .args(["synth", "--spec", "spec.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("root/stream/manifest.toml").exists());
}

#[test]
fn run_writes_one_directory_per_seed() {
    let dir = setup();
    let d = dir.path();
    let args = [
        "run", "--stream", "stream", "--config", "cfg.toml", "--seeds", "1,2,3", "--out", "r",
    ];
    let o = pki(d, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for s in 1..=3 {
        let seed = d.join(format!("r/seed_{s}"));
        assert!(seed.join("accuracy.csv").exists());
        assert!(seed.join("config.toml").exists());
        assert!(seed.join("checkpoints/session_03.json").exists());
    }
    let summary = fs::read_to_string(d.join("r/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.starts_with("method,s0,s1,s2,s3,avg\n"));
    assert_eq!(code(&pki(d, &args)), 2);
}

#[test]
fn pki_and_k1_give_identical_csvs() {
    let dir = setup();
    let d = dir.path();
    let base = ["run", "--stream", "stream", "--config", "cfg.toml", "--seed", "5"];
    assert_eq!(
        code(&pki(d, &[&base[..], &["--mode", "pki", "--out", "a"]].concat())),
        0
    );
    assert_eq!(
        code(&pki(
            d,
            &[&base[..], &["--mode", "pkiv2", "--k", "1", "--out", "b"]].concat()
        )),
        0
    );
    let a = fs::read_to_string(d.join("a/seed_5/accuracy.csv")).unwrap();
    let b = fs::read_to_string(d.join("b/seed_5/accuracy.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn k_sweep_summary_has_five_rows() {
    let dir = setup();
    let o = pki(
        dir.path(),
        &[
            "run",
            "--stream",
            "stream",
            "--config",
            "cfg.toml",
            "--k",
            "1,2,3,4,T",
            "--out",
            "sweep",
            "--format",
            "md",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = fs::read_to_string(dir.path().join("sweep/summary.md")).unwrap();
    let rows: Vec<&str> = md.lines().skip(2).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("| k=1 |") && rows[4].starts_with("| k=T |"));
    assert!(dir.path().join("sweep/k_T/seed_0/accuracy.csv").exists());
}

#[test]
fn resume_from_checkpoint_matches_full_run() {
    let dir = setup();
    let d = dir.path();
    let o = pki(
        d,
        &[
            "run", "--stream", "stream", "--config", "cfg.toml", "--mode", "pkiv1", "--out", "full",
        ],
    );
    assert_eq!(code(&o), 0);
    let o = pki(
        d,
        &[
            "run",
            "--stream",
            "stream",
            "--resume",
            "full/seed_0/checkpoints/session_01.json",
            "--out",
            "resumed",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["accuracy.csv", "checkpoints/session_03.json"] {
        assert_eq!(
            fs::read(d.join("full/seed_0").join(f)).unwrap(),
            fs::read(d.join("resumed/seed_0").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn report_merges_directories() {
    let dir = setup();
    let d = dir.path();
    let base = ["run", "--stream", "stream", "--config", "cfg.toml", "--seed", "1"];
    assert_eq!(code(&pki(d, &[&base[..], &["--out", "PKI"]].concat())), 0);
    assert_eq!(
        code(&pki(d, &[&base[..], &["--mode", "pkiv1", "--out", "V1"]].concat())),
        0
    );

    let one = pki(d, &["report", "PKI/seed_1"]);
    assert_eq!(code(&one), 0);
    assert_eq!(stdout(&one).lines().count(), 2);

    let two = pki(d, &["report", "PKI", "V1", "--reference", "PKI"]);
    assert_eq!(code(&two), 0);
    let text = stdout(&two);
    assert!(text.lines().next().unwrap().ends_with(",avg,improvement"));
    let last = |row: &str| -> Vec<f64> {
        let cells: Vec<&str> = row.split(',').collect();
        cells[cells.len() - 2..].iter().map(|c| c.parse().unwrap()).collect()
    };
    let pki_row = last(text.lines().nth(1).unwrap());
    let v1_row = last(text.lines().nth(2).unwrap());
    assert_eq!(pki_row[1], 0.0);
    assert!((v1_row[1] - (v1_row[0] - pki_row[0])).abs() < 0.011);

    let md = pki(d, &["report", "PKI", "V1", "--format", "md"]);
    assert!(stdout(&md).lines().nth(1).unwrap().starts_with("| :--- |"));

    assert_eq!(code(&pki(d, &["report", "stream"])), 3);
    assert_eq!(code(&pki(d, &["report", "PKI", "--reference", "nope"])), 2);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = pki(d, &["gradcheck"]);
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).contains("projector.W1"));
    assert_eq!(code(&pki(d, &["gradcheck", "--dim", "1", "--mode", "pkiv1"])), 0);
    let fail = pki(d, &["gradcheck", "--tol", "0"]);
    assert_eq!(code(&fail), 1);
    assert!(String::from_utf8_lossy(&fail.stderr).contains("classifier.W"));
}

#[test]
fn config_and_runtime_errors_have_distinct_codes() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "incr_iterz = 3\n").unwrap();
    assert_eq!(
        code(&pki(
            d,
            &["run", "--stream", "stream", "--config", "bad.toml", "--out", "x"]
        )),
        2
    );
    assert_eq!(
        code(&pki(d, &["run", "--stream", "stream", "--alpha", "0", "--out", "x"])),
        2
    );
    assert_eq!(
        code(&pki(
            d,
            &["run", "--stream", "stream", "--mode", "pki", "--k", "2", "--out", "x"]
        )),
        2
    );
    assert_eq!(code(&pki(d, &["run", "--bogus"])), 2);
    assert_eq!(code(&pki(d, &["run", "--stream", "missing", "--out", "x"])), 3);

    fs::write(d.join("stream/session_01_train.pkif"), b"PKIF").unwrap();
    let o = pki(d, &["run", "--stream", "stream", "--out", "x"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("session_01_train.pkif"));
}
