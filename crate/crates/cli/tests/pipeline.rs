use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn caper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caper"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = caper(args);
    assert!(
        out.status.success(),
        "caper {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL_SYNTH: &[&str] = &["--users", "40", "--years", "9"];
const SMALL_MODEL: &[&str] = &["--d", "6", "--epochs", "3"];

fn with(dir: &Path, cmd: &str, extra: &[&[&str]]) -> Vec<String> {
    let mut v = vec![cmd.to_owned(), "--out".to_owned(), dir.display().to_string()];
    for group in extra {
        v.extend(group.iter().map(|s| (*s).to_owned()));
    }
    v
}

fn run(dir: &Path, cmd: &str, extra: &[&[&str]]) -> String {
    let args = with(dir, cmd, extra);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn pipeline(dir: &Path) {
    run(dir, "synth", &[SMALL_SYNTH]);
    run(dir, "ingest", &[]);
    run(dir, "train", &[SMALL_MODEL]);
    run(dir, "predict", &[SMALL_MODEL]);
    run(dir, "eval", &[]);
}

#[test]
fn chained_pipeline_reports_every_horizon() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("variant,kind,metric,horizon,value,instances"));
    for variant in ["full", "popular"] {
        for kind in ["company", "position"] {
            for h in 1..=5 {
                let prefix = format!("{variant},{kind},MRR,{h},");
                assert!(metrics.lines().any(|l| l.starts_with(&prefix)), "missing {prefix}");
            }
        }
    }
    let report = run(dir.path(), "report", &[]);
    assert!(report.contains("full") && report.contains("popular"));
    for f in ["predictions.csv", "rankings.csv", "inferred_careers.csv", "loss_log.csv", "manifest-train.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn zero_learning_rate_keeps_the_loss_constant() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), "synth", &[SMALL_SYNTH]);
    run(dir.path(), "ingest", &[]);
    run(dir.path(), "train", &[SMALL_MODEL, &["--lr", "0"]]);
    let log = fs::read_to_string(dir.path().join("loss_log.csv")).unwrap();
    let losses: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| *l == losses[0]), "{losses:?}");
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), "synth", &[SMALL_SYNTH]);
    run(dir.path(), "ingest", &[]);
    run(dir.path(), "train", &[&["--d", "6", "--epochs", "4", "--checkpoint-every", "2"]]);
    let two = fs::read(dir.path().join("checkpoint-2.bin")).unwrap();
    let four = fs::read(dir.path().join("checkpoint-4.bin")).unwrap();
    assert_ne!(two, four);
    assert_eq!(four, fs::read(dir.path().join("checkpoint.bin")).unwrap());
    assert!(!dir.path().join("checkpoint-3.bin").exists());
}

#[test]
fn rerun_from_manifests_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    for cmd in ["synth", "ingest", "train", "predict", "eval"] {
        let manifest = a.path().join(format!("manifest-{cmd}.txt"));
        run(b.path(), cmd, &[&["--config", manifest.to_str().unwrap()]]);
    }
    for f in ["raw.csv", "checkpoint.bin", "predictions.csv", "rankings.csv", "metrics.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn gradcheck_passes_on_the_toy_graph() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "gradcheck", &[]);
    for cell in ["paper-lstm", "lstm", "gru", "rnn"] {
        assert!(out.contains(cell), "{out}");
    }
}

#[test]
fn ablation_writes_one_report_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), "synth", &[SMALL_SYNTH]);
    run(dir.path(), "ingest", &[]);
    run(dir.path(), "ablate", &[SMALL_MODEL, &["--variants", "full,no_gcn", "--seeds", "2"]]);
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    for variant in ["full", "no_gcn", "popular"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{variant},"))), "{variant} missing");
    }
}

#[test]
fn usage_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["nonsense"],
        vec!["train", "--out", out, "--no-such-flag", "1"],
        vec!["train", "--out", out, "--epochs", "many"],
        vec!["train", "--out", out, "--cell", "transformer"],
        vec!["synth", "--out", out, "--config", "/definitely/missing.cfg"],
    ] {
        assert_eq!(caper(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn missing_inputs_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let status = caper(&["train", "--out", dir.path().to_str().unwrap()]).status;
    assert_eq!(status.code(), Some(1));
}

#[test]
fn help_lists_defaults() {
    let help = ok(&["train", "--help"]);
    for needle in ["--epochs", "[default: 100]", "[default: 150]", "[default: paper-lstm]", "--config"] {
        assert!(help.contains(needle), "{needle} not in help");
    }
}
