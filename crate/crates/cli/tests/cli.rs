use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn adaptts() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_adaptts"));
    c.env_remove("ADAPTTS_CONFIG_DIR");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs/desk.toml")
}

fn make_corpus(out: &Path, language: &str, voices: &[&str], per_voice: usize) -> PathBuf {
    let mut c = adaptts();
    c.args(["make-corpus", "--language", language, "--min-phonemes", "3", "--max-phonemes", "5"])
        .args(["--per-voice", &per_voice.to_string()])
        .arg("--out")
        .arg(out);
    for v in voices {
        c.args(["--voice", v]);
    }
    run(&mut c);
    out.join("manifest.tsv")
}

fn train(manifest: &Path, run_dir: &Path, steps: u64) {
    run(adaptts()
        .arg("train-backbone")
        .arg("--config")
        .arg(desk_config())
        .arg("--manifest")
        .arg(manifest)
        .args(["--steps", &steps.to_string(), "--seed", "5"])
        .arg("--run-dir")
        .arg(run_dir));
}

#[test]
fn help_exits_cleanly() {
    let out = run(adaptts().arg("--help"));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["train-backbone", "finetune", "synthesize", "count-params", "evaluate", "validate-mushra"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_flags_are_rejected() {
    let out = adaptts().args(["train-backbone", "--no-such-flag"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-flag"));
}

#[test]
fn missing_config_is_a_categorized_error() {
    let out = adaptts()
        .args(["train-backbone", "--config", "/nonexistent/adaptts.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[config-not-found]:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn config_directory_supplies_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = adaptts().arg("count-params").env("ADAPTTS_CONFIG_DIR", dir.path()).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config-not-found]"));

    std::fs::copy(desk_config(), dir.path().join("default.toml")).unwrap();
    let out = run(adaptts().arg("count-params").env("ADAPTTS_CONFIG_DIR", dir.path()));
    let budget: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ratio = budget["adapter_ratio"].as_f64().unwrap();
    assert!(ratio > 0.0 && ratio < 1.0, "{budget}");
}

#[test]
fn bad_manifest_reports_its_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = adaptts()
        .arg("train-backbone")
        .arg("--config")
        .arg(desk_config())
        .arg("--manifest")
        .arg(dir.path().join("absent.tsv"))
        .arg("--run-dir")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[file-not-found]"));
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_corpus(&dir.path().join("corpus"), "en", &["a:110:1.0", "b:190:1.15"], 2);
    train(&manifest, &dir.path().join("r1"), 2);
    train(&manifest, &dir.path().join("r2"), 2);
    let m1 = std::fs::read(dir.path().join("r1/metrics.tsv")).unwrap();
    let m2 = std::fs::read(dir.path().join("r2/metrics.tsv")).unwrap();
    assert!(!m1.is_empty());
    assert_eq!(m1, m2);
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let en = make_corpus(&d.join("en"), "en", &["a:110:1.0", "b:190:1.15"], 2);
    let es = make_corpus(&d.join("es"), "es", &["c:150:1.05"], 2);

    // Timestamped run directory under --runs-dir.
    run(adaptts()
        .arg("train-backbone")
        .arg("--config")
        .arg(desk_config())
        .arg("--manifest")
        .arg(&en)
        .args(["--steps", "3", "--seed", "9"])
        .arg("--runs-dir")
        .arg(d.join("runs")));
    let runs: Vec<PathBuf> = std::fs::read_dir(d.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    let backbone = &runs[0];
    assert!(backbone.file_name().unwrap().to_string_lossy().ends_with("-seed9"));
    for f in ["config.toml", "run.json", "metrics.tsv", "checkpoints/last.ckpt"] {
        assert!(backbone.join(f).exists(), "{f} missing");
    }

    let ft = d.join("ft");
    run(adaptts()
        .arg("finetune")
        .arg("--checkpoint")
        .arg(backbone.join("checkpoints/last.ckpt"))
        .arg("--manifest")
        .arg(&es)
        .args(["--task", "language", "--mode", "adapters", "--epochs", "1"])
        .arg("--run-dir")
        .arg(&ft));
    let adapted = ft.join("checkpoints/last.ckpt");
    assert!(adapted.exists() && ft.join("metrics.tsv").exists());

    let wav = d.join("out.wav");
    run(adaptts()
        .arg("synthesize")
        .arg("--checkpoint")
        .arg(&adapted)
        .args(["--text-phonemes", "a e i", "--speaker", "c", "--language", "es"])
        .arg("--out")
        .arg(&wav));
    assert!(std::fs::metadata(&wav).unwrap().len() > 44);

    let out = run(adaptts().arg("count-params").arg("--checkpoint").arg(&adapted));
    let budget: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(budget["adapters"].as_u64().unwrap() > 0);

    let rec = d.join("rec.bin");
    run(adaptts()
        .arg("train-recognizer")
        .arg("--manifest")
        .arg(&es)
        .args(["--epochs", "1", "--hidden", "16"])
        .arg("--out")
        .arg(&rec));
    assert!(rec.exists());

    let report = d.join("report.json");
    let out = run(adaptts()
        .arg("evaluate")
        .arg("--checkpoint")
        .arg(&adapted)
        .arg("--manifest")
        .arg(&es)
        .args(["--metrics", "secs,psr,pesq"])
        .arg("--recognizer")
        .arg(&rec)
        .arg("--out")
        .arg(&report));
    assert!(String::from_utf8_lossy(&out.stdout).contains("pesq: not evaluated"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["format_version"], 1);
    assert_eq!(r["utterances"].as_array().unwrap().len(), 2);
    assert!(r["aggregates"]["secs"]["mean"].is_number());
    assert!(r["aggregates"]["psr"]["mean"].is_number());
    assert!(r["not_evaluated"]["pesq"].is_string());

    // A language the backbone never saw cannot be synthesized.
    let out = adaptts()
        .arg("synthesize")
        .arg("--checkpoint")
        .arg(backbone.join("checkpoints/last.ckpt"))
        .args(["--text-phonemes", "a", "--speaker", "a", "--language", "xx"])
        .arg("--out")
        .arg(d.join("x.wav"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
}
