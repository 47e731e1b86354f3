use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn tsalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsalign"))
        .args(args)
        .env_remove("TSALIGN_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_run(out: &Path) -> PathBuf {
    let cfg = configs().join("synthetic.toml");
    let o = tsalign(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--max-steps",
        "4",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("synthetic-default-h24-seed3")
}

#[test]
fn train_writes_run_directory_and_eval_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_run(dir.path());
    for f in ["config.toml", "prompts.txt", "train_report.json", "model.ckpt", "metrics.csv", "metrics.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(report["total_steps"], 4);
    assert_eq!(report["backbone_fingerprint_before"], report["backbone_fingerprint_after"]);

    let o = tsalign(&["eval", "--run", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mse"));
}

#[test]
fn explain_and_zeroshot_use_a_trained_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("explain.toml");
    let o = tsalign(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--max-steps",
        "2",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();

    let csv = dir.path().join("attention.csv");
    let o = tsalign(&["explain", "--run", run.to_str().unwrap(), "--output", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().next().unwrap().starts_with("patch,start,end,increase,decrease"));

    let target = configs().join("data/synthetic.toml");
    let o = tsalign(&["zeroshot", "--run", run.to_str().unwrap(), "--target", target.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn ablate_all_variants_writes_nine_summary_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("synthetic.toml");
    let o = tsalign(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--seeds",
        "1",
        "--variants",
        "all",
        "--max-steps",
        "1",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ablation = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("ablation"))
        .expect("ablation directory");
    let summary = std::fs::read_to_string(ablation.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 10);
    assert!(summary.contains("A1_no_alignment") && summary.contains("D2_no_domain_features"));
}

#[test]
fn decompose_csv_prints_components() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("parts.csv");
    let data = configs().join("data/synthetic.csv");
    let o = tsalign(&[
        "decompose",
        "--csv",
        data.to_str().unwrap(),
        "--len",
        "96",
        "--period",
        "24",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 97);
}

#[test]
fn gradcheck_passes_on_shipped_config() {
    let cfg = configs().join("synthetic.toml");
    let o = tsalign(&["gradcheck", "--config", cfg.to_str().unwrap(), "--sample", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let o = tsalign(&["train", "--config", "/nonexistent/run.toml", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/run.toml"));
}

#[test]
fn unknown_subcommand_and_bad_flags_exit_with_one() {
    assert_eq!(tsalign(&["forecast"]).status.code(), Some(1));
    let cfg = configs().join("synthetic.toml");
    let o = tsalign(&["ablate", "--config", cfg.to_str().unwrap(), "--seed", "0", "--variants", "Z9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_config_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let data = configs().join("data/synthetic.toml");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        format!(
            "dataset = {:?}\n[model]\npatch_len = 200\nalign_heads = 3\n[train]\nlearning_rate = -1.0\n",
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = tsalign(&["train", "--config", cfg.to_str().unwrap(), "--seed", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("patch_len"), "{err}");
    assert!(err.contains("learning_rate"), "{err}");
}
