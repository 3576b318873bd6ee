//! Runs the compiled binary end to end: exit codes, output determinism,
//! and agreement between CLI runs and the in-process pipeline.

use std::path::Path;
use std::process::{Command, Output};

use laneflow::bench::{self, IngestionStrategy, RunConfig};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laneflow"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));

    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn generation_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for out_path in [&a, &b] {
        let out = run(&[
            "generate", "--records", "3000", "--seed", "99", "--out", path_arg(out_path),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stdout(&out).contains("wrote 3000 records"));
    }
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap());
    // Header line plus one line per record.
    assert_eq!(bytes_a.iter().filter(|&&b| b == b'\n').count(), 3001);

    let out = run(&[
        "generate", "--records", "3000", "--seed", "100", "--out", path_arg(&c),
    ]);
    assert_eq!(code(&out), 0);
    assert_ne!(bytes_a, std::fs::read(&c).unwrap());
}

#[test]
fn processing_a_generated_file_matches_the_library_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let report = dir.path().join("run.csv");

    let out = run(&[
        "generate", "--records", "8000", "--seed", "42", "--out", path_arg(&data),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&[
        "process",
        "--input", path_arg(&data),
        "--warehouse", path_arg(&dir.path().join("wh-cli")),
        "--report", path_arg(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cli = bench::parse_metrics_csv(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(cli.records_total, 8000);
    assert_eq!(cli.warehouse_rows, 8000);
    assert_eq!(cli.dead_letters, 0);
    assert_eq!(cli.final_lag, 0);

    // The same seeds in process give the same warehouse content.
    let lib = bench::run_pipeline(
        &RunConfig::new(8000, IngestionStrategy::Full),
        &dir.path().join("wh-lib"),
    )
    .unwrap();
    assert_eq!(cli.content_hash, lib.content_hash);
}

#[test]
fn training_then_evaluating_round_trips_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let model = dir.path().join("model.json");
    let train_report = dir.path().join("train.csv");
    let eval_report = dir.path().join("eval.csv");

    let out = run(&[
        "generate", "--records", "2000", "--seed", "11", "--out", path_arg(&data),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = run(&[
        "train",
        "--input", path_arg(&data),
        "--out", path_arg(&model),
        "--model-seed", "3",
        "--report", path_arg(&train_report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("trained on 1600 rows, held out 400"), "{text}");
    assert!(text.contains("accuracy:"), "{text}");
    assert!(text.contains("feature importances:"), "{text}");
    assert!(text.contains("v_Vel:"), "{text}");
    assert!(model.exists());

    for report in [&train_report, &eval_report] {
        if report == &eval_report {
            let out = run(&[
                "evaluate",
                "--model", path_arg(&model),
                "--input", path_arg(&data),
                "--report", path_arg(&eval_report),
            ]);
            assert_eq!(code(&out), 0, "{}", stderr(&out));
            assert!(stdout(&out).contains("macro F1:"));
        }
        let text = std::fs::read_to_string(report).unwrap();
        assert!(
            text.starts_with("class,precision,recall,f1,support\n"),
            "{text}"
        );
        assert!(text.contains("confusion,pred_Low,pred_Medium,pred_High"));
    }
}

#[test]
fn bench_report_parses_back_into_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.csv");
    let out = run(&[
        "bench", "--records", "6000", "--seed", "5", "--report", path_arg(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("records/minute"), "{}", stdout(&out));

    let m = bench::parse_metrics_csv(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(m.records_total, 6000);
    assert_eq!(m.warehouse_rows + m.dead_letters, 6000);
    assert_eq!(m.final_lag, 0);
    assert!(m.throughput_rpm > 0.0);
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let out = run(&[
        "process",
        "--input", path_arg(&dir.path().join("missing.csv")),
        "--warehouse", path_arg(&dir.path().join("wh")),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error: "));

    let out = run(&["bench", "--records", "0"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    // Two rows cannot seed three clusters.
    let tiny = dir.path().join("tiny.csv");
    let out = run(&["generate", "--records", "2", "--out", path_arg(&tiny)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&[
        "train",
        "--input", path_arg(&tiny),
        "--out", path_arg(&dir.path().join("m.json")),
    ]);
    assert_eq!(code(&out), 6, "{}", stderr(&out));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[broker]\ncompression = \"zip\"\n").unwrap();
    let out = run(&[
        "--config", path_arg(&bad),
        "generate", "--records", "1", "--out", path_arg(&dir.path().join("x.csv")),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
