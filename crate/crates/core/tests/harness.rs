use std::fs;

use fednl::harness::{ExperimentConfig, Mode};
use fednl::harness::report::{render_comparison, render_run, series_files};
use fednl::harness::store::{load_run, write_run, ROUNDS};
use fednl::harness::run_experiment;
use fednl::Error;

fn config(mode: &str, extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        r#"
        name = "h"
        seed = 21
        [dataset]
        kind = "synthetic"
        classes = 3
        per_class = 60
        dim = 2
        separation = 6.0
        [partition]
        participants = 3
        [noise]
        kind = "symmetric"
        beta = 0.3
        participants = [0]
        [trainer]
        local_epochs = 2
        [federation]
        mode = "{mode}"
        rounds = 4
        {extra}
        "#
    ))
    .unwrap()
}

#[test]
fn run_directory_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let exp = run_experiment(&config("fednl", "")).unwrap();
    write_run(dir.path(), &exp, false).unwrap();
    let loaded = load_run(dir.path()).unwrap();
    assert_eq!(loaded.config, exp.config);
    assert_eq!(loaded.records, exp.report.records);
    assert_eq!(loaded.transcripts, exp.report.transcripts);
    assert_eq!(loaded.summary.rounds, 4);
    assert!(dir.path().join("models/global.model").exists());
    assert!(dir.path().join("models/participant-2.model").exists());

    let text = render_run(&loaded);
    assert!(text.contains("per round") && text.contains("confusion matrix"), "{text}");
    let files = series_files(&[loaded]);
    let acc = &files.iter().find(|f| f.name == "accuracy.tsv").unwrap().contents;
    assert_eq!(acc.lines().count(), 5);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c = config("fednl", "");
    write_run(a.path(), &run_experiment(&c).unwrap(), false).unwrap();
    write_run(b.path(), &run_experiment(&c).unwrap(), false).unwrap();
    for name in [ROUNDS, "exchange.transcript", "metrics.final", "config.echo"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let exp = run_experiment(&config("fednl", "")).unwrap();
    write_run(dir.path(), &exp, false).unwrap();
    let echoed = ExperimentConfig::load(&dir.path().join("config.echo")).unwrap();
    assert_eq!(run_experiment(&echoed).unwrap().report.records, exp.report.records);
}

#[test]
fn fedavg_mode_matches_fednl_with_everything_off() {
    let off = "run_procedure1 = false\nrun_procedure2 = false\nweighting = \"fedavg-size\"";
    let avg = run_experiment(&config("fedavg", "")).unwrap();
    let nl = run_experiment(&config("fednl", off)).unwrap();
    assert_eq!(avg.config.federation.mode, Mode::Fedavg);
    let text = |e: &fednl::harness::Experiment| fednl::harness::store::records_text(&e.report.records);
    assert_eq!(text(&avg), text(&nl));
}

#[test]
fn existing_directories_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let exp = run_experiment(&config("fedavg", "")).unwrap();
    write_run(dir.path(), &exp, false).unwrap();
    fs::write(dir.path().join("notes.txt"), "keep").unwrap();
    assert!(matches!(write_run(dir.path(), &exp, false), Err(Error::Exists(_))));
    write_run(dir.path(), &exp, true).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("notes.txt")).unwrap(), "keep");
}

#[test]
fn damaged_runs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_run(&dir.path().join("missing")), Err(Error::NotFound(_))));

    let exp = run_experiment(&config("fedavg", "")).unwrap();
    write_run(dir.path(), &exp, false).unwrap();
    let path = dir.path().join(ROUNDS);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{\"round\": 2, truncated";
    fs::write(&path, lines.join("\n")).unwrap();
    let err = load_run(dir.path()).unwrap_err().to_string();
    assert!(err.contains("round record 2"), "{err}");
}

#[test]
fn comparison_lists_every_run() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut runs = Vec::new();
    for (d, mode) in dirs.iter().zip(["fednl", "fedavg"]) {
        write_run(d.path(), &run_experiment(&config(mode, "")).unwrap(), false).unwrap();
        runs.push(load_run(d.path()).unwrap());
    }
    let text = render_comparison(&runs);
    assert!(text.contains("fednl") && text.contains("fedavg"), "{text}");
    assert!(text.contains("d_1"));
}
