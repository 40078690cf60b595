mod common;

use std::fs;

use common::*;
use optimas_core::config::load_config;
use optimas_core::corpus::{validate_record, Corpus};
use optimas_core::ear::Measured;
use optimas_core::gateway::network_attempts;
use optimas_core::harness::{RunManifest, RunStatus};
use optimas_core::pipeline::{find_run, prepare, reprofile, run_pipeline, RunOptions, Stage};
use optimas_core::ExecMode;

const ALL: &str = "{ pc: true, ia: true, roofline: true }";

#[test]
fn improved_run_lands_in_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(&write_app(tmp.path(), ALL, &app_reply("0.005"))).unwrap();
    let before = network_attempts();
    let out = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(network_attempts(), before);

    assert_eq!(out.manifest.status, RunStatus::Improved, "{:?}", out.manifest.error);
    assert!(out.manifest.improvement_percent.unwrap() > 0.0);
    let m = RunManifest::load(&out.run_dir).unwrap();
    for name in [
        "prompt_1.txt",
        "response.txt",
        "optimized.src",
        "baseline_stats.json",
        "opt_stats.json",
        "ear_report.json",
        "corpus_record.json",
        "analysis.json",
        "prompt_package.json",
        "reference.json",
        "diagnostics/bundle.json",
        "logs/attempt_1.log",
    ] {
        assert!(m.digests.contains_key(name), "missing {name}");
    }
    assert!(!cfg.output_root.join("work").exists());

    let corpus = Corpus::new(&cfg.output_root);
    assert_eq!(corpus.len().unwrap(), 1);
    let record = corpus.record(&corpus.entries().unwrap()[0]).unwrap();
    assert_eq!(record, out.record);
    let v = validate_record(&record, &cfg.output_root);
    assert!(v.is_empty(), "{v:?}");
    assert_eq!(record.applied.len(), 1);
    assert_eq!(record.ignored.len(), 1);
    assert!(record.opt_rt.ends_with("ms"));

    let ear = out.ear.unwrap();
    assert_eq!(ear.evidence_coverage, 1.0);
    assert_eq!(ear.localization_agreement, 1.0);
    assert_eq!(ear.implemented, 1);
    assert_eq!(ear.directional_consistency, Measured::NotMeasured);

    let id = m.run_uuid.to_string();
    assert_eq!(find_run(&cfg.output_root, &id).unwrap(), out.run_dir);
}

#[test]
fn disabled_sources_stay_out_of_the_prompt() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(&write_app(tmp.path(), "{ pc: true, ia: false, roofline: false }", "")).unwrap();
    let (_, analysis, pkg, _) = prepare(&cfg, ExecMode::Sequential).unwrap();
    assert!(pkg.prompt_text.contains("PC-01"));
    assert!(!pkg.prompt_text.contains("IA-0"), "{}", pkg.prompt_text);
    assert!(!pkg.prompt_text.contains("RL-0"));
    assert!(analysis.counters.is_empty() && analysis.roofline.is_empty());
    assert_eq!(analysis.hot.selected, vec!["saxpy".to_string()]);
}

#[test]
fn persistent_compile_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let broken = reply("if then (\n", &[], &[]);
    let cfg = load_config(&write_app(tmp.path(), ALL, &broken)).unwrap();
    let out = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(out.manifest.status, RunStatus::CompileFailed);
    assert_eq!(out.compile.unwrap().attempts.len(), 4);
    for i in 1..=4 {
        assert!(out.run_dir.join(format!("prompt_{i}.txt")).exists());
    }
    let p4 = fs::read_to_string(out.run_dir.join("prompt_4.txt")).unwrap();
    assert!(p4.contains("# Compiler Feedback"));
    assert!(out.record.opt_rt.is_empty());
    assert!(!out.record.errors.is_empty());
    assert_eq!(Corpus::new(&cfg.output_root).len().unwrap(), 1);
}

#[test]
fn wrong_output_is_invalid() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = app_reply("0.005").replace("result 42", "result 43");
    let cfg = load_config(&write_app(tmp.path(), ALL, &bad)).unwrap();
    let out = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(out.manifest.status, RunStatus::InvalidOutput);
    assert!(out.manifest.improvement_percent.is_none());
    assert!(out.record.opt_rt.is_empty());
}

#[test]
fn uncompilable_original_is_stage_tagged() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_app(tmp.path(), ALL, &app_reply("0.005"));
    fs::write(tmp.path().join("app.sh"), "if then (\n").unwrap();
    let cfg = load_config(&path).unwrap();
    let err = run_pipeline(&cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.stage, Stage::Evaluate);
    let dir = err.run_dir.expect("run dir kept");
    let m = RunManifest::load(&dir).unwrap();
    assert_eq!(m.status, RunStatus::RuntimeError);
    assert!(m.error.unwrap().starts_with("evaluate stage:"));
}

#[test]
fn missing_profile_fails_before_any_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_app(tmp.path(), ALL, "");
    fs::remove_file(tmp.path().join("profile/kernels.csv")).unwrap();
    let cfg = load_config(&path).unwrap();
    let err = run_pipeline(&cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.stage, Stage::Ingest);
    assert!(err.run_dir.is_none());
    assert!(!cfg.output_root.join("runs").exists());
}

#[test]
fn mock_runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(&write_app(tmp.path(), ALL, &app_reply("0.005"))).unwrap();
    let a = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let b = run_pipeline(&cfg, &RunOptions { mode: ExecMode::Sequential, ..Default::default() }).unwrap();
    assert_ne!(a.run_dir, b.run_dir);
    for name in ["prompt_1.txt", "response.txt", "optimized.src", "ear_report.json", "analysis.json"] {
        assert_eq!(a.manifest.digests[name], b.manifest.digests[name], "{name}");
    }
    assert_eq!(a.record.applied, b.record.applied);
    assert_eq!(Corpus::new(&cfg.output_root).len().unwrap(), 2);
}

#[test]
fn reprofile_fills_direction_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(&write_app(tmp.path(), ALL, &app_reply("0.005"))).unwrap();
    let out = run_pipeline(&cfg, &RunOptions::default()).unwrap();

    let post = tmp.path().join("post");
    let mut bundle = optimas_core::ingest::DiagnosticBundle::read_dir(&out.run_dir.join("diagnostics")).unwrap();
    for s in bundle.stalls.iter_mut().filter(|s| s.stall_type == "stall_wait") {
        s.cycles /= 4;
    }
    bundle.write_dir(&post).unwrap();

    let r1 = reprofile(&out.run_dir, Some(&post)).unwrap();
    assert_eq!(r1.directional_consistency, Measured::Value(1.0));
    let r2 = reprofile(&out.run_dir, Some(&post)).unwrap();
    assert_eq!(r1, r2);
    let m = RunManifest::load(&out.run_dir).unwrap();
    assert!(m.digests.contains_key("post/bundle.json"));

    let err = reprofile(&out.run_dir, None).unwrap_err();
    assert_eq!(err.stage, Stage::Ingest);
}
