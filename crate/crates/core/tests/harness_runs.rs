use std::path::{Path, PathBuf};

use polyprompt::data::{split, write_image_dataset, DatasetManifest, SplitSpec, SynthSpec};
use polyprompt::harness::{
    cmd_eval_images, cmd_overlay, read_records, AggregateFile, DatasetRef, RunConfig, Selection,
};
use polyprompt::metrics::{aggregate, Grouping};
use polyprompt::Error;

fn dataset(dir: &Path, n: usize) -> PathBuf {
    write_image_dataset(
        &dir.join("data"),
        &SynthSpec {
            n_scenes: n,
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap();
    dir.join("data/manifest.json")
}

fn config(manifest: PathBuf, out: PathBuf, select: Selection) -> RunConfig {
    RunConfig {
        output_dir: out,
        datasets: vec![DatasetRef {
            manifest: Some(manifest),
            select,
            ..Default::default()
        }],
        ..Default::default()
    }
}

#[test]
fn aggregate_equals_recomputation_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 12);
    let mut cfg = config(m, dir.path().join("out"), Selection::All);
    cfg.segmenter = "box_fill".parse().unwrap();
    let out = cmd_eval_images(&cfg.resolve().unwrap()).unwrap();
    let ds = &out.datasets[0];
    let records = read_records(&ds.dir.join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 12);
    assert!(records.iter().all(|r| r.config_digest == out.config_digest));
    let recomputed = aggregate(
        &records.iter().filter_map(|r| r.sample_metrics()).collect::<Vec<_>>(),
        Grouping::Flat,
    )
    .unwrap();
    let file: AggregateFile =
        serde_json::from_str(&std::fs::read_to_string(ds.dir.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(file.report.unwrap(), recomputed);
    assert!(recomputed.mean.dice < 1.0);
    let snapshot = std::fs::read_to_string(dir.path().join("out/config.sha256")).unwrap();
    assert_eq!(snapshot.trim(), out.config_digest);
    assert!(dir.path().join("out/config.resolved.toml").exists());
}

#[test]
fn dropping_every_detection_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 20);
    let mut cfg = config(m, dir.path().join("out"), Selection::All);
    cfg.detector.jitter.drop_prob = 1.0;
    let out = cmd_eval_images(&cfg.resolve().unwrap()).unwrap();
    let ds = &out.datasets[0];
    assert_eq!(ds.aggregate.report.as_ref().unwrap().mean.dice, 0.0);
    assert!(ds
        .records
        .iter()
        .all(|r| r.provenance.as_deref() == Some("empty_no_detection") && r.prompts == 0));
}

#[test]
fn empty_eval_split_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 4);
    let cfg = config(m, dir.path().join("out"), Selection::Eval);
    assert!(matches!(cmd_eval_images(&cfg.resolve().unwrap()), Err(Error::NoEvaluationSamples)));
}

#[test]
fn split_then_eval_uses_only_eval_samples() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 10);
    let manifest = DatasetManifest::load(&m).unwrap();
    let outcome = split(&manifest, &SplitSpec::default()).unwrap();
    let split_path = dir.path().join("split.json");
    outcome.manifest.save(&split_path).unwrap();
    let cfg = config(split_path, dir.path().join("out"), Selection::Eval);
    let out = cmd_eval_images(&cfg.resolve().unwrap()).unwrap();
    assert_eq!(out.datasets[0].records.len(), outcome.eval_units);
    assert_eq!(outcome.train_units, 8);
}

#[test]
fn broken_sample_is_recorded_and_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 5);
    let manifest = DatasetManifest::load(&m).unwrap();
    std::fs::write(&manifest.samples[2].image, b"not a png").unwrap();
    let cfg = config(m, dir.path().join("out"), Selection::All);
    let out = cmd_eval_images(&cfg.resolve().unwrap()).unwrap();
    let ds = &out.datasets[0];
    assert_eq!(out.failures(), 1);
    assert_eq!(ds.aggregate.failed, vec![manifest.samples[2].id.clone()]);
    assert_eq!(ds.aggregate.evaluated, 4);
    assert!(ds.records[2].error.is_some());
    assert_eq!(ds.aggregate.report.as_ref().unwrap().mean.dice, 1.0);
}

#[test]
fn overlays_from_run_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 3);
    let cfg = config(m.clone(), dir.path().join("out"), Selection::All);
    let out = cmd_eval_images(&cfg.resolve().unwrap()).unwrap();
    let preds = out.datasets[0].dir.join("predictions");
    std::fs::remove_file(preds.join("scene_0001.png")).unwrap();
    let manifest = DatasetManifest::load(&m).unwrap();
    let ov = cmd_overlay(&manifest, &preds, &dir.path().join("overlays")).unwrap();
    assert_eq!(ov.written.len(), 2);
    assert_eq!(ov.warnings.len(), 1);
    assert!(ov.warnings[0].contains("scene_0001"));
}
