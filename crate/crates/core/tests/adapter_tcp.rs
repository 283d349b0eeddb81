//! The line protocol over a real socket gives the same results as the in-process mocks.

use std::io::BufReader;
use std::net::TcpListener;
use std::path::Path;

use polyprompt::adapter::{serve, MockAdapter};
use polyprompt::backends::{DetectorKind, DetectorSpec, Direction, Jitter, MockKind, SegmenterChoice};
use polyprompt::data::{write_image_dataset, write_video_dataset, DatasetManifest, SynthSpec, SynthVideoSpec};
use polyprompt::harness::{cmd_eval_images, cmd_eval_video, DatasetRef, EvalOutcome, RunConfig, Selection};
use polyprompt::raster::{load_frame, load_mask};

const JITTER: Jitter = Jitter {
    shift_frac: 0.1,
    scale_frac: 0.05,
    drop_prob: 0.2,
    spurious_prob: 0.4,
};

/// Serves connections one after another on a background thread.
fn spawn_mock(manifest: &DatasetManifest, detector: DetectorSpec, kind: MockKind) -> String {
    let mut handler = MockAdapter::new(detector, kind);
    for s in &manifest.samples {
        handler.register_truth(&load_frame(&s.image, 0).unwrap(), load_mask(&s.mask).unwrap());
    }
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            let _ = serve(reader, stream, &mut handler);
        }
    });
    addr
}

fn config(manifest: &Path, out: &Path) -> RunConfig {
    RunConfig {
        seed: 5,
        output_dir: out.to_path_buf(),
        datasets: vec![DatasetRef {
            manifest: Some(manifest.to_path_buf()),
            select: Selection::All,
            ..Default::default()
        }],
        ..Default::default()
    }
}

fn metrics_of(out: &EvalOutcome) -> Vec<(String, Option<String>, [f64; 9])> {
    out.datasets[0]
        .records
        .iter()
        .map(|r| (r.sample_id.clone(), r.provenance.clone(), r.metrics.unwrap().values()))
        .collect()
}

#[test]
fn image_eval_through_socket_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_image_dataset(
        &dir.path().join("data"),
        &SynthSpec {
            n_scenes: 8,
            seed: 21,
            ..Default::default()
        },
    )
    .unwrap();
    let mpath = dir.path().join("data/manifest.json");

    let mut local = config(&mpath, &dir.path().join("local"));
    local.detector.jitter = JITTER;
    local.segmenter = SegmenterChoice::InscribedEllipse;
    let local = local.resolve().unwrap();
    let addr = spawn_mock(&manifest, local.detector.clone(), MockKind::InscribedEllipse);

    let mut remote = config(&mpath, &dir.path().join("remote"));
    remote.detector = DetectorSpec {
        kind: DetectorKind::External,
        address: Some(addr.clone()),
        ..Default::default()
    };
    remote.segmenter = SegmenterChoice::External(format!("tcp://{addr}"));
    let remote = remote.resolve().unwrap();

    let a = cmd_eval_images(&local).unwrap();
    let b = cmd_eval_images(&remote).unwrap();
    assert_eq!(b.failures(), 0);
    assert_eq!(metrics_of(&a), metrics_of(&b));
}

#[test]
fn video_eval_through_socket_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_video_dataset(
        &dir.path().join("vid"),
        &SynthVideoSpec {
            sequences: 2,
            frames: 8,
            seed: 9,
            appear_at: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let mpath = dir.path().join("vid/manifest.json");
    let addr = spawn_mock(&manifest, DetectorSpec::default(), MockKind::GtIntersect);

    for direction in [Direction::Forward, Direction::Bidirectional] {
        let mut local = config(&mpath, &dir.path().join(format!("local{direction:?}")));
        local.video.direction = direction;
        local.video.re_detect_interval = 3;
        let mut remote = local.clone();
        remote.output_dir = dir.path().join(format!("remote{direction:?}"));
        remote.detector.kind = DetectorKind::External;
        remote.detector.address = Some(addr.clone());
        remote.segmenter = SegmenterChoice::External(addr.clone());

        let a = cmd_eval_video(&local.resolve().unwrap()).unwrap();
        let b = cmd_eval_video(&remote.resolve().unwrap()).unwrap();
        assert_eq!(b.failures(), 0);
        assert_eq!(metrics_of(&a), metrics_of(&b));
        assert_eq!(a.datasets[0].aggregate.sequences, b.datasets[0].aggregate.sequences);
    }
}

#[test]
fn unreachable_adapter_is_reported() {
    let mut cfg = RunConfig {
        segmenter: SegmenterChoice::External("127.0.0.1:1".into()),
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_image_dataset(
        &dir.path().join("d"),
        &SynthSpec {
            n_scenes: 1,
            ..Default::default()
        },
    )
    .unwrap();
    cfg.datasets = vec![DatasetRef {
        manifest: Some(manifest.root.join("manifest.json")),
        select: Selection::All,
        ..Default::default()
    }];
    cfg.output_dir = dir.path().join("out");
    let err = cmd_eval_images(&cfg.resolve().unwrap()).unwrap_err();
    assert!(err.to_string().contains("cannot reach adapter"), "{err}");
}
