use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterClient;
use crate::backends::{segment_image, Detector, DetectorKind, SegmenterChoice, Segmenter, SharedAdapter};
use crate::data::{DatasetKind, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, Frame};
use crate::metrics::{aggregate, DatasetReport, FrameMetrics, Grouping, MetricConfig, SampleMetrics};
use crate::prompt_bridge::{detections_to_prompts, resolve_empty, BridgePolicy};
use crate::raster::{load_frame, load_mask, save_mask};
use crate::video::{run_sequence, Provenance, PromptSelection, SequenceInput, VideoPolicy};

use super::config::{DatasetRef, RunConfig};

/// Metric conventions written next to every aggregate.
pub const CONVENTIONS: [(&str, &str); 4] = [
    ("both_empty", "iou, dice, precision, recall and F are 1 when prediction and ground truth are both empty"),
    ("f_beta_mn", "mean of F_beta (beta^2 from config) over the threshold sweep"),
    ("f2", "F with beta^2 = 4"),
    ("mean", "per-image arithmetic mean; video: per-sequence mean, then mean over sequences"),
];

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub sample_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<FrameMetrics<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    pub prompts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Wall-clock milliseconds per stage.
    pub timing_ms: BTreeMap<String, f64>,
    pub config_digest: String,
}

impl ResultRecord {
    fn failed(sample: &Sample, error: &Error, digest: &str) -> Self {
        ResultRecord {
            sample_id: sample.id.clone(),
            sequence_id: sample.sequence.clone(),
            subset: sample.subset.clone(),
            metrics: None,
            provenance: None,
            prompts: 0,
            error: Some(error.to_string()),
            timing_ms: BTreeMap::new(),
            config_digest: digest.to_string(),
        }
    }

    pub fn sample_metrics(&self) -> Option<SampleMetrics<f64>> {
        self.metrics.map(|m| SampleMetrics {
            sample_id: self.sample_id.clone(),
            sequence_id: self.sequence_id.clone(),
            metrics: m,
        })
    }
}

/// Sequence-level facts for video runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub sequence_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    pub frames: usize,
    pub prompt_frame: Option<usize>,
    pub prompts_issued: usize,
    pub detector_frames: usize,
    /// `until_first_hit`, `fixed_index` or `every_<k>_frames`.
    pub detection_mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Contents of `aggregate.json`; free of timing so reruns compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFile {
    pub dataset: String,
    pub kind: DatasetKind,
    pub config_digest: String,
    pub conventions: BTreeMap<String, String>,
    pub evaluated: usize,
    pub failed: Vec<String>,
    pub report: Option<DatasetReport<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub subsets: BTreeMap<String, DatasetReport<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequences: Vec<SequenceInfo>,
}

#[derive(Debug, Clone)]
pub struct DatasetOutcome {
    pub aggregate: AggregateFile,
    pub records: Vec<ResultRecord>,
    pub dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub config_digest: String,
    pub datasets: Vec<DatasetOutcome>,
}

impl EvalOutcome {
    pub fn failures(&self) -> usize {
        self.datasets.iter().map(|d| d.aggregate.failed.len()).sum()
    }
}

/// Detector and segmenter built once per run; one adapter connection is
/// shared when detector and segmenter point at the same address.
pub struct Backends {
    pub detector: Detector,
    pub segmenter: Segmenter,
}

impl Backends {
    pub fn connect(cfg: &RunConfig) -> Result<Self> {
        let mut pool: BTreeMap<String, SharedAdapter> = BTreeMap::new();
        let mut get = |addr: &str| -> Result<SharedAdapter> {
            let key = addr.strip_prefix("tcp://").unwrap_or(addr).to_string();
            if let Some(a) = pool.get(&key) {
                return Ok(a.clone());
            }
            let a = Arc::new(Mutex::new(AdapterClient::connect(addr)?));
            pool.insert(key, a.clone());
            Ok(a)
        };
        let det_adapter = match (&cfg.detector.kind, &cfg.detector.address) {
            (DetectorKind::External, Some(addr)) => Some(get(addr)?),
            _ => None,
        };
        let seg_adapter = match &cfg.segmenter {
            SegmenterChoice::External(addr) => Some(get(addr)?),
            _ => None,
        };
        Ok(Backends {
            detector: Detector::new(cfg.detector.clone(), det_adapter),
            segmenter: Segmenter::from_choice(&cfg.segmenter, seg_adapter)?,
        })
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

struct ImageResult {
    record: ResultRecord,
    pred: BinaryMask,
}

fn eval_image_sample(
    sample: &Sample,
    backends: &Backends,
    bridge: &BridgePolicy,
    metric_cfg: &MetricConfig<f64>,
    digest: &str,
) -> Result<ImageResult> {
    let mut timing = BTreeMap::new();
    let start = Instant::now();
    let t = Instant::now();
    let frame = load_frame(&sample.image, 0)?;
    let gt = load_mask(&sample.mask)?;
    frame.check_mask(&gt)?;
    timing.insert("load".to_string(), ms_since(t));

    let t = Instant::now();
    let dets = backends.detector.run(&frame, Some(&gt))?;
    timing.insert("detect".to_string(), ms_since(t));

    let t = Instant::now();
    let prompts = detections_to_prompts(&dets, bridge, 0, Some((frame.height(), frame.width())))?;
    timing.insert("bridge".to_string(), ms_since(t));

    let t = Instant::now();
    let (pred, provenance) = if prompts.empty_flag {
        (resolve_empty(&prompts, frame.height(), frame.width())?, "empty_no_detection")
    } else {
        let masks = segment_image(&frame, &prompts.boxes(), &backends.segmenter, Some(&gt))?;
        (
            crate::video::merge_object_masks(&masks, (frame.height(), frame.width()))?,
            "segmented",
        )
    };
    timing.insert("segment".to_string(), ms_since(t));

    let t = Instant::now();
    let metrics = FrameMetrics::compute(&pred, &gt, metric_cfg)?;
    timing.insert("metrics".to_string(), ms_since(t));
    timing.insert("total".to_string(), ms_since(start));

    Ok(ImageResult {
        record: ResultRecord {
            sample_id: sample.id.clone(),
            sequence_id: sample.sequence.clone(),
            subset: sample.subset.clone(),
            metrics: Some(metrics),
            provenance: Some(provenance.to_string()),
            prompts: prompts.len(),
            error: None,
            timing_ms: timing,
            config_digest: digest.to_string(),
        },
        pred,
    })
}

fn dataset_dir(out: &Path, name: &str) -> PathBuf {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    out.join(safe)
}

fn write_records(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_prediction(dir: &Path, sample_id: &str, mask: &BinaryMask) -> Result<()> {
    save_mask(&dir.join("predictions").join(format!("{sample_id}.png")), mask)
}

fn conventions() -> BTreeMap<String, String> {
    CONVENTIONS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn successful(records: &[ResultRecord]) -> Vec<SampleMetrics<f64>> {
    records.iter().filter_map(ResultRecord::sample_metrics).collect()
}

fn failed_ids(records: &[ResultRecord]) -> Vec<String> {
    records.iter().filter(|r| r.error.is_some()).map(|r| r.sample_id.clone()).collect()
}

fn load_selected(dref: &DatasetRef) -> Result<(DatasetManifest, Vec<Sample>)> {
    let manifest = dref.load()?;
    let selected: Vec<Sample> = dref.selected(&manifest).into_iter().cloned().collect();
    if selected.is_empty() {
        return Err(Error::NoEvaluationSamples);
    }
    Ok((manifest, selected))
}

fn eval_image_dataset(
    cfg: &RunConfig,
    dref: &DatasetRef,
    backends: &Backends,
    digest: &str,
) -> Result<DatasetOutcome> {
    let (manifest, selected) = load_selected(dref)?;
    let dir = dataset_dir(&cfg.output_dir, &manifest.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let results: Vec<ResultRecord> = selected
        .par_iter()
        .map(|s| {
            let res = eval_image_sample(s, backends, &cfg.bridge, &cfg.metrics, digest)
                .and_then(|r| save_prediction(&dir, &s.id, &r.pred).map(|_| r.record));
            res.unwrap_or_else(|e| {
                log::warn!("sample {} failed: {e}", s.id);
                ResultRecord::failed(s, &e, digest)
            })
        })
        .collect();
    write_records(&dir.join("records.jsonl"), &results)?;

    let ok = successful(&results);
    let report = if ok.is_empty() { None } else { Some(aggregate(&ok, Grouping::Flat)?) };
    let agg = AggregateFile {
        dataset: manifest.name.clone(),
        kind: manifest.kind,
        config_digest: digest.to_string(),
        conventions: conventions(),
        evaluated: ok.len(),
        failed: failed_ids(&results),
        report,
        subsets: BTreeMap::new(),
        sequences: Vec::new(),
    };
    write_json(&dir.join("aggregate.json"), &agg)?;
    Ok(DatasetOutcome {
        aggregate: agg,
        records: results,
        dir,
    })
}

/// Still-image evaluation over every configured dataset.
pub fn cmd_eval_images(cfg: &RunConfig) -> Result<EvalOutcome> {
    run_eval(cfg, DatasetKind::Image)
}

/// Video evaluation over every configured dataset, with per-subset reports.
pub fn cmd_eval_video(cfg: &RunConfig) -> Result<EvalOutcome> {
    run_eval(cfg, DatasetKind::Video)
}

fn run_eval(cfg: &RunConfig, kind: DatasetKind) -> Result<EvalOutcome> {
    if cfg.datasets.is_empty() {
        return Err(Error::Config("no datasets configured".into()));
    }
    let digest = cfg.write_snapshot()?;
    let backends = Backends::connect(cfg)?;
    let mut datasets = Vec::with_capacity(cfg.datasets.len());
    for dref in &cfg.datasets {
        let outcome = match kind {
            DatasetKind::Image => eval_image_dataset(cfg, dref, &backends, &digest)?,
            DatasetKind::Video => eval_video_dataset(cfg, dref, &backends, &digest)?,
        };
        log::info!(
            "{}: {} evaluated, {} failed",
            outcome.aggregate.dataset,
            outcome.aggregate.evaluated,
            outcome.aggregate.failed.len()
        );
        datasets.push(outcome);
    }
    Ok(EvalOutcome {
        config_digest: digest,
        datasets,
    })
}

fn detection_mode(policy: &VideoPolicy) -> String {
    match (policy.prompt_selection, policy.re_detect_interval) {
        (_, k) if k > 0 => format!("every_{k}_frames"),
        (PromptSelection::FirstDetection, _) => "until_first_hit".into(),
        (PromptSelection::FixedIndex(_), _) => "fixed_index".into(),
    }
}

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Propagated => "propagated",
        Provenance::EmptyNoPrompt => "empty_no_prompt",
        Provenance::EmptyNoDetection => "empty_no_detection",
    }
}

fn eval_sequence(
    seq_id: &str,
    samples: &[&Sample],
    cfg: &RunConfig,
    backends: &Backends,
    digest: &str,
    dir: &Path,
) -> Result<(SequenceInfo, Vec<ResultRecord>)> {
    let t = Instant::now();
    let frames: Vec<Frame> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| load_frame(&s.image, i))
        .collect::<Result<_>>()?;
    let gt: Vec<BinaryMask> = samples.iter().map(|s| load_mask(&s.mask)).collect::<Result<_>>()?;
    for (f, g) in frames.iter().zip(&gt) {
        f.check_mask(g)?;
    }
    let load_ms = ms_since(t);

    let t = Instant::now();
    let run = run_sequence(
        &SequenceInput {
            sequence_id: seq_id,
            frames: &frames,
            gt: Some(&gt),
        },
        &backends.detector,
        &cfg.bridge,
        &cfg.video,
        &backends.segmenter,
    )?;
    let run_ms = ms_since(t);

    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let t = Instant::now();
        let metrics = FrameMetrics::compute(&run.masks[i], &gt[i], &cfg.metrics)?;
        save_prediction(dir, &s.id, &run.masks[i])?;
        let mut timing = BTreeMap::new();
        timing.insert("metrics".to_string(), ms_since(t));
        timing.insert("sequence_load".to_string(), load_ms);
        timing.insert("sequence_run".to_string(), run_ms);
        records.push(ResultRecord {
            sample_id: s.id.clone(),
            sequence_id: Some(seq_id.to_string()),
            subset: s.subset.clone(),
            metrics: Some(metrics),
            provenance: Some(provenance_name(run.provenance[i]).to_string()),
            prompts: if run.prompt_frame == Some(i) { run.prompts_issued } else { 0 },
            error: None,
            timing_ms: timing,
            config_digest: digest.to_string(),
        });
    }
    let info = SequenceInfo {
        sequence_id: seq_id.to_string(),
        subset: samples[0].subset.clone(),
        frames: samples.len(),
        prompt_frame: run.prompt_frame,
        prompts_issued: run.prompts_issued,
        detector_frames: run.detector_frames,
        detection_mode: detection_mode(&cfg.video),
        error: None,
    };
    Ok((info, records))
}

fn eval_video_dataset(
    cfg: &RunConfig,
    dref: &DatasetRef,
    backends: &Backends,
    digest: &str,
) -> Result<DatasetOutcome> {
    let (manifest, selected) = load_selected(dref)?;
    if manifest.kind != DatasetKind::Video {
        return Err(Error::Config(format!("dataset {} is not a video dataset", manifest.name)));
    }
    let dir = dataset_dir(&cfg.output_dir, &manifest.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let refs: Vec<&Sample> = selected.iter().collect();
    let groups: Vec<(String, Vec<&Sample>)> = DatasetManifest::sequences(&refs).into_iter().collect();

    let per_seq: Vec<(SequenceInfo, Vec<ResultRecord>)> = groups
        .par_iter()
        .map(|(id, samples)| {
            eval_sequence(id, samples, cfg, backends, digest, &dir).unwrap_or_else(|e| {
                log::warn!("sequence {id} failed: {e}");
                let info = SequenceInfo {
                    sequence_id: id.clone(),
                    subset: samples[0].subset.clone(),
                    frames: samples.len(),
                    prompt_frame: None,
                    prompts_issued: 0,
                    detector_frames: 0,
                    detection_mode: detection_mode(&cfg.video),
                    error: Some(e.to_string()),
                };
                (info, samples.iter().map(|s| ResultRecord::failed(s, &e, digest)).collect())
            })
        })
        .collect();

    let mut sequences = Vec::with_capacity(per_seq.len());
    let mut records = Vec::new();
    for (info, recs) in per_seq {
        sequences.push(info);
        records.extend(recs);
    }
    write_records(&dir.join("records.jsonl"), &records)?;
    write_records_sequences(&dir.join("sequences.jsonl"), &sequences)?;

    let ok = successful(&records);
    let report = if ok.is_empty() { None } else { Some(aggregate(&ok, Grouping::BySequence)?) };
    let subsets = subset_reports(&records)?;
    let agg = AggregateFile {
        dataset: manifest.name.clone(),
        kind: manifest.kind,
        config_digest: digest.to_string(),
        conventions: conventions(),
        evaluated: ok.len(),
        failed: failed_ids(&records),
        report,
        subsets,
        sequences,
    };
    write_json(&dir.join("aggregate.json"), &agg)?;
    Ok(DatasetOutcome {
        aggregate: agg,
        records,
        dir,
    })
}

fn write_records_sequences(path: &Path, seqs: &[SequenceInfo]) -> Result<()> {
    let text: String = seqs
        .iter()
        .map(|s| serde_json::to_string(s).map(|l| l + "\n"))
        .collect::<std::result::Result<_, _>>()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// By-sequence report per subset tag; empty when no record carries a tag.
pub fn subset_reports(records: &[ResultRecord]) -> Result<BTreeMap<String, DatasetReport<f64>>> {
    let mut groups: BTreeMap<String, Vec<SampleMetrics<f64>>> = BTreeMap::new();
    for r in records {
        if let (Some(tag), Some(m)) = (&r.subset, r.sample_metrics()) {
            groups.entry(tag.clone()).or_default().push(m);
        }
    }
    groups
        .into_iter()
        .map(|(tag, ms)| Ok((tag, aggregate(&ms, Grouping::BySequence)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, seq: &str, subset: &str, dice: f64) -> ResultRecord {
        let mut v = [1.0; 9];
        v[1] = dice;
        ResultRecord {
            sample_id: id.into(),
            sequence_id: Some(seq.into()),
            subset: Some(subset.into()),
            metrics: Some(FrameMetrics::from_values(v)),
            provenance: None,
            prompts: 0,
            error: None,
            timing_ms: BTreeMap::new(),
            config_digest: String::new(),
        }
    }

    #[test]
    fn subsets_make_separate_blocks() {
        let recs = vec![
            rec("a/0", "a", "Easy", 1.0),
            rec("b/0", "b", "Easy", 0.5),
            rec("c/0", "c", "Hard", 0.0),
        ];
        let s = subset_reports(&recs).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s["Easy"].sequences, 2);
        assert_eq!(s["Easy"].mean.dice, 0.75);
        assert_eq!(s["Hard"].sequences, 1);
    }

    #[test]
    fn record_json_round_trip() {
        let r = rec("a/0", "a", "Easy", 0.25);
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<ResultRecord>(&line).unwrap(), r);
    }

    #[test]
    fn detection_modes() {
        let mut p = VideoPolicy::default();
        assert_eq!(detection_mode(&p), "until_first_hit");
        p.re_detect_interval = 4;
        assert_eq!(detection_mode(&p), "every_4_frames");
    }
}
