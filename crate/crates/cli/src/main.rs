use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyprompt::backends::{DetectorKind, SegmenterChoice};
use polyprompt::data::{
    masks_to_detection_annotations, scan_dataset, split, write_image_dataset, write_video_dataset,
    DatasetManifest, Layout, SplitSpec, SplitUnit, SynthSpec, SynthVideoSpec,
};
use polyprompt::harness::{
    cmd_eval_images, cmd_eval_video, cmd_overlay, cmd_report, EvalOutcome, ReportRequest, ResultSource, RunConfig,
};
use polyprompt::Error;

#[derive(Parser)]
#[command(name = "polyprompt", version, about = "Detector-prompted polyp segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a benchmark directory and write its manifest.
    Ingest {
        root: PathBuf,
        #[arg(long)]
        layout: Layout,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Assign train/eval tags.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, value_parser = parse_unit, default_value = "sample")]
        unit: SplitUnit,
    },
    /// Write box-only detector labels from masks.
    ExportAnnotations {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        min_area: usize,
    },
    /// Evaluate still-image datasets
    EvalImages(EvalArgs),
    /// Evaluate video datasets with prompt propagation
    EvalVideo(EvalArgs),
    /// Render comparison tables.
    Report {
        /// Bundled table: images, sun_seg or polypgen.
        #[arg(long = "fixture")]
        fixtures: Vec<String>,
        #[arg(long = "fixture-file")]
        fixture_files: Vec<PathBuf>,
        /// METHOD=PATH to an aggregate.json.
        #[arg(long = "results", value_parser = parse_result)]
        results: Vec<ResultSource>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw ground-truth contours and tinted predictions.
    Overlay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        max_blobs: usize,
        /// Write sequences instead of still images.
        #[arg(long)]
        video: bool,
        #[arg(long, default_value_t = 3)]
        sequences: usize,
        #[arg(long, default_value_t = 12)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        appear_at: usize,
        /// Comma-separated subset tags assigned round-robin.
        #[arg(long, value_delimiter = ',')]
        subsets: Vec<String>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Layout for configured dataset roots that name none.
    #[arg(long)]
    layout: Option<Layout>,
    /// oracle, box_fill, gt_intersect, ellipse or external:ADDR.
    #[arg(long)]
    backend: Option<String>,
}

fn parse_unit(s: &str) -> Result<SplitUnit, String> {
    match s {
        "sample" => Ok(SplitUnit::Sample),
        "sequence" => Ok(SplitUnit::Sequence),
        _ => Err(format!("unknown split unit '{s}'")),
    }
}

fn parse_result(s: &str) -> Result<ResultSource, String> {
    let (method, path) = s.split_once('=').ok_or("expected METHOD=PATH")?;
    Ok(ResultSource {
        method: method.to_string(),
        aggregate: PathBuf::from(path),
    })
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::NoEvaluationSamples
        | Error::Dataset(_)
        | Error::Report(_)
        | Error::Json(_)
        | Error::DegenerateBox(_)
        | Error::DimensionMismatch { .. } => 2,
        _ => 1,
    }
}

fn resolve_config(args: &EvalArgs) -> polyprompt::Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(layout) = args.layout {
        for d in cfg.datasets.iter_mut().filter(|d| d.root.is_some() && d.layout.is_none()) {
            d.layout = Some(layout);
        }
    }
    if let Some(b) = &args.backend {
        let choice: SegmenterChoice = b.parse()?;
        if let SegmenterChoice::External(addr) = &choice {
            cfg.detector.kind = DetectorKind::External;
            cfg.detector.address = Some(addr.clone());
        } else {
            cfg.detector.kind = DetectorKind::Oracle;
            cfg.detector.address = None;
        }
        cfg.segmenter = choice;
    }
    cfg.resolve()
}

fn summarize(outcome: &EvalOutcome) -> u8 {
    for d in &outcome.datasets {
        let agg = &d.aggregate;
        let summary = serde_json::json!({
            "dataset": agg.dataset,
            "evaluated": agg.evaluated,
            "failed": agg.failed.len(),
            "mDice": agg.report.as_ref().map(|r| r.mean.dice),
            "mIoU": agg.report.as_ref().map(|r| r.mean.iou),
            "subsets": agg.subsets.iter().map(|(k, r)| (k.clone(), r.mean.dice)).collect::<std::collections::BTreeMap<_, _>>(),
            "output": d.dir,
        });
        println!("{summary}");
    }
    u8::from(outcome.failures() > 0)
}

fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.json")
}

fn run(cli: Cli) -> polyprompt::Result<u8> {
    match cli.command {
        Command::Ingest { root, layout, out, name } => {
            let mut m = scan_dataset(&root, layout)?;
            if let Some(n) = name {
                m.name = n;
            }
            m.save(&manifest_path(&out))?;
            for v in &m.validation {
                log::warn!("{}: {}", v.path.display(), v.issue);
            }
            println!("{} samples, {} excluded", m.samples.len(), m.validation.len());
            Ok(u8::from(!m.validation.is_empty()))
        }
        Command::Split {
            manifest,
            out,
            seed,
            train_fraction,
            unit,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let outcome = split(
                &m,
                &SplitSpec {
                    train_fraction,
                    seed,
                    unit,
                },
            )?;
            for w in &outcome.warnings {
                log::warn!("{w}");
            }
            outcome.manifest.save(&manifest_path(&out))?;
            println!("{} train units, {} eval units", outcome.train_units, outcome.eval_units);
            Ok(0)
        }
        Command::ExportAnnotations { manifest, out, min_area } => {
            let m = DatasetManifest::load(&manifest)?;
            let export = masks_to_detection_annotations(&m, min_area, &out)?;
            for (id, e) in &export.errors {
                log::warn!("{id}: {e}");
            }
            println!("{} files, {} boxes, {} errors", export.written.len(), export.boxes, export.errors.len());
            Ok(u8::from(!export.errors.is_empty()))
        }
        Command::EvalImages(args) => Ok(summarize(&cmd_eval_images(&resolve_config(&args)?)?)),
        Command::EvalVideo(args) => Ok(summarize(&cmd_eval_video(&resolve_config(&args)?)?)),
        Command::Report {
            fixtures,
            fixture_files,
            results,
            out,
        } => {
            let outcome = cmd_report(
                &ReportRequest {
                    fixtures,
                    fixture_files,
                    results,
                },
                &out,
            )?;
            println!("{}", outcome.markdown.display());
            println!("{}", outcome.csv.display());
            Ok(0)
        }
        Command::Overlay { manifest, predictions, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let outcome = cmd_overlay(&m, &predictions, &out)?;
            println!("{} overlays, {} skipped", outcome.written.len(), outcome.warnings.len());
            Ok(u8::from(!outcome.warnings.is_empty()))
        }
        Command::Synth {
            out,
            seed,
            scenes,
            size,
            max_blobs,
            video,
            sequences,
            frames,
            appear_at,
            subsets,
        } => {
            let m = if video {
                write_video_dataset(
                    &out,
                    &SynthVideoSpec {
                        sequences,
                        frames,
                        image_size: size,
                        seed,
                        appear_at,
                        subset_tags: subsets,
                    },
                )?
            } else {
                write_image_dataset(
                    &out,
                    &SynthSpec {
                        n_scenes: scenes,
                        image_size: size,
                        min_blobs: 1,
                        max_blobs,
                        seed,
                    },
                )?
            };
            println!("{} samples in {}", m.samples.len(), manifest_path(&out).display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
