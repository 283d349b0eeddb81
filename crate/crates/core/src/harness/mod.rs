//! Experiment runner: configs, evaluation runs, reports and overlays.

pub mod config;
pub mod eval;
pub mod overlay;
pub mod report;

pub use config::{DatasetRef, RunConfig, Selection};
pub use eval::{cmd_eval_images, cmd_eval_video, read_records, AggregateFile, EvalOutcome, ResultRecord};
pub use overlay::{cmd_overlay, render_overlay};
pub use report::{build_report, cmd_report, fixture, ReportDoc, ReportRequest, ReportTable, ResultSource};
