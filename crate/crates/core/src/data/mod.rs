//! Dataset manifests, splitting, box-annotation export and synthetic data.

mod annotations;
mod manifest;
mod synth;

pub use annotations::{
    annotations_for_mask, masks_to_detection_annotations, AnnotationExport, BoxAnnotation,
};
pub use manifest::{
    natural_cmp, scan_dataset, split, DatasetKind, DatasetManifest, Layout, Sample, SplitOutcome, SplitSpec,
    SplitTag, SplitUnit, ValidationRecord,
};
pub use synth::{
    generate_scenes, generate_sequences, write_image_dataset, write_video_dataset, Blob, BlobRecord, Scene,
    SynthSequence, SynthSpec, SynthVideoSpec,
};
