//! Box-only detector training labels derived from segmentation masks.
//!
//! One text file per image, one line per 4-connected component:
//! `0 cx cy w h`, normalized by the image size, six decimals.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{connected_components, BBox, BinaryMask};
use crate::raster::load_mask;

use super::manifest::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxAnnotation {
    pub fn from_box(bbox: &BBox, width: usize, height: usize) -> Self {
        let (wf, hf) = (width as f64, height as f64);
        BoxAnnotation {
            class_id: 0,
            cx: (bbox.x_min() + bbox.x_max()) as f64 / 2.0 / wf,
            cy: (bbox.y_min() + bbox.y_max()) as f64 / 2.0 / hf,
            w: bbox.width() as f64 / wf,
            h: bbox.height() as f64 / hf,
        }
    }

    pub fn to_line(&self) -> String {
        format!("{} {:.6} {:.6} {:.6} {:.6}", self.class_id, self.cx, self.cy, self.w, self.h)
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Dataset(format!("malformed annotation line '{line}'"));
        if parts.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(BoxAnnotation {
            class_id: parts[0].parse().map_err(|_| bad())?,
            cx: num(parts[1])?,
            cy: num(parts[2])?,
            w: num(parts[3])?,
            h: num(parts[4])?,
        })
    }

    /// Back to pixel space, rounding each edge to the nearest integer.
    pub fn denormalize(&self, width: usize, height: usize) -> Result<BBox> {
        let (wf, hf) = (width as f64, height as f64);
        let edge = |v: f64, limit: f64| v.round().clamp(0.0, limit) as u32;
        BBox::new(
            edge((self.cx - self.w / 2.0) * wf, wf),
            edge((self.cy - self.h / 2.0) * hf, hf),
            edge((self.cx + self.w / 2.0) * wf, wf),
            edge((self.cy + self.h / 2.0) * hf, hf),
        )
    }
}

/// Annotations for one mask, ordered by `(y_min, x_min)`.
pub fn annotations_for_mask(mask: &BinaryMask, min_area: usize) -> Vec<BoxAnnotation> {
    connected_components(mask, min_area)
        .iter()
        .map(|c| BoxAnnotation::from_box(&c.bbox, mask.width(), mask.height()))
        .collect()
}

pub fn render_annotation_file(annotations: &[BoxAnnotation]) -> String {
    annotations.iter().map(|a| a.to_line() + "\n").collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnnotationExport {
    pub written: Vec<PathBuf>,
    pub boxes: usize,
    pub errors: Vec<(String, String)>,
}

/// Writes `<out_dir>/<sample id>.txt` for every sample; unreadable masks are recorded and skipped.
pub fn masks_to_detection_annotations(
    manifest: &DatasetManifest,
    min_area: usize,
    out_dir: &Path,
) -> Result<AnnotationExport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<(String, Result<(PathBuf, usize)>)> = manifest
        .samples
        .par_iter()
        .map(|s| {
            let res = (|| {
                let mask = load_mask(&s.mask)?;
                let anns = annotations_for_mask(&mask, min_area);
                let path = out_dir.join(format!("{}.txt", s.id));
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                std::fs::write(&path, render_annotation_file(&anns)).map_err(|e| Error::io(&path, e))?;
                Ok((path, anns.len()))
            })();
            (s.id.clone(), res)
        })
        .collect();
    let mut export = AnnotationExport::default();
    for (id, res) in results {
        match res {
            Ok((path, n)) => {
                export.written.push(path);
                export.boxes += n;
            }
            Err(e) => export.errors.push((id, e.to_string())),
        }
    }
    Ok(export)
}
