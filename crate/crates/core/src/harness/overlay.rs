use std::path::{Path, PathBuf};

use image::Rgb;

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, Frame};
use crate::raster::{frame_image, load_frame, load_mask, save_rgb};

const GT_COLOR: [u8; 3] = [0, 255, 0];
const PRED_TINT: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, Default)]
pub struct OverlayOutcome {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Foreground pixels with a 4-neighbor outside the mask or the image.
pub fn contour(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    BinaryMask::from_fn(h, w, |x, y| {
        mask.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1))
    })
}

/// Prediction blended 50% toward red, ground-truth contour drawn in green on top.
pub fn render_overlay(frame: &Frame, gt: &BinaryMask, pred: &BinaryMask) -> Result<image::RgbImage> {
    frame.check_mask(gt)?;
    frame.check_mask(pred)?;
    let mut img = frame_image(frame);
    let edge = contour(gt);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (x, y) = (x as usize, y as usize);
        if edge.get(x, y) {
            *px = Rgb(GT_COLOR);
        } else if pred.get(x, y) {
            let Rgb(c) = *px;
            *px = Rgb(std::array::from_fn(|i| ((c[i] as u16 + PRED_TINT[i] as u16) / 2) as u8));
        }
    }
    Ok(img)
}

/// One PNG per sample under `out_dir`, reading `<pred_dir>/<sample id>.png`.
/// Missing or mismatched predictions are skipped with a warning.
pub fn cmd_overlay(manifest: &DatasetManifest, pred_dir: &Path, out_dir: &Path) -> Result<OverlayOutcome> {
    if !pred_dir.is_dir() {
        return Err(Error::Config(format!("prediction directory {} not found", pred_dir.display())));
    }
    let mut out = OverlayOutcome::default();
    for s in &manifest.samples {
        let pred_path = pred_dir.join(format!("{}.png", s.id));
        if !pred_path.exists() {
            let msg = format!("{}: no prediction at {}", s.id, pred_path.display());
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        let res = (|| {
            let frame = load_frame(&s.image, 0)?;
            let gt = load_mask(&s.mask)?;
            let pred = load_mask(&pred_path)?;
            let img = render_overlay(&frame, &gt, &pred)?;
            let path = out_dir.join(format!("{}.png", s.id));
            save_rgb(&path, &img)?;
            Ok::<_, Error>(path)
        })();
        match res {
            Ok(p) => out.written.push(p),
            Err(e) => {
                let msg = format!("{}: {e}", s.id);
                log::warn!("{msg}");
                out.warnings.push(msg);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> BinaryMask {
        BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y))
    }

    #[test]
    fn contour_of_square_is_its_ring() {
        let c = contour(&square());
        assert_eq!(c.count(), 12);
        assert!(!c.get(3, 3));
    }

    #[test]
    fn perfect_prediction_tints_inside_contour() {
        let f = Frame::blank(8, 8, 0);
        let img = render_overlay(&f, &square(), &square()).unwrap();
        assert_eq!(img.get_pixel(2, 2).0, GT_COLOR);
        assert_eq!(img.get_pixel(3, 3).0, [191, 64, 64]);
        assert_eq!(img.get_pixel(0, 0).0, [128, 128, 128]);
    }

    #[test]
    fn empty_prediction_draws_contour_only() {
        let f = Frame::blank(8, 8, 0);
        let img = render_overlay(&f, &square(), &BinaryMask::zeros(8, 8)).unwrap();
        assert_eq!(img.get_pixel(2, 2).0, GT_COLOR);
        assert_eq!(img.get_pixel(3, 3).0, [128, 128, 128]);
    }

    #[test]
    fn mismatched_prediction_is_rejected() {
        let f = Frame::blank(8, 8, 0);
        assert!(render_overlay(&f, &square(), &BinaryMask::zeros(4, 4)).is_err());
    }
}
