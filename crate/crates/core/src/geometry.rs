//! Pixel-space boxes, binary masks and mask arithmetic.
//!
//! Boxes are half-open integer rectangles `[x_min, x_max) × [y_min, y_max)`
//! with the origin at the top-left corner and `x` running along columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::DegenerateBox(format!(
                "({x_min},{y_min},{x_max},{y_max}) has empty extent"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> u32 {
        self.x_min
    }
    pub fn y_min(&self) -> u32 {
        self.y_min
    }
    pub fn x_max(&self) -> u32 {
        self.x_max
    }
    pub fn y_max(&self) -> u32 {
        self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        (self.x_min as usize..self.x_max as usize).contains(&x)
            && (self.y_min as usize..self.y_max as usize).contains(&y)
    }

    /// True when the box lies fully inside a `width × height` image.
    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x_max as usize <= width && self.y_max as usize <= height
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x_min.max(other.x_min);
        let y0 = self.y_min.max(other.y_min);
        let x1 = self.x_max.min(other.x_max);
        let y1 = self.y_max.min(other.y_max);
        BBox::new(x0, y0, x1, y1).ok()
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [u32; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({},{},{},{})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// Intersection over union of two boxes by pixel area.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Scales `bbox` about its center, rounds outward and clips to the image.
pub fn expand_and_clip(bbox: &BBox, factor: f64, width: usize, height: usize) -> Result<BBox> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be positive, got {factor}"
        )));
    }
    // Absorbs float noise so exact integer results are not pushed outward.
    const SLACK: f64 = 1e-9;
    let scale_axis = |lo: u32, hi: u32, limit: usize| -> (u32, u32) {
        let center = (lo as f64 + hi as f64) / 2.0;
        let half = (hi - lo) as f64 * factor / 2.0;
        let new_lo = (center - half + SLACK).floor().max(0.0);
        let new_hi = (center + half - SLACK).ceil().min(limit as f64);
        (new_lo as u32, new_hi.max(0.0) as u32)
    };
    let (x0, x1) = scale_axis(bbox.x_min, bbox.x_max, width);
    let (y0, y1) = scale_axis(bbox.y_min, bbox.y_max, height);
    BBox::new(x0, y0, x1, y1).map_err(|_| {
        Error::DegenerateBox(format!(
            "{bbox} scaled by {factor} is empty inside {width}x{height}"
        ))
    })
}

/// Row-major `height × width` grid of foreground flags.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        BinaryMask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        let mut m = Self::zeros(height, width);
        m.data.fill(true);
        m
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("mask dimensions must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "mask buffer holds {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            data,
        })
    }

    /// Builds a mask from 8-bit intensities: values above 127 are foreground.
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::from_vec(height, width, gray.iter().map(|&v| v > 127).collect())
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    /// Filled box interior, clipped to the mask extent.
    pub fn from_box(height: usize, width: usize, bbox: &BBox) -> Self {
        Self::from_fn(height, width, |x, y| bbox.contains_pixel(x, y))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: other.height,
                right_w: other.width,
            });
        }
        Ok(())
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    /// Keeps only the foreground inside `bbox`.
    pub fn and_box(&self, bbox: &BBox) -> BinaryMask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !bbox.contains_pixel(x, y) {
                    out.data[y * self.width + x] = false;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(y, x))
    }

    /// 0/255 grayscale bytes.
    pub fn to_gray(&self) -> Vec<u8> {
        self.data.iter().map(|&v| if v { 255 } else { 0 }).collect()
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.same_shape(other)?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Tightest half-open box around all foreground pixels, `None` for an empty mask.
pub fn bbox_from_mask(mask: &BinaryMask) -> Option<BBox> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..mask.height {
        let row = &mask.data[y * mask.width..(y + 1) * mask.width];
        let Some(first) = row.iter().position(|&v| v) else {
            continue;
        };
        let last = row.iter().rposition(|&v| v).unwrap_or(first);
        bounds = Some(match bounds {
            None => (first, y, last, y),
            Some((x0, y0, x1, _)) => (x0.min(first), y0, x1.max(last), y),
        });
    }
    bounds.map(|(x0, y0, x1, y1)| BBox {
        x_min: x0 as u32,
        y_min: y0 as u32,
        x_max: x1 as u32 + 1,
        y_max: y1 as u32 + 1,
    })
}

/// One 4-connected foreground region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub bbox: BBox,
    pub area: usize,
    /// Mask holding only this component's pixels.
    pub mask: BinaryMask,
}

/// Labels 4-connected components of size ≥ `min_area`, ordered by `(y_min, x_min)` of their boxes.
pub fn connected_components(mask: &BinaryMask, min_area: usize) -> Vec<Component> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if mask.data[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        if pixels.len() < min_area {
            continue;
        }
        let mut comp = BinaryMask::zeros(h, w);
        for &p in &pixels {
            comp.data[p] = true;
        }
        let bbox = bbox_from_mask(&comp).expect("component is nonempty");
        out.push(Component {
            bbox,
            area: pixels.len(),
            mask: comp,
        });
    }
    out.sort_by_key(|c| (c.bbox.y_min, c.bbox.x_min));
    out
}

/// Per-pixel agreement counts between a prediction and a reference mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn mask_confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    pred.same_shape(gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// RGB video frame or still image with its position in a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    height: usize,
    width: usize,
    /// Interleaved RGB, row-major.
    pixels: Vec<u8>,
    pub index: usize,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>, index: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("frame dimensions must be positive".into()));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "frame buffer holds {} bytes, expected {}",
                pixels.len(),
                height * width * 3
            )));
        }
        Ok(Frame {
            height,
            width,
            pixels,
            index,
        })
    }

    /// Uniform gray frame, mostly useful where only the geometry matters.
    pub fn blank(height: usize, width: usize, index: usize) -> Self {
        Frame::new(height, width, vec![128; height * width * 3], index).expect("valid dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn check_mask(&self, mask: &BinaryMask) -> Result<()> {
        if mask.height() != self.height || mask.width() != self.width {
            return Err(Error::DimensionMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: mask.height(),
                right_w: mask.width(),
            });
        }
        Ok(())
    }

    /// FNV-1a digest of the pixel data, used to derive per-frame random streams.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in &self.pixels {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^ ((self.height as u64) << 32 | self.width as u64)
    }
}
