//! Detector and segmenter contracts with deterministic mock implementations.
//!
//! Real models are reached only through the line-delimited JSON adapter in
//! [`crate::adapter`]; everything else here is a mock that derives its output
//! from ground truth so pipelines can be checked exactly.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterClient;
use crate::error::{Error, Result};
use crate::geometry::{connected_components, expand_and_clip, BBox, BinaryMask, Frame};

/// Components below this size are ignored by the oracle detector.
pub const MIN_COMPONENT_AREA: usize = 16;

/// Per-frame growth of the mock tracking region and its cap.
pub const TRACK_GROWTH: f64 = 1.1;
pub const TRACK_GROWTH_CAP: f64 = 2.0;

pub const POLYP_CLASS: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(rename = "conf")]
    pub confidence: f64,
    #[serde(rename = "cls", default)]
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64) -> Self {
        Detection {
            bbox,
            confidence,
            class_id: POLYP_CLASS,
        }
    }
}

/// Total order: confidence descending, then smaller area, smaller `x_min`, smaller `y_min`.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.area().cmp(&b.bbox.area()))
        .then(a.bbox.x_min().cmp(&b.bbox.x_min()))
        .then(a.bbox.y_min().cmp(&b.bbox.y_min()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    Oracle,
    External,
}

/// Perturbation model applied to oracle boxes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Jitter {
    pub shift_frac: f64,
    pub scale_frac: f64,
    pub drop_prob: f64,
    pub spurious_prob: f64,
}

impl Jitter {
    pub fn is_zero(&self) -> bool {
        *self == Jitter::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    /// Adapter address for the external kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
    pub jitter: Jitter,
    pub seed: u64,
    pub input_size: u32,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            kind: DetectorKind::Oracle,
            address: None,
            jitter: Jitter::default(),
            seed: 0,
            input_size: 680,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        let j = &self.jitter;
        for (name, p) in [("drop_prob", j.drop_prob), ("spurious_prob", j.spurious_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        for (name, f) in [("shift_frac", j.shift_frac), ("scale_frac", j.scale_frac)] {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {f}")));
            }
        }
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        if self.kind == DetectorKind::External && self.address.is_none() {
            return Err(Error::Config("external detector needs an address".into()));
        }
        Ok(())
    }
}

pub type SharedAdapter = Arc<Mutex<AdapterClient>>;

fn with_adapter<R>(adapter: &SharedAdapter, f: impl FnOnce(&mut AdapterClient) -> Result<R>) -> Result<R> {
    let mut guard = adapter
        .lock()
        .map_err(|_| Error::backend("adapter connection poisoned by an earlier panic"))?;
    f(&mut guard)
}

fn frame_rng(seed: u64, frame: &Frame) -> ChaCha8Rng {
    // splitmix-style mixing of seed, frame position and content
    let mut z = seed ^ frame.content_hash().rotate_left(17) ^ (frame.index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn jittered_box(bbox: &BBox, j: &Jitter, rng: &mut ChaCha8Rng, width: usize, height: usize) -> Option<BBox> {
    let (w, h) = (bbox.width() as f64, bbox.height() as f64);
    let dx = rng.random_range(-1.0..=1.0) * j.shift_frac * w;
    let dy = rng.random_range(-1.0..=1.0) * j.shift_frac * h;
    let sw = 1.0 + rng.random_range(-1.0..=1.0) * j.scale_frac;
    let sh = 1.0 + rng.random_range(-1.0..=1.0) * j.scale_frac;
    let cx = (bbox.x_min() + bbox.x_max()) as f64 / 2.0 + dx;
    let cy = (bbox.y_min() + bbox.y_max()) as f64 / 2.0 + dy;
    let (hw, hh) = (w * sw / 2.0, h * sh / 2.0);
    let clip = |v: f64, limit: usize| v.round().clamp(0.0, limit as f64) as u32;
    BBox::new(
        clip(cx - hw, width),
        clip(cy - hh, height),
        clip(cx + hw, width),
        clip(cy + hh, height),
    )
    .ok()
}

/// Runs the configured detector on one frame.
///
/// The oracle kind emits one box per 4-connected ground-truth component
/// (confidence 1), then applies the seeded jitter model.
pub fn detect(
    frame: &Frame,
    spec: &DetectorSpec,
    gt: Option<&BinaryMask>,
    adapter: Option<&SharedAdapter>,
) -> Result<Vec<Detection>> {
    let mut dets = match spec.kind {
        DetectorKind::Oracle => {
            let gt = gt.ok_or_else(|| Error::Contract("oracle detector needs ground truth".into()))?;
            frame.check_mask(gt)?;
            oracle_detections(frame, spec, gt)
        }
        DetectorKind::External => {
            let adapter = adapter.ok_or_else(|| Error::backend("external detector has no live adapter"))?;
            let dets = with_adapter(adapter, |a| a.detect(frame, spec.input_size))?;
            for d in &dets {
                if !(0.0..=1.0).contains(&d.confidence) || !d.bbox.fits_within(frame.width(), frame.height()) {
                    return Err(Error::backend(format!(
                        "adapter returned invalid detection {} conf {}",
                        d.bbox, d.confidence
                    )));
                }
            }
            dets
        }
    };
    dets.sort_by(detection_order);
    Ok(dets)
}

/// A detector spec paired with its adapter connection, if any.
#[derive(Clone)]
pub struct Detector {
    pub spec: DetectorSpec,
    pub adapter: Option<SharedAdapter>,
}

impl Detector {
    pub fn new(spec: DetectorSpec, adapter: Option<SharedAdapter>) -> Self {
        Detector { spec, adapter }
    }

    pub fn run(&self, frame: &Frame, gt: Option<&BinaryMask>) -> Result<Vec<Detection>> {
        detect(frame, &self.spec, gt, self.adapter.as_ref())
    }
}

fn oracle_detections(frame: &Frame, spec: &DetectorSpec, gt: &BinaryMask) -> Vec<Detection> {
    let (w, h) = (frame.width(), frame.height());
    let j = &spec.jitter;
    let comps = connected_components(gt, MIN_COMPONENT_AREA);
    if j.is_zero() {
        return comps.iter().map(|c| Detection::new(c.bbox, 1.0)).collect();
    }
    let mut rng = frame_rng(spec.seed, frame);
    let mut out = Vec::with_capacity(comps.len() + 1);
    for c in &comps {
        let dropped = rng.random::<f64>() < j.drop_prob;
        let jittered = jittered_box(&c.bbox, j, &mut rng, w, h);
        if let (false, Some(b)) = (dropped, jittered) {
            out.push(Detection::new(b, 1.0));
        }
    }
    if rng.random::<f64>() < j.spurious_prob {
        let side = (rng.random_range(0.1..=0.3) * w.min(h) as f64).round().max(1.0) as u32;
        let side_x = side.min(w as u32);
        let side_y = side.min(h as u32);
        let x0 = rng.random_range(0..=w as u32 - side_x);
        let y0 = rng.random_range(0..=h as u32 - side_y);
        let conf = rng.random_range(0.3..=0.7);
        let b = BBox::new(x0, y0, x0 + side_x, y0 + side_y).expect("positive side");
        out.push(Detection::new(b, conf));
    }
    out
}

/// Which segmenter to use, as written in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SegmenterChoice {
    BoxFill,
    GtIntersect,
    InscribedEllipse,
    External(String),
}

impl FromStr for SegmenterChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "box_fill" => SegmenterChoice::BoxFill,
            "gt_intersect" | "oracle" => SegmenterChoice::GtIntersect,
            "ellipse" | "inscribed_ellipse" => SegmenterChoice::InscribedEllipse,
            other => match other.strip_prefix("external:") {
                Some(addr) if !addr.is_empty() => SegmenterChoice::External(addr.to_string()),
                _ => return Err(Error::Config(format!("unknown segmenter backend '{other}'"))),
            },
        })
    }
}

impl TryFrom<String> for SegmenterChoice {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SegmenterChoice> for String {
    fn from(c: SegmenterChoice) -> Self {
        c.to_string()
    }
}

impl fmt::Display for SegmenterChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmenterChoice::BoxFill => f.write_str("box_fill"),
            SegmenterChoice::GtIntersect => f.write_str("gt_intersect"),
            SegmenterChoice::InscribedEllipse => f.write_str("ellipse"),
            SegmenterChoice::External(a) => write!(f, "external:{a}"),
        }
    }
}

/// Mock segmenters, usable without any adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockKind {
    BoxFill,
    GtIntersect,
    InscribedEllipse,
}

impl MockKind {
    /// Mask for one box; `gt` is required by `GtIntersect` only.
    pub fn render(&self, bbox: &BBox, height: usize, width: usize, gt: Option<&BinaryMask>) -> Result<BinaryMask> {
        Ok(match self {
            MockKind::BoxFill => BinaryMask::from_box(height, width, bbox),
            MockKind::GtIntersect => {
                let gt = gt.ok_or_else(|| Error::Contract("gt_intersect segmenter needs ground truth".into()))?;
                gt.and_box(bbox)
            }
            MockKind::InscribedEllipse => inscribed_ellipse(bbox, height, width),
        })
    }
}

fn inscribed_ellipse(bbox: &BBox, height: usize, width: usize) -> BinaryMask {
    let cx = (bbox.x_min() + bbox.x_max()) as f64 / 2.0;
    let cy = (bbox.y_min() + bbox.y_max()) as f64 / 2.0;
    let rx = bbox.width() as f64 / 2.0;
    let ry = bbox.height() as f64 / 2.0;
    BinaryMask::from_fn(height, width, |x, y| {
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    })
}

/// A segmenter ready to run: a mock or a connected adapter.
#[derive(Clone)]
pub enum Segmenter {
    Mock(MockKind),
    External(SharedAdapter),
}

impl fmt::Debug for Segmenter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segmenter::Mock(k) => write!(f, "Mock({k:?})"),
            Segmenter::External(_) => f.write_str("External(..)"),
        }
    }
}

impl Segmenter {
    pub fn mock(kind: MockKind) -> Self {
        Segmenter::Mock(kind)
    }

    /// Builds the runtime segmenter; external choices reuse `adapter` when given, otherwise connect.
    pub fn from_choice(choice: &SegmenterChoice, adapter: Option<SharedAdapter>) -> Result<Self> {
        Ok(match choice {
            SegmenterChoice::BoxFill => Segmenter::Mock(MockKind::BoxFill),
            SegmenterChoice::GtIntersect => Segmenter::Mock(MockKind::GtIntersect),
            SegmenterChoice::InscribedEllipse => Segmenter::Mock(MockKind::InscribedEllipse),
            SegmenterChoice::External(addr) => match adapter {
                Some(a) => Segmenter::External(a),
                None => Segmenter::External(Arc::new(Mutex::new(AdapterClient::connect(addr)?))),
            },
        })
    }
}

/// One mask per box, in box order.
pub fn segment_image(
    frame: &Frame,
    boxes: &[BBox],
    backend: &Segmenter,
    gt: Option<&BinaryMask>,
) -> Result<Vec<BinaryMask>> {
    for b in boxes {
        if !b.fits_within(frame.width(), frame.height()) {
            return Err(Error::Contract(format!(
                "box {b} exceeds {}x{} frame",
                frame.width(),
                frame.height()
            )));
        }
    }
    if let Some(gt) = gt {
        frame.check_mask(gt)?;
    }
    if boxes.is_empty() {
        return Ok(Vec::new());
    }
    match backend {
        Segmenter::Mock(kind) => boxes
            .iter()
            .map(|b| kind.render(b, frame.height(), frame.width(), gt))
            .collect(),
        Segmenter::External(adapter) => {
            let masks = with_adapter(adapter, |a| a.segment(frame, boxes))?;
            if masks.len() != boxes.len() {
                return Err(Error::backend(format!(
                    "adapter returned {} masks for {} boxes",
                    masks.len(),
                    boxes.len()
                )));
            }
            for m in &masks {
                frame.check_mask(m).map_err(|e| Error::backend(e.to_string()))?;
            }
            Ok(masks)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Forward,
    Bidirectional,
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "bidirectional" => Ok(Direction::Bidirectional),
            other => Err(Error::InvalidArgument(format!("unknown direction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub frame: usize,
    pub object_id: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropagatedMask {
    pub frame: usize,
    pub object_id: u32,
    pub mask: BinaryMask,
}

enum SessionBackend {
    Mock(MockKind),
    External(SharedAdapter),
}

/// Stateful prompt-then-propagate handle over one frame sequence.
///
/// Single-owner and strictly sequential; distinct sessions are independent.
pub struct SegmenterSession {
    sequence_id: String,
    frames: usize,
    height: usize,
    width: usize,
    direction: Direction,
    prompts: Vec<PromptRecord>,
    backend: SessionBackend,
}

impl fmt::Debug for SegmenterSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SegmenterSession")
            .field("sequence_id", &self.sequence_id)
            .field("frames", &self.frames)
            .field("direction", &self.direction)
            .field("prompts", &self.prompts)
            .finish_non_exhaustive()
    }
}

pub fn open_session(
    sequence_id: &str,
    frames: &[Frame],
    backend: &Segmenter,
    direction: Direction,
) -> Result<SegmenterSession> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("sequence {sequence_id} has no frames")))?;
    if let Some(f) = frames
        .iter()
        .find(|f| f.height() != first.height() || f.width() != first.width())
    {
        return Err(Error::InvalidArgument(format!(
            "frame {} of {sequence_id} is {}x{}, expected {}x{}",
            f.index,
            f.height(),
            f.width(),
            first.height(),
            first.width()
        )));
    }
    let backend = match backend {
        Segmenter::Mock(kind) => SessionBackend::Mock(*kind),
        Segmenter::External(adapter) => {
            with_adapter(adapter, |a| a.video_init(frames, direction))?;
            SessionBackend::External(adapter.clone())
        }
    };
    Ok(SegmenterSession {
        sequence_id: sequence_id.to_string(),
        frames: frames.len(),
        height: first.height(),
        width: first.width(),
        direction,
        prompts: Vec::new(),
        backend,
    })
}

impl SegmenterSession {
    pub fn sequence_id(&self) -> &str {
        &self.sequence_id
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn prompts(&self) -> &[PromptRecord] {
        &self.prompts
    }

    pub fn object_ids(&self) -> BTreeSet<u32> {
        self.prompts.iter().map(|p| p.object_id).collect()
    }

    pub fn add_box_prompt(&mut self, frame: usize, object_id: u32, bbox: BBox) -> Result<()> {
        if frame >= self.frames {
            return Err(Error::Contract(format!(
                "prompt frame {frame} outside sequence of {} frames",
                self.frames
            )));
        }
        if self.prompts.iter().any(|p| p.frame == frame && p.object_id == object_id) {
            return Err(Error::Contract(format!(
                "object {object_id} already prompted at frame {frame}"
            )));
        }
        if !bbox.fits_within(self.width, self.height) {
            return Err(Error::Contract(format!(
                "prompt box {bbox} exceeds {}x{} frame",
                self.width, self.height
            )));
        }
        if let SessionBackend::External(adapter) = &self.backend {
            with_adapter(adapter, |a| a.video_prompt(frame, object_id, &bbox))
                .map_err(|e| e.with_context(format!("frame {frame}")))?;
        }
        self.prompts.push(PromptRecord {
            frame,
            object_id,
            bbox,
        });
        Ok(())
    }

    /// Frames covered for `object_id`, in increasing order.
    pub fn coverage(&self, object_id: u32) -> std::ops::Range<usize> {
        let first = self
            .prompts
            .iter()
            .filter(|p| p.object_id == object_id)
            .map(|p| p.frame)
            .min();
        match (first, self.direction) {
            (None, _) => 0..0,
            (Some(f), Direction::Forward) => f..self.frames,
            (Some(_), Direction::Bidirectional) => 0..self.frames,
        }
    }

    /// Masks for every covered `(frame, object)` in frame order, objects ascending within a frame.
    pub fn propagate(&mut self, gt_per_frame: Option<&[BinaryMask]>) -> Result<Vec<PropagatedMask>> {
        if self.prompts.is_empty() {
            return Err(Error::Contract("propagate called before any prompt".into()));
        }
        if let Some(gt) = gt_per_frame {
            if gt.len() != self.frames {
                return Err(Error::InvalidArgument(format!(
                    "{} ground-truth masks for {} frames",
                    gt.len(),
                    self.frames
                )));
            }
        }
        match &self.backend {
            SessionBackend::Mock(kind) => self.propagate_mock(*kind, gt_per_frame),
            SessionBackend::External(adapter) => {
                let records = with_adapter(adapter, |a| a.video_propagate())?;
                self.check_external_records(records)
            }
        }
    }

    fn reference_prompt(&self, object_id: u32, frame: usize) -> Option<&PromptRecord> {
        let mut own: Vec<&PromptRecord> = self.prompts.iter().filter(|p| p.object_id == object_id).collect();
        own.sort_by_key(|p| p.frame);
        own.iter()
            .rev()
            .find(|p| p.frame <= frame)
            .or_else(|| match self.direction {
                Direction::Bidirectional => own.first(),
                Direction::Forward => None,
            })
            .copied()
    }

    fn propagate_mock(&self, kind: MockKind, gt: Option<&[BinaryMask]>) -> Result<Vec<PropagatedMask>> {
        let objects = self.object_ids();
        let mut out = Vec::new();
        for frame in 0..self.frames {
            for &obj in &objects {
                if !self.coverage(obj).contains(&frame) {
                    continue;
                }
                let prompt = self.reference_prompt(obj, frame).expect("covered object has a prompt");
                let elapsed = frame.abs_diff(prompt.frame) as i32;
                let factor = TRACK_GROWTH.powi(elapsed).min(TRACK_GROWTH_CAP);
                let region = expand_and_clip(&prompt.bbox, factor, self.width, self.height)?;
                let frame_gt = gt.map(|g| &g[frame]);
                let mask = kind
                    .render(&region, self.height, self.width, frame_gt)
                    .map_err(|e| e.with_context(format!("frame {frame}")))?;
                out.push(PropagatedMask {
                    frame,
                    object_id: obj,
                    mask,
                });
            }
        }
        Ok(out)
    }

    fn check_external_records(&self, mut records: Vec<PropagatedMask>) -> Result<Vec<PropagatedMask>> {
        let objects = self.object_ids();
        let mut seen = BTreeSet::new();
        for r in &records {
            if r.frame >= self.frames || !objects.contains(&r.object_id) {
                return Err(Error::backend(format!(
                    "adapter yielded unexpected record (frame {}, object {})",
                    r.frame, r.object_id
                )));
            }
            if !seen.insert((r.frame, r.object_id)) {
                return Err(Error::backend(format!(
                    "adapter yielded frame {} object {} twice",
                    r.frame, r.object_id
                )));
            }
            if r.mask.height() != self.height || r.mask.width() != self.width {
                return Err(Error::backend(format!("adapter mask for frame {} has wrong size", r.frame)));
            }
        }
        records.retain(|r| self.coverage(r.object_id).contains(&r.frame));
        records.sort_by_key(|r| (r.frame, r.object_id));
        Ok(records)
    }
}
