use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::image_dims;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Image,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub split: Option<SplitTag>,
    #[serde(default)]
    pub sequence: Option<String>,
    #[serde(default)]
    pub subset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub path: PathBuf,
    pub issue: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub kind: DatasetKind,
    #[serde(default)]
    pub root: PathBuf,
    pub samples: Vec<Sample>,
    #[serde(default)]
    pub validation: Vec<ValidationRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.check_ids()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            if !seen.insert(&s.id) {
                return Err(Error::Dataset(format!("duplicate sample id '{}'", s.id)));
            }
            if self.kind == DatasetKind::Video && s.sequence.is_none() {
                return Err(Error::Dataset(format!("video sample '{}' lacks a sequence id", s.id)));
            }
        }
        Ok(())
    }

    /// Samples with the given tag; `None` selects every sample.
    pub fn select(&self, tag: Option<SplitTag>) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| tag.is_none() || s.split == tag)
            .collect()
    }

    /// Groups samples by sequence id, keeping frame order.
    pub fn sequences<'a>(samples: &[&'a Sample]) -> BTreeMap<String, Vec<&'a Sample>> {
        let mut out: BTreeMap<String, Vec<&Sample>> = BTreeMap::new();
        for s in samples {
            let key = s.sequence.clone().unwrap_or_else(|| s.id.clone());
            out.entry(key).or_default().push(s);
        }
        for frames in out.values_mut() {
            frames.sort_by(|a, b| natural_cmp(&a.id, &b.id));
        }
        out
    }

    fn sort(&mut self) {
        self.samples.sort_by(|a, b| natural_cmp(&a.id, &b.id));
    }
}

/// Compares strings treating runs of ASCII digits as numbers (`f2 < f10`).
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut ai, mut bi) = (a.as_bytes(), b.as_bytes());
    loop {
        match (ai.first(), bi.first()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let na = ai.iter().take_while(|c| c.is_ascii_digit()).count();
                let nb = bi.iter().take_while(|c| c.is_ascii_digit()).count();
                let da = trim_zeros(&ai[..na]);
                let db = trim_zeros(&bi[..nb]);
                let ord = da.len().cmp(&db.len()).then_with(|| da.cmp(db));
                if ord != Ordering::Equal {
                    return ord;
                }
                ai = &ai[na..];
                bi = &bi[nb..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                ai = &ai[1..];
                bi = &bi[1..];
            }
        }
    }
}

fn trim_zeros(d: &[u8]) -> &[u8] {
    let start = d.iter().position(|&c| c != b'0').unwrap_or(d.len());
    &d[start..]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Kvasir,
    CvcClinic,
    CvcColon,
    Etis,
    Cvc300,
    Polypgen,
    SunSeg,
}

impl Layout {
    pub const ALL: [Layout; 7] = [
        Layout::Kvasir,
        Layout::CvcClinic,
        Layout::CvcColon,
        Layout::Etis,
        Layout::Cvc300,
        Layout::Polypgen,
        Layout::SunSeg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Layout::Kvasir => "kvasir",
            Layout::CvcClinic => "cvc_clinic",
            Layout::CvcColon => "cvc_colon",
            Layout::Etis => "etis",
            Layout::Cvc300 => "cvc300",
            Layout::Polypgen => "polypgen",
            Layout::SunSeg => "sun_seg",
        }
    }

    pub fn kind(&self) -> DatasetKind {
        match self {
            Layout::Polypgen | Layout::SunSeg => DatasetKind::Video,
            _ => DatasetKind::Image,
        }
    }

    /// `(image dir, mask dir)` pairs tried in order for still-image layouts.
    fn image_dirs(&self) -> &'static [(&'static str, &'static str)] {
        match self {
            Layout::CvcClinic => &[("images", "masks"), ("Original", "Ground Truth")],
            Layout::Etis => &[("images", "masks"), ("ETIS-LaribPolypDB", "Ground Truth")],
            _ => &[("images", "masks")],
        }
    }

    /// Maps a mask file stem to the stem of the image it annotates.
    fn mask_stem_to_image_stem(&self, stem: &str) -> String {
        let stem = stem.strip_suffix("_mask").unwrap_or(stem);
        if *self == Layout::Etis {
            if let Some(rest) = stem.strip_prefix('p') {
                if !rest.is_empty() && rest.bytes().all(|c| c.is_ascii_digit()) {
                    return rest.to_string();
                }
            }
        }
        stem.to_string()
    }
}

impl FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Layout::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Layout::ALL.iter().map(Layout::name).collect();
                Error::Dataset(format!("unknown layout '{s}', expected one of {}", names.join(", ")))
            })
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Pairs images with masks by (normalized) stem; unmatched or mis-sized images go to `validation`.
fn pair_dir(
    layout: Layout,
    image_dir: &Path,
    mask_dir: &Path,
    id_prefix: Option<&str>,
    validation: &mut Vec<ValidationRecord>,
) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut masks: HashMap<String, PathBuf> = HashMap::new();
    if mask_dir.is_dir() {
        for m in list_images(mask_dir)? {
            let key = layout.mask_stem_to_image_stem(&stem(&m));
            if let Some(prev) = masks.insert(key.clone(), m.clone()) {
                validation.push(ValidationRecord {
                    path: m,
                    issue: format!("duplicate mask for stem '{key}' (also {})", prev.display()),
                });
            }
        }
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for img in list_images(image_dir)? {
        let s = stem(&img);
        let Some(mask) = masks.get(&s) else {
            validation.push(ValidationRecord {
                path: img,
                issue: "no matching mask; sample excluded".into(),
            });
            continue;
        };
        if !seen.insert(s.clone()) {
            validation.push(ValidationRecord {
                path: img,
                issue: format!("duplicate image stem '{s}'; sample excluded"),
            });
            continue;
        }
        match (image_dims(&img), image_dims(mask)) {
            (Ok(a), Ok(b)) if a == b => {}
            (Ok(a), Ok(b)) => {
                validation.push(ValidationRecord {
                    path: img,
                    issue: format!("image is {}x{} but mask is {}x{}; sample excluded", a.0, a.1, b.0, b.1),
                });
                continue;
            }
            (Err(e), _) | (_, Err(e)) => {
                validation.push(ValidationRecord {
                    path: img,
                    issue: format!("unreadable: {e}; sample excluded"),
                });
                continue;
            }
        }
        let id = match id_prefix {
            Some(p) => format!("{p}/{s}"),
            None => s,
        };
        out.push((id, img, mask.clone()));
    }
    Ok(out)
}

/// Reads `case_lists/*.txt` (one case per line) into case → subset tag.
fn sun_seg_case_tags(root: &Path) -> Result<HashMap<String, String>> {
    let dir = root.join("case_lists");
    let mut tags = HashMap::new();
    if !dir.is_dir() {
        return Ok(tags);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
        .collect();
    files.sort();
    for f in files {
        let tag = subset_tag(&stem(&f));
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        for case in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            tags.insert(case.to_string(), tag.clone());
        }
    }
    Ok(tags)
}

fn subset_tag(list_stem: &str) -> String {
    let norm = list_stem.to_ascii_lowercase().replace('-', "_");
    match norm.as_str() {
        "seen_easy" => "Seen-Easy".into(),
        "seen_hard" => "Seen-Hard".into(),
        "unseen_easy" => "Unseen-Easy".into(),
        "unseen_hard" => "Unseen-Hard".into(),
        _ => list_stem.to_string(),
    }
}

/// Builds a manifest for one of the benchmark directory layouts.
///
/// | layout | structure |
/// |---|---|
/// | kvasir, cvc_colon, cvc300 | `images/`, `masks/` |
/// | cvc_clinic | `images/`+`masks/` or `Original/`+`Ground Truth/` |
/// | etis | `images/`+`masks/` or `ETIS-LaribPolypDB/`+`Ground Truth/` (`p<N>` mask names) |
/// | polypgen | `<sequence>/images*/`, `<sequence>/masks*/` (`_mask` suffix allowed) |
/// | sun_seg | `Frame/<case>/`, `GT/<case>/`, optional `case_lists/{seen,unseen}_{easy,hard}.txt` |
pub fn scan_dataset(root: &Path, layout: Layout) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} is not a directory", root.display())));
    }
    let mut validation = Vec::new();
    let mut samples = Vec::new();
    match layout {
        Layout::Polypgen => {
            for seq_dir in subdirs(root)? {
                let seq = stem(&seq_dir);
                let dirs = subdirs(&seq_dir)?;
                let find = |prefix: &str| {
                    dirs.iter()
                        .find(|d| stem(d).to_ascii_lowercase().starts_with(prefix))
                        .cloned()
                };
                let (Some(img_dir), Some(mask_dir)) = (find("images"), find("masks")) else {
                    validation.push(ValidationRecord {
                        path: seq_dir.clone(),
                        issue: "sequence lacks images*/ or masks*/ directory".into(),
                    });
                    continue;
                };
                for (id, image, mask) in pair_dir(layout, &img_dir, &mask_dir, Some(&seq), &mut validation)? {
                    samples.push(Sample {
                        id,
                        image,
                        mask,
                        split: None,
                        sequence: Some(seq.clone()),
                        subset: None,
                    });
                }
            }
        }
        Layout::SunSeg => {
            let frame_root = root.join("Frame");
            let gt_root = root.join("GT");
            if !frame_root.is_dir() {
                return Err(Error::Dataset(format!("{} has no Frame/ directory", root.display())));
            }
            let tags = sun_seg_case_tags(root)?;
            for case_dir in subdirs(&frame_root)? {
                let case = stem(&case_dir);
                let subset = tags.get(&case).cloned();
                for (id, image, mask) in
                    pair_dir(layout, &case_dir, &gt_root.join(&case), Some(&case), &mut validation)?
                {
                    samples.push(Sample {
                        id,
                        image,
                        mask,
                        split: None,
                        sequence: Some(case.clone()),
                        subset: subset.clone(),
                    });
                }
            }
        }
        _ => {
            let (img, mask) = layout
                .image_dirs()
                .iter()
                .map(|(i, m)| (root.join(i), root.join(m)))
                .find(|(i, _)| i.is_dir())
                .ok_or_else(|| {
                    Error::Dataset(format!("{} has no image directory for layout {layout}", root.display()))
                })?;
            for (id, image, mask) in pair_dir(layout, &img, &mask, None, &mut validation)? {
                samples.push(Sample {
                    id,
                    image,
                    mask,
                    split: None,
                    sequence: None,
                    subset: None,
                });
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!(
            "no usable samples under {} for layout {layout}",
            root.display()
        )));
    }
    let mut manifest = DatasetManifest {
        name: layout.name().to_string(),
        kind: layout.kind(),
        root: root.to_path_buf(),
        samples,
        validation,
    };
    manifest.sort();
    manifest.check_ids()?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    #[default]
    Sample,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub unit: SplitUnit,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
            unit: SplitUnit::Sample,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub manifest: DatasetManifest,
    pub train_units: usize,
    pub eval_units: usize,
    pub warnings: Vec<String>,
}

/// Seeded shuffle of units; the first `⌈fraction·n⌉` go to train.
///
/// Video manifests always split by sequence.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<SplitOutcome> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0,1], got {}",
            spec.train_fraction
        )));
    }
    let mut warnings = Vec::new();
    let unit = if manifest.kind == DatasetKind::Video {
        if spec.unit == SplitUnit::Sample {
            warnings.push("video datasets split by sequence; unit forced to sequence".to_string());
        }
        SplitUnit::Sequence
    } else {
        spec.unit
    };
    let key = |s: &Sample| -> String {
        match unit {
            SplitUnit::Sample => s.id.clone(),
            SplitUnit::Sequence => s.sequence.clone().unwrap_or_else(|| s.id.clone()),
        }
    };
    let mut units: Vec<String> = manifest
        .samples
        .iter()
        .map(key)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    units.sort_by(|a, b| natural_cmp(a, b));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    units.shuffle(&mut rng);
    let n = units.len();
    let n_train = ((spec.train_fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let train: BTreeSet<&String> = units[..n_train].iter().collect();
    if n_train == n {
        warnings.push("evaluation split is empty".to_string());
    }
    let mut out = manifest.clone();
    for s in &mut out.samples {
        s.split = Some(if train.contains(&key(s)) {
            SplitTag::Train
        } else {
            SplitTag::Eval
        });
    }
    Ok(SplitOutcome {
        manifest: out,
        train_units: n_train,
        eval_units: n - n_train,
        warnings,
    })
}
