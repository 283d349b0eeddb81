//! Deterministic synthetic scenes: a textured background with star-shaped
//! deformed-ellipse "polyps" whose masks are rasterized exactly.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_from_mask, BBox, BinaryMask, Frame};
use crate::raster::{save_frame, save_mask};

use super::manifest::{DatasetKind, DatasetManifest, Sample};

const BOUNDARY_SAMPLES: usize = 4096;
const PLACEMENT_TRIES: usize = 200;

/// Ellipse whose polar radius is modulated by `1 + amp·sin(lobes·θ + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub amp: f64,
    pub lobes: u32,
    pub phase: f64,
}

impl Blob {
    fn radius_scale(&self, theta: f64) -> f64 {
        1.0 + self.amp * (self.lobes as f64 * theta + self.phase).sin()
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        let dx = (px - self.cx) / self.rx;
        let dy = (py - self.cy) / self.ry;
        let r = dx.hypot(dy);
        r == 0.0 || r <= self.radius_scale(dy.atan2(dx))
    }

    /// Continuous extent `[x0, y0, x1, y1]` from dense boundary sampling.
    pub fn analytic_bounds(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for k in 0..BOUNDARY_SAMPLES {
            let t = TAU * k as f64 / BOUNDARY_SAMPLES as f64;
            let rho = self.radius_scale(t);
            let x = self.cx + self.rx * rho * t.cos();
            let y = self.cy + self.ry * rho * t.sin();
            b = [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)];
        }
        b
    }

    /// Pixels whose centers fall inside the shape.
    pub fn rasterize(&self, height: usize, width: usize) -> BinaryMask {
        BinaryMask::from_fn(height, width, |x, y| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }

    fn shifted(&self, dx: f64, dy: f64) -> Blob {
        Blob {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRecord {
    pub blob: Blob,
    pub analytic: [f64; 4],
    /// Tight box of the rasterized blob.
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub frame: Frame,
    pub mask: BinaryMask,
    pub blobs: Vec<BlobRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_scenes: usize,
    pub image_size: usize,
    pub min_blobs: usize,
    pub max_blobs: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_scenes: 20,
            image_size: 128,
            min_blobs: 1,
            max_blobs: 3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(Error::InvalidArgument("n_scenes must be at least 1".into()));
        }
        if self.image_size < 48 {
            return Err(Error::InvalidArgument("image_size must be at least 48".into()));
        }
        if self.min_blobs == 0 || self.min_blobs > self.max_blobs {
            return Err(Error::InvalidArgument(format!(
                "blob range {}..={} is invalid",
                self.min_blobs, self.max_blobs
            )));
        }
        Ok(())
    }
}

fn random_blob(rng: &mut ChaCha8Rng, size: f64, amp_max: f64) -> Blob {
    let r_lo = (0.07 * size).max(5.0);
    let r_hi = (0.16 * size).max(r_lo + 1.0);
    let rx = rng.random_range(r_lo..r_hi);
    let ry = rng.random_range(r_lo..r_hi);
    let amp = rng.random_range(0.0..amp_max);
    let reach_x = rx * (1.0 + amp) + 2.0;
    let reach_y = ry * (1.0 + amp) + 2.0;
    Blob {
        cx: rng.random_range(reach_x..size - reach_x),
        cy: rng.random_range(reach_y..size - reach_y),
        rx,
        ry,
        amp,
        lobes: rng.random_range(2..=5),
        phase: rng.random_range(0.0..TAU),
    }
}

fn separated(a: &[f64; 4], b: &[f64; 4], gap: f64) -> bool {
    a[2] + gap < b[0] || b[2] + gap < a[0] || a[3] + gap < b[1] || b[3] + gap < a[1]
}

fn place_blobs(rng: &mut ChaCha8Rng, size: usize, count: usize) -> Vec<Blob> {
    let mut placed: Vec<(Blob, [f64; 4])> = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..PLACEMENT_TRIES {
            let b = random_blob(rng, size as f64, 0.2);
            let bounds = b.analytic_bounds();
            if placed.iter().all(|(_, o)| separated(&bounds, o, 3.0)) {
                placed.push((b, bounds));
                break;
            }
        }
    }
    placed.into_iter().map(|(b, _)| b).collect()
}

/// Textured background with tinted, shaded foreground.
fn render(size: usize, blobs: &[Blob], mask: &BinaryMask, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let p1 = rng.random_range(0.0..TAU);
    let p2 = rng.random_range(0.0..TAU);
    let mut px = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            let noise: f64 = rng.random_range(-8.0..8.0);
            let (r, g, b) = if mask.get(x, y) {
                let shade = blobs
                    .iter()
                    .map(|bl| {
                        let d = ((xf + 0.5 - bl.cx) / bl.rx).hypot((yf + 0.5 - bl.cy) / bl.ry);
                        (1.0 - d).max(0.0)
                    })
                    .fold(0.0, f64::max);
                (150.0 + 60.0 * shade, 60.0 + 30.0 * shade, 55.0)
            } else {
                (
                    185.0 + 25.0 * (xf / 17.0 + p1).sin(),
                    110.0 + 20.0 * (yf / 23.0 + p2).cos(),
                    95.0 + 10.0 * ((xf + yf) / 31.0).sin(),
                )
            };
            for c in [r, g, b] {
                px.push((c + noise).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    px
}

fn build_scene(size: usize, blobs: Vec<Blob>, index: usize, rng: &mut ChaCha8Rng) -> Scene {
    let mut mask = BinaryMask::zeros(size, size);
    let mut records = Vec::with_capacity(blobs.len());
    for b in &blobs {
        let m = b.rasterize(size, size);
        mask = mask.or(&m).expect("same size");
        if let Some(bbox) = bbox_from_mask(&m) {
            records.push(BlobRecord {
                blob: *b,
                analytic: b.analytic_bounds(),
                bbox,
            });
        }
    }
    let pixels = render(size, &blobs, &mask, rng);
    Scene {
        frame: Frame::new(size, size, pixels, index).expect("sized buffer"),
        mask,
        blobs: records,
    }
}

/// Still-image scenes; identical output for identical specs.
pub fn generate_scenes(spec: &SynthSpec) -> Result<Vec<Scene>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n_scenes)
        .map(|_| {
            let count = rng.random_range(spec.min_blobs..=spec.max_blobs);
            let blobs = place_blobs(&mut rng, spec.image_size, count);
            build_scene(spec.image_size, blobs, 0, &mut rng)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthVideoSpec {
    pub sequences: usize,
    pub frames: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Frames before this index contain no polyp.
    pub appear_at: usize,
    /// Subset tags assigned round-robin to sequences; empty for none.
    pub subset_tags: Vec<String>,
}

impl Default for SynthVideoSpec {
    fn default() -> Self {
        SynthVideoSpec {
            sequences: 3,
            frames: 12,
            image_size: 96,
            seed: 0,
            appear_at: 0,
            subset_tags: Vec::new(),
        }
    }
}

pub struct SynthSequence {
    pub id: String,
    pub subset: Option<String>,
    pub scenes: Vec<Scene>,
}

/// Sequences with one slowly drifting polyp each.
///
/// Drift per frame is at most 3% of the blob radius, slower than the mock
/// tracker's region growth, so the mock can follow the object.
pub fn generate_sequences(spec: &SynthVideoSpec) -> Result<Vec<SynthSequence>> {
    if spec.sequences == 0 || spec.frames == 0 {
        return Err(Error::InvalidArgument("need at least one sequence and one frame".into()));
    }
    if spec.image_size < 48 {
        return Err(Error::InvalidArgument("image_size must be at least 48".into()));
    }
    let size = spec.image_size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.sequences);
    for s in 0..spec.sequences {
        let base = random_blob(&mut rng, size, 0.15);
        let vx = rng.random_range(-1.0..=1.0) * 0.03 * base.rx;
        let vy = rng.random_range(-1.0..=1.0) * 0.03 * base.ry;
        let travel = spec.frames.saturating_sub(1) as f64;
        // start so that the whole trajectory stays inside the frame
        let reach_x = base.rx * (1.0 + base.amp) + 2.0;
        let reach_y = base.ry * (1.0 + base.amp) + 2.0;
        let lo_x = reach_x - (vx * travel).min(0.0);
        let hi_x = size - reach_x - (vx * travel).max(0.0);
        let lo_y = reach_y - (vy * travel).min(0.0);
        let hi_y = size - reach_y - (vy * travel).max(0.0);
        let start = Blob {
            cx: if lo_x < hi_x { rng.random_range(lo_x..hi_x) } else { size / 2.0 },
            cy: if lo_y < hi_y { rng.random_range(lo_y..hi_y) } else { size / 2.0 },
            ..base
        };
        let scenes = (0..spec.frames)
            .map(|f| {
                let blobs = if f >= spec.appear_at {
                    vec![start.shifted(vx * f as f64, vy * f as f64)]
                } else {
                    Vec::new()
                };
                build_scene(spec.image_size, blobs, f, &mut rng)
            })
            .collect();
        let subset = (!spec.subset_tags.is_empty()).then(|| spec.subset_tags[s % spec.subset_tags.len()].clone());
        out.push(SynthSequence {
            id: format!("seq{s:02}"),
            subset,
            scenes,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    sample: &'a str,
    blobs: &'a [BlobRecord],
}

fn write_sidecar(path: &Path, rows: &[Sidecar<'_>]) -> Result<()> {
    let text = serde_json::to_string_pretty(rows)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `images/`, `masks/`, `blobs.json` and `manifest.json` under `dir`.
pub fn write_image_dataset(dir: &Path, spec: &SynthSpec) -> Result<DatasetManifest> {
    let scenes = generate_scenes(spec)?;
    let mut samples = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let id = format!("scene_{i:04}");
        let image = dir.join("images").join(format!("{id}.png"));
        let mask = dir.join("masks").join(format!("{id}.png"));
        save_frame(&image, &scene.frame)?;
        save_mask(&mask, &scene.mask)?;
        samples.push(Sample {
            id,
            image,
            mask,
            split: None,
            sequence: None,
            subset: None,
        });
    }
    let sidecar: Vec<Sidecar<'_>> = samples
        .iter()
        .zip(&scenes)
        .map(|(s, sc)| Sidecar {
            sample: &s.id,
            blobs: &sc.blobs,
        })
        .collect();
    write_sidecar(&dir.join("blobs.json"), &sidecar)?;
    let manifest = DatasetManifest {
        name: "synthetic".into(),
        kind: DatasetKind::Image,
        root: dir.to_path_buf(),
        samples,
        validation: Vec::new(),
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Writes `<seq>/images/`, `<seq>/masks/`, `blobs.json` and `manifest.json` under `dir`.
pub fn write_video_dataset(dir: &Path, spec: &SynthVideoSpec) -> Result<DatasetManifest> {
    let sequences = generate_sequences(spec)?;
    let mut samples = Vec::new();
    let mut blob_rows = Vec::new();
    for seq in &sequences {
        for (f, scene) in seq.scenes.iter().enumerate() {
            let stem = format!("frame_{f:04}");
            let id = format!("{}/{stem}", seq.id);
            let image = dir.join(&seq.id).join("images").join(format!("{stem}.png"));
            let mask = dir.join(&seq.id).join("masks").join(format!("{stem}.png"));
            save_frame(&image, &scene.frame)?;
            save_mask(&mask, &scene.mask)?;
            blob_rows.push((id.clone(), &scene.blobs));
            samples.push(Sample {
                id,
                image,
                mask,
                split: None,
                sequence: Some(seq.id.clone()),
                subset: seq.subset.clone(),
            });
        }
    }
    let sidecar: Vec<Sidecar<'_>> = blob_rows
        .iter()
        .map(|(id, blobs)| Sidecar { sample: id, blobs })
        .collect();
    write_sidecar(&dir.join("blobs.json"), &sidecar)?;
    let manifest = DatasetManifest {
        name: "synthetic_video".into(),
        kind: DatasetKind::Video,
        root: dir.to_path_buf(),
        samples,
        validation: Vec::new(),
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
