use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{DetectorKind, DetectorSpec, SegmenterChoice};
use crate::data::{scan_dataset, DatasetManifest, Layout, Sample, SplitTag};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::prompt_bridge::BridgePolicy;
use crate::video::VideoPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Eval,
    Train,
    All,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// A manifest written by `ingest` or `split`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// A raw benchmark directory, scanned with `layout`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    #[serde(default)]
    pub select: Selection,
}

impl DatasetRef {
    pub fn load(&self) -> Result<DatasetManifest> {
        let mut m = match (&self.manifest, &self.root) {
            (Some(path), None) => DatasetManifest::load(path)?,
            (None, Some(root)) => {
                let layout = self
                    .layout
                    .ok_or_else(|| Error::Config(format!("dataset root {} needs a layout", root.display())))?;
                scan_dataset(root, layout)?
            }
            _ => return Err(Error::Config("a dataset needs exactly one of manifest or root".into())),
        };
        if let Some(name) = &self.name {
            m.name = name.clone();
        }
        Ok(m)
    }

    pub fn selected<'a>(&self, manifest: &'a DatasetManifest) -> Vec<&'a Sample> {
        manifest.select(match self.select {
            Selection::Eval => Some(SplitTag::Eval),
            Selection::Train => Some(SplitTag::Train),
            Selection::All => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub input_size: u32,
    /// Hint for external model servers; core processing is per frame.
    pub batch_size: usize,
    pub segmenter: SegmenterChoice,
    pub detector: DetectorSpec,
    pub bridge: BridgePolicy,
    pub video: VideoPolicy,
    pub metrics: MetricConfig<f64>,
    pub datasets: Vec<DatasetRef>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/latest"),
            input_size: 680,
            batch_size: 64,
            segmenter: SegmenterChoice::GtIntersect,
            detector: DetectorSpec::default(),
            bridge: BridgePolicy::default(),
            video: VideoPolicy::default(),
            metrics: MetricConfig::default(),
            datasets: Vec::new(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.output_dir);
        for d in &mut cfg.datasets {
            for p in [&mut d.manifest, &mut d.root].into_iter().flatten() {
                rebase(base, p);
            }
        }
        Ok(cfg)
    }

    /// Pushes run-wide settings into the component specs and validates everything.
    pub fn resolve(mut self) -> Result<Self> {
        self.detector.seed = self.seed;
        self.detector.input_size = self.input_size;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.detector.validate()?;
        self.bridge.validate()?;
        self.video.validate()?;
        self.metrics.validate()?;
        if self.detector.kind == DetectorKind::External && self.detector.address.is_none() {
            return Err(Error::Config("external detector needs detector.address".into()));
        }
        for d in &self.datasets {
            for p in [&d.manifest, &d.root].into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::Config(format!("dataset path {} does not exist", p.display())));
                }
            }
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the resolved config with the output directory blanked,
    /// so the same experiment written to two places shares one digest.
    pub fn digest(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let hash = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Writes `config.resolved.toml` and `config.sha256` into the output directory.
    pub fn write_snapshot(&self) -> Result<String> {
        let dir = &self.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let digest = self.digest()?;
        let snap = dir.join("config.resolved.toml");
        std::fs::write(&snap, self.to_toml()?).map_err(|e| Error::io(&snap, e))?;
        let dpath = dir.join("config.sha256");
        std::fs::write(&dpath, format!("{digest}\n")).map_err(|e| Error::io(&dpath, e))?;
        Ok(digest)
    }
}
