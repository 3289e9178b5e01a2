//! Config files. Every table rejects unknown keys; omitted keys take the
//! defaults below. Paths are relative to the working directory.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! dir = "data/siteA"      # directory holding manifest.tsv
//! ssm = "ssm.fsct"
//! out = "runs/siteA"
//!
//! [model]
//! n_modes = 14            # capped at the shape model's mode count
//! material_widths = [256, 128]
//! enhancer_width = 16
//! soft_voxelize = true
//! temperature = 1.0       # voxels; ignored when soft_voxelize = false
//! project_latents = false
//! freeze_enhancer = false
//!
//! [schedule]
//! pretrain_epochs = 200
//! enhancer_epochs = 50
//! semi_constant = 30
//! semi_decay = 30
//!
//! [rates.pretrain]        # also [rates.labeled] and [rates.unlabeled]
//! latent = 1e-4
//! shape = 1e-4
//! material = 1e-4
//! enhancer = 1e-4
//!
//! [render]
//! n_views = 64            # default: twice the render extent
//! window = "ramlak"       # or "hann"
//! ```

use std::path::{Path, PathBuf};

use fedsim::glo::{GloConfig, Rates, Schedule};
use fedsim::phantom::Manifest;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::fail::{Failure, Outcome};

fn defaults() -> GloConfig {
    GloConfig::new(32, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSet {
    pub latent: f64,
    pub shape: f64,
    pub material: f64,
    pub enhancer: f64,
}

impl From<Rates> for RateSet {
    fn from(r: Rates) -> Self {
        RateSet {
            latent: r.latent,
            shape: r.shape,
            material: r.material,
            enhancer: r.enhancer,
        }
    }
}

impl From<RateSet> for Rates {
    fn from(r: RateSet) -> Self {
        Rates {
            latent: r.latent,
            shape: r.shape,
            material: r.material,
            enhancer: r.enhancer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesConfig {
    pub pretrain: RateSet,
    pub labeled: RateSet,
    pub unlabeled: RateSet,
}

impl Default for RatesConfig {
    fn default() -> Self {
        let d = defaults();
        RatesConfig {
            pretrain: d.lr_pretrain.into(),
            labeled: d.lr_labeled.into(),
            unlabeled: d.lr_unlabeled.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_modes: usize,
    pub material_widths: [usize; 2],
    pub enhancer_width: usize,
    pub soft_voxelize: bool,
    pub temperature: f64,
    pub project_latents: bool,
    pub freeze_enhancer: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = defaults();
        ModelConfig {
            n_modes: d.n_modes,
            material_widths: d.material_widths,
            enhancer_width: d.enhancer_width,
            soft_voxelize: d.temperature.is_some(),
            temperature: d.temperature.unwrap_or(1.0),
            project_latents: d.project_latents,
            freeze_enhancer: d.freeze_enhancer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub pretrain_epochs: usize,
    pub enhancer_epochs: usize,
    pub semi_constant: usize,
    pub semi_decay: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let d = defaults();
        ScheduleConfig {
            pretrain_epochs: d.pretrain_epochs,
            enhancer_epochs: d.enhancer_epochs,
            semi_constant: d.schedule.constant,
            semi_decay: d.schedule.decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_views: Option<usize>,
    pub window: String,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_views: None,
            window: "ramlak".into(),
        }
    }
}

/// Generator settings shared by `train` and `train-federated`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub rates: RatesConfig,
    pub render: RenderConfig,
}

impl GeneratorConfig {
    /// Trainer config for a dataset and a shape model with `ssm_modes`
    /// modes.
    pub fn glo(&self, manifest: &Manifest, ssm_modes: usize, seed: u64) -> Outcome<GloConfig> {
        let mut c = GloConfig::new(manifest.res, manifest.fov);
        c.n_modes = self.model.n_modes.min(ssm_modes);
        c.material_widths = self.model.material_widths;
        c.enhancer_width = self.model.enhancer_width;
        c.temperature = self.model.soft_voxelize.then_some(self.model.temperature);
        c.project_latents = self.model.project_latents;
        c.freeze_enhancer = self.model.freeze_enhancer;
        c.pretrain_epochs = self.schedule.pretrain_epochs;
        c.enhancer_epochs = self.schedule.enhancer_epochs;
        c.schedule = Schedule {
            constant: self.schedule.semi_constant,
            decay: self.schedule.semi_decay,
        };
        c.lr_pretrain = self.rates.pretrain.into();
        c.lr_labeled = self.rates.labeled.into();
        c.lr_unlabeled = self.rates.unlabeled.into();
        if let Some(v) = self.render.n_views {
            c.n_views = v;
        }
        c.window = self.render.window.parse().map_err(|e| Failure::config(format!("render.window: {e}")))?;
        c.seed = seed;
        c.validate().map_err(Failure::from)?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub dir: PathBuf,
    pub ssm: PathBuf,
    pub out: PathBuf,
}

/// `train --config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataPaths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub render: RenderConfig,
}

impl TrainConfig {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            model: self.model.clone(),
            schedule: self.schedule,
            rates: self.rates,
            render: self.render.clone(),
        }
    }
}

/// One `train-federated --sites` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub site_id: u32,
    /// Private dataset directory.
    pub data: PathBuf,
    /// Optional checkpoint whose `enh.*` arrays seed the local enhancer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhancer: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSite {
    pub name: String,
    /// Dataset directory with train and test splits.
    pub data: PathBuf,
    /// Output directory of a `train` run on that dataset.
    pub run: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub lr: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        let d = fedsim::eval::SegTrainConfig::default();
        SegmenterConfig {
            pretrain_epochs: d.pretrain_epochs,
            finetune_epochs: d.finetune_epochs,
            lr: d.lr,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_region() -> u8 {
    1
}

fn default_synthetic() -> usize {
    8
}

/// `evaluate --config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Region id to segment; 0 segments the whole labeled foreground.
    #[serde(default = "default_region")]
    pub target_region: u8,
    /// Generated samples per site for the synthetic arm.
    #[serde(default = "default_synthetic")]
    pub synthetic: usize,
    /// Stream seed for the generated samples.
    #[serde(default)]
    pub synthetic_seed: u64,
    #[serde(default)]
    pub segmenter: SegmenterConfig,
    pub sites: Vec<EvalSite>,
}

/// Parses `text`, reporting the key path of the first offending entry.
pub fn parse<T: DeserializeOwned>(text: &str, origin: &str) -> Outcome<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Failure::config(format!("{origin}: {e}")))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Failure::config(format!("{origin}: at `{path}`: {}", e.into_inner()))
    })
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

/// Canonical text: every key written out, in declaration order.
pub fn canonical<T: Serialize>(cfg: &T) -> String {
    toml::to_string(cfg).expect("configs serialize")
}
