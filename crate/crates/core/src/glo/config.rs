use crate::ct::Window;
use crate::error::{Error, Result};
use crate::nets::MATERIAL_EXTENT;

/// Learning rates of one optimiser group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    pub latent: f64,
    pub shape: f64,
    pub material: f64,
    pub enhancer: f64,
}

impl Rates {
    pub fn scaled(self, f: f64) -> Rates {
        Rates {
            latent: self.latent * f,
            shape: self.shape * f,
            material: self.material * f,
            enhancer: self.enhancer * f,
        }
    }
}

/// Constant for `constant` epochs, then linear decay reaching zero at
/// `constant + decay`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub constant: usize,
    pub decay: usize,
}

impl Schedule {
    pub fn total(&self) -> usize {
        self.constant + self.decay
    }

    /// Multiplier at the start of `epoch`; 0 from `total()` on.
    pub fn factor(&self, epoch: usize) -> f64 {
        if epoch < self.constant {
            1.0
        } else if epoch >= self.total() {
            0.0
        } else {
            (self.total() - epoch) as f64 / self.decay as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GloConfig {
    /// Mode outputs of the shape network.
    pub n_modes: usize,
    pub material_widths: [usize; 2],
    pub enhancer_width: usize,
    /// Render (and reference volume) extent per side.
    pub render: usize,
    pub fov: f64,
    pub n_views: usize,
    pub window: Window,
    /// Supervised steps during pre-training.
    pub lr_pretrain: Rates,
    /// Labeled steps of the semi-supervised phase.
    pub lr_labeled: Rates,
    /// Unlabeled steps of the semi-supervised phase.
    pub lr_unlabeled: Rates,
    pub pretrain_epochs: usize,
    pub enhancer_epochs: usize,
    pub schedule: Schedule,
    /// Soft-voxelisation temperature in voxels for the shape gradient;
    /// `None` differentiates the hard labels.
    pub temperature: Option<f64>,
    /// Rescale latents into the unit ball after each update.
    pub project_latents: bool,
    pub freeze_enhancer: bool,
    pub seed: u64,
}

impl GloConfig {
    /// Defaults for a given render extent and field of view.
    pub fn new(render: usize, fov: f64) -> Self {
        GloConfig {
            n_modes: 14,
            material_widths: [256, 128],
            enhancer_width: 16,
            render,
            fov,
            n_views: 2 * render,
            window: Window::RamLak,
            lr_pretrain: Rates {
                latent: 1e-4,
                shape: 1e-4,
                material: 1e-4,
                enhancer: 1e-4,
            },
            lr_labeled: Rates {
                latent: 1e-4,
                shape: 1e-4,
                material: 1e-4,
                enhancer: 1e-5,
            },
            lr_unlabeled: Rates {
                latent: 1e-3,
                shape: 1e-3,
                material: 1e-3,
                enhancer: 1e-4,
            },
            pretrain_epochs: 200,
            enhancer_epochs: 50,
            schedule: Schedule {
                constant: 30,
                decay: 30,
            },
            temperature: Some(1.0),
            project_latents: false,
            freeze_enhancer: false,
            seed: 0,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.fov / self.render as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.render == 0 || !self.render.is_multiple_of(MATERIAL_EXTENT) {
            return Err(Error::Config(format!(
                "render extent {} must be a positive multiple of {MATERIAL_EXTENT}",
                self.render
            )));
        }
        if !(self.fov > 0.0) || self.n_views == 0 {
            return Err(Error::Config("field of view and view count must be positive".into()));
        }
        if self.material_widths.contains(&0) || self.enhancer_width < 2 {
            return Err(Error::Config("network widths too small".into()));
        }
        if self.schedule.decay == 0 {
            return Err(Error::Config("decay phase needs at least one epoch".into()));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0) {
                return Err(Error::Config(format!("temperature {t} must be positive")));
            }
        }
        Ok(())
    }
}
