//! Procedural multi-region phantoms standing in for per-site datasets:
//! concentric perturbed ellipsoid shells on a shared spherical grid (so
//! vertices correspond across samples), region-wise attenuation, and a
//! rendered reference volume per sample.

mod manifest;

pub use manifest::{split, Manifest, ManifestEntry, Split};

use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::ct::{FbpOperator, Geometry, Volume, Window};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::fsct::Container;
use crate::par;
use crate::rng::{stream, Rng};
use crate::ssm::{voxelize, LabelVolume, SphereGrid, Surface};

/// Draws rejected before giving up on a sample.
const MAX_RETRIES: usize = 100;

/// Generative description of one site's population.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomFamily {
    pub name: String,
    /// Cubic field of view, mm.
    pub fov: f64,
    pub grid: SphereGrid,
    /// Outer-shell semi-axes, mm.
    pub semi_axes: [f64; 3],
    /// Relative σ of each semi-axis.
    pub axis_sigma: f64,
    /// Radial scale of region `r` relative to the outer shell; starts at 1 and
    /// decreases.
    pub shells: Vec<f64>,
    /// Absolute σ of each inner shell scale.
    pub shell_sigma: f64,
    /// σ of the four quadratic surface-bump coefficients.
    pub bump_sigma: f64,
    /// Mean and σ of the x-shift of the innermost region, mm.
    pub offset_mean: f64,
    pub offset_sigma: f64,
    /// Per-region attenuation mean and σ, mm⁻¹.
    pub mu_mean: Vec<f64>,
    pub mu_sigma: Vec<f64>,
    /// Site-wide attenuation offset added to every region.
    pub mu_offset: f64,
    /// Per-voxel Gaussian σ added to the attenuation map before rendering.
    pub noise: f64,
}

impl PhantomFamily {
    /// Base family with `n_regions` shells.
    pub fn base(name: &str, n_regions: usize) -> Self {
        assert!((1..=32).contains(&n_regions), "region count out of range");
        let shells = (0..n_regions)
            .map(|r| 1.0 - 0.79 * r as f64 / (n_regions.max(2) - 1) as f64)
            .collect();
        let profile = [0.019, 0.021, 0.024, 0.023, 0.026, 0.022, 0.025];
        PhantomFamily {
            name: name.to_string(),
            fov: 56.0,
            grid: SphereGrid::new(12, 24),
            semi_axes: [22.0, 18.0, 20.0],
            axis_sigma: 0.08,
            shells,
            shell_sigma: 0.015,
            bump_sigma: 0.05,
            offset_mean: 2.0,
            offset_sigma: 1.0,
            mu_mean: (0..n_regions).map(|r| profile[r % profile.len()]).collect(),
            mu_sigma: vec![0.0008; n_regions],
            mu_offset: 0.0,
            noise: 0.0005,
        }
    }

    /// `siteA`, `siteB` or `siteC`: three populations differing in shape
    /// statistics and attenuation profile.
    pub fn preset(name: &str, n_regions: usize) -> Result<Self> {
        let mut f = PhantomFamily::base(name, n_regions);
        match name {
            "siteA" => {}
            "siteB" => {
                f.semi_axes = [23.0, 19.5, 20.5];
                f.axis_sigma = 0.12;
                f.shell_sigma = 0.02;
                f.bump_sigma = 0.08;
                f.mu_offset = 0.003;
                f.noise = 0.0007;
            }
            "siteC" => {
                f.semi_axes = [20.0, 17.0, 19.0];
                f.axis_sigma = 0.06;
                f.offset_mean = -1.5;
                let profile = [0.020, 0.023, 0.021, 0.027, 0.022, 0.028, 0.024];
                f.mu_mean = (0..n_regions).map(|r| profile[r % profile.len()]).collect();
                f.mu_offset = -0.002;
                f.noise = 0.001;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown family {other:?} (expected siteA, siteB or siteC)"
                )))
            }
        }
        Ok(f)
    }

    pub fn n_regions(&self) -> usize {
        self.shells.len()
    }

    pub fn surface(&self) -> Surface {
        Surface::from_grid(self.grid, self.n_regions())
    }

    /// Every variation σ set to zero.
    pub fn without_variation(mut self) -> Self {
        self.axis_sigma = 0.0;
        self.shell_sigma = 0.0;
        self.bump_sigma = 0.0;
        self.offset_sigma = 0.0;
        self.mu_sigma.iter_mut().for_each(|s| *s = 0.0);
        self.noise = 0.0;
        self
    }

    fn validate(&self) -> Result<()> {
        let r = self.n_regions();
        if self.mu_mean.len() != r || self.mu_sigma.len() != r {
            return Err(Error::Config("attenuation profile length differs from region count".into()));
        }
        if self.semi_axes.iter().any(|&a| !(a > 0.0)) || !(self.fov > 0.0) {
            return Err(Error::Config("semi-axes and field of view must be positive".into()));
        }
        if self.shells.first() != Some(&1.0) || self.shells.windows(2).any(|w| !(w[1] < w[0])) || self.shells[r - 1] <= 0.0 {
            return Err(Error::Config("shell scales must start at 1 and decrease to a positive value".into()));
        }
        Ok(())
    }
}

/// One geometric and attenuation draw.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub semi_axes: [f64; 3],
    pub shells: Vec<f64>,
    /// Coefficients of `xy`, `yz`, `xz` and `x² − y²` on the unit direction.
    pub bumps: [f64; 4],
    pub offset: f64,
    pub mu: Vec<f64>,
}

impl Draw {
    /// The family's mean geometry and attenuation.
    pub fn base(f: &PhantomFamily) -> Self {
        Draw {
            semi_axes: f.semi_axes,
            shells: f.shells.clone(),
            bumps: [0.0; 4],
            offset: f.offset_mean,
            mu: f.mu_mean.iter().map(|m| m + f.mu_offset).collect(),
        }
    }

    pub fn random(f: &PhantomFamily, rng: &mut Rng) -> Self {
        let mut g = |mean: f64, sd: f64| {
            if sd > 0.0 {
                Normal::new(mean, sd).expect("positive σ").sample(rng)
            } else {
                mean
            }
        };
        let semi_axes = f.semi_axes.map(|a| a * g(1.0, f.axis_sigma));
        let mut shells = f.shells.clone();
        for s in shells.iter_mut().skip(1) {
            *s = g(*s, f.shell_sigma);
        }
        let bumps = [0; 4].map(|_| g(0.0, f.bump_sigma));
        let offset = g(f.offset_mean, f.offset_sigma);
        let mu = f
            .mu_mean
            .iter()
            .zip(&f.mu_sigma)
            .map(|(&m, &s)| g(m, s) + f.mu_offset)
            .collect();
        Draw {
            semi_axes,
            shells,
            bumps,
            offset,
            mu,
        }
    }

    fn radial(&self, d: &[f64; 3]) -> f64 {
        let b = &self.bumps;
        1.0 + b[0] * d[0] * d[1] + b[1] * d[1] * d[2] + b[2] * d[0] * d[2] + b[3] * (d[0] * d[0] - d[1] * d[1])
    }

    /// Lower bound of the radial factor over the sphere.
    fn radial_min(&self) -> f64 {
        let b = &self.bumps;
        1.0 - 0.5 * (b[0].abs() + b[1].abs() + b[2].abs()) - b[3].abs()
    }

    /// Nested, and every surface point at least one voxel inside the field.
    pub fn is_valid(&self, grid: SphereGrid, fov: f64, spacing: f64) -> bool {
        let lo = self.radial_min();
        let a_min = self.semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        let nested = self.shells.windows(2).all(|w| w[1] < w[0]) && *self.shells.last().unwrap() > 0.0;
        if !(lo > 0.5 && a_min > 0.0 && nested && self.offset.abs() < 0.5 * lo * a_min) {
            return false;
        }
        let limit = fov / 2.0 - spacing;
        self.mu.iter().all(|&m| m >= 0.0) && self.points(grid).iter().all(|c| c.abs() <= limit)
    }

    /// Surface points `3V`, regions back to back, in mm about the grid centre.
    /// Region `r` is the outer shell scaled by `shells[r]` and shifted along
    /// x by `offset·(1 − shells[r])`.
    pub fn points(&self, grid: SphereGrid) -> Vec<f64> {
        let dirs = grid.directions();
        let mut out = Vec::with_capacity(3 * dirs.len() * self.shells.len());
        for &k in &self.shells {
            let shift = self.offset * (1.0 - k);
            for d in &dirs {
                let rho = k * self.radial(d);
                out.extend([
                    rho * self.semi_axes[0] * d[0] + shift,
                    rho * self.semi_axes[1] * d[1],
                    rho * self.semi_axes[2] * d[2],
                ]);
            }
        }
        out
    }
}

/// One generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSample {
    pub id: String,
    pub draw: Draw,
    pub points: Vec<f64>,
    pub labels: LabelVolume,
    /// Reconstructed reference volume at render resolution.
    pub volume: Volume,
}

/// Rendering settings shared by generation and the simulator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSpec {
    pub res: usize,
    pub n_views: usize,
    pub window: Window,
}

impl RenderSpec {
    /// Two views per voxel along a side.
    pub fn new(res: usize) -> Self {
        RenderSpec {
            res,
            n_views: 2 * res,
            window: Window::RamLak,
        }
    }
}

/// Draws geometry until it is nested, inside the field, and every region
/// keeps at least one voxel.
pub fn draw_sample(f: &PhantomFamily, res: usize, rng: &mut Rng) -> Result<(Draw, Vec<f64>, LabelVolume)> {
    f.validate()?;
    let spacing = f.fov / res as f64;
    let surface = f.surface();
    for _ in 0..MAX_RETRIES {
        let d = Draw::random(f, rng);
        if !d.is_valid(f.grid, f.fov, spacing) {
            continue;
        }
        let pts = d.points(f.grid);
        let labels = voxelize(&pts, &surface, [res; 3], spacing)?;
        if (1..=f.n_regions() as u8).all(|r| labels.count(r) > 0) {
            return Ok((d, pts, labels));
        }
    }
    Err(Error::Degenerate(format!(
        "family {}: no valid draw in {MAX_RETRIES} attempts at {res}³",
        f.name
    )))
}

/// Attenuation map by region plus Gaussian noise, reconstructed through the
/// cone-beam simulator.
pub fn render_reference(
    labels: &LabelVolume,
    mu: &[f64],
    noise: f64,
    spacing: f64,
    spec: RenderSpec,
    rng: &mut Rng,
) -> Result<Volume> {
    let mut map: Vec<f64> = labels
        .data
        .iter()
        .map(|&r| if r == 0 { 0.0 } else { mu[r as usize - 1] })
        .collect();
    if noise > 0.0 {
        let n = Normal::new(0.0, noise).expect("positive σ");
        for v in &mut map {
            *v += n.sample(rng);
        }
    }
    let fbp = FbpOperator::new(Geometry::cone_beam(spec.res, spacing, spec.n_views), spec.window)?;
    let rec = fbp.reconstruct(&fbp.projector().forward(&map));
    Volume::from_vec([spec.res; 3], spacing, rec)
}

/// Sample `index` of a family; depends only on `(seed, family, index)`.
pub fn generate_sample(f: &PhantomFamily, spec: RenderSpec, seed: u64, index: usize) -> Result<PhantomSample> {
    let mut rng = stream(seed, &format!("phantom/{}", f.name), index as u64);
    let (draw, points, labels) = draw_sample(f, spec.res, &mut rng)?;
    let spacing = f.fov / spec.res as f64;
    let volume = render_reference(&labels, &draw.mu, f.noise, spacing, spec, &mut rng)?;
    Ok(PhantomSample {
        id: format!("{}-{:04}", f.name, index),
        draw,
        points,
        labels,
        volume,
    })
}

/// Generates `n` samples into `out` (one volume file and one label file
/// each) and writes `manifest.tsv`. Every sample starts in the training
/// split and labeled.
pub fn generate_family(f: &PhantomFamily, n: usize, spec: RenderSpec, seed: u64, out: &Path) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Config("a family needs at least one sample".into()));
    }
    let samples = par::map_range(n, |i| generate_sample(f, spec, seed, i));
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(n);
    for s in samples {
        let s = s?;
        let vol_name = format!("{}.vol.fsct", s.id);
        let lab_name = format!("{}.lab.fsct", s.id);
        write_volume(&s.volume, &out.join(&vol_name))?;
        write_labels(&s.labels, &s.points, &out.join(&lab_name))?;
        entries.push(ManifestEntry {
            id: s.id,
            volume: vol_name,
            labels: Some(lab_name),
            split: Split::Train,
            labeled: true,
        });
    }
    let m = Manifest {
        family: f.name.clone(),
        seed,
        res: spec.res,
        fov: f.fov,
        n_regions: f.n_regions(),
        entries,
    };
    m.write(&out.join("manifest.tsv"))?;
    Ok(m)
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    let mut c = Container::new();
    v.export("volume", &mut c);
    c.write_file(path)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    Volume::import("volume", &Container::read_file(path)?)
}

/// Corresponded surfaces of `n` draws from a stream kept apart from the
/// dataset streams, for building a shape model without touching training
/// samples.
pub fn shape_library(f: &PhantomFamily, n: usize, res: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    par::map_range(n, |i| {
        let mut rng = stream(seed, &format!("library/{}", f.name), i as u64);
        Ok(draw_sample(f, res, &mut rng)?.1)
    })
    .into_iter()
    .collect()
}

/// Labels plus the corresponded surface points `[V, 3]`.
pub fn write_labels(labels: &LabelVolume, points: &[f64], path: &Path) -> Result<()> {
    let mut c = Container::new();
    labels.export("labels", &mut c);
    c.push("points", Tensor::new(vec![points.len() / 3, 3], points.to_vec())?);
    c.write_file(path)
}

pub fn read_labels(path: &Path) -> Result<(LabelVolume, Vec<f64>)> {
    let c = Container::read_file(path)?;
    let labels = LabelVolume::import("labels", &c)?;
    let points = c.require("points")?.data().to_vec();
    Ok((labels, points))
}

/// A loaded manifest entry. Labels and points are present only for labeled
/// entries.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSample {
    pub id: String,
    pub volume: Volume,
    pub labels: Option<LabelVolume>,
    pub points: Option<Vec<f64>>,
}

pub fn load_sample(dir: &Path, e: &ManifestEntry) -> Result<LoadedSample> {
    let volume = read_volume(&dir.join(&e.volume))?;
    let (labels, points) = match (&e.labels, e.labeled) {
        (Some(p), true) => {
            let (l, pts) = read_labels(&dir.join(p))?;
            (Some(l), Some(pts))
        }
        (None, true) => return Err(Error::Data(format!("{}: labeled entry without a label file", e.id))),
        _ => (None, None),
    };
    Ok(LoadedSample {
        id: e.id.clone(),
        volume,
        labels,
        points,
    })
}
