use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Single-slice parallel beam, angles over [0, π).
    Parallel2d,
    /// Circular cone beam with a flat detector, angles over [0, 2π).
    ConeBeam3d {
        source_to_iso: f64,
        source_to_detector: f64,
    },
}

/// Acquisition geometry plus the reconstruction grid.
///
/// The volume is centred on the isocentre. Voxel `(z, y, x)` of a grid with
/// extents `[D, H, W]` sits at `((x − (W−1)/2)·s, (y − (H−1)/2)·s,
/// (z − (D−1)/2)·s)` in millimetres. Detector samples are centred the same
/// way along their rows and columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub mode: Mode,
    pub angles: Vec<f64>,
    pub det_rows: usize,
    pub det_cols: usize,
    /// Detector pixel pitch in mm (rows and columns).
    pub det_pitch: f64,
    /// Volume extents `[D, H, W]`.
    pub extents: [usize; 3],
    /// Isotropic voxel spacing in mm.
    pub spacing: f64,
}

impl Geometry {
    /// Parallel-beam slice geometry over an `n × n` grid. The detector has an
    /// odd number of bins of pitch `spacing` covering the grid diagonal.
    pub fn parallel2d(n: usize, spacing: f64, n_views: usize) -> Self {
        let half = ((n as f64) * std::f64::consts::SQRT_2 / 2.0).ceil() as usize;
        Geometry {
            mode: Mode::Parallel2d,
            angles: uniform_angles(n_views, PI),
            det_rows: 1,
            det_cols: 2 * half + 1,
            det_pitch: spacing,
            extents: [1, n, n],
            spacing,
        }
    }

    /// Cone-beam geometry for an `n³` grid. The source sits at four times the
    /// volume half-diagonal, the detector at twice that distance, and the
    /// detector pitch maps to one voxel at the isocentre.
    pub fn cone_beam(n: usize, spacing: f64, n_views: usize) -> Self {
        let half = n as f64 * spacing / 2.0;
        let half_diag = half * 3f64.sqrt();
        let sid = 4.0 * half_diag;
        let sdd = 2.0 * sid;
        let pitch = spacing * sdd / sid;
        let r_xy = half * std::f64::consts::SQRT_2;
        let col_half = sdd * r_xy / (sid * sid - r_xy * r_xy).sqrt() / pitch;
        let row_half = half * sdd / (sid - r_xy) / pitch;
        Geometry {
            mode: Mode::ConeBeam3d {
                source_to_iso: sid,
                source_to_detector: sdd,
            },
            angles: uniform_angles(n_views, 2.0 * PI),
            det_rows: 2 * row_half.ceil() as usize + 1,
            det_cols: 2 * col_half.ceil() as usize + 1,
            det_pitch: pitch,
            extents: [n, n, n],
            spacing,
        }
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn sinogram_shape(&self) -> [usize; 3] {
        [self.n_views(), self.det_rows, self.det_cols]
    }

    pub fn num_rays(&self) -> usize {
        self.n_views() * self.det_rows * self.det_cols
    }

    pub fn num_voxels(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::Config("geometry has no views".into()));
        }
        if self.angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("view angles must strictly increase".into()));
        }
        if self.det_rows == 0 || self.det_cols == 0 || self.det_pitch <= 0.0 {
            return Err(Error::Config("empty detector".into()));
        }
        if self.extents.contains(&0) || self.spacing <= 0.0 {
            return Err(Error::Config("empty volume".into()));
        }
        match self.mode {
            Mode::Parallel2d => {
                if self.extents[0] != 1 || self.det_rows != 1 {
                    return Err(Error::Config(
                        "parallel2d needs a single slice and a single detector row".into(),
                    ));
                }
            }
            Mode::ConeBeam3d {
                source_to_iso,
                source_to_detector,
            } => {
                let half_diag = self
                    .extents
                    .iter()
                    .map(|&e| (e as f64 * self.spacing / 2.0).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if !(source_to_detector > source_to_iso && source_to_iso > half_diag) {
                    return Err(Error::Config(format!(
                        "cone beam needs SDD > SID > half diagonal ({source_to_detector} > {source_to_iso} > {half_diag})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Origin and (unnormalised) direction of the ray hitting detector sample
    /// `(row, col)` in view `view`.
    pub fn ray(&self, view: usize, row: usize, col: usize) -> ([f64; 3], [f64; 3]) {
        let a = self.angles[view];
        let (s, c) = a.sin_cos();
        let u = (col as f64 - (self.det_cols as f64 - 1.0) / 2.0) * self.det_pitch;
        match self.mode {
            Mode::Parallel2d => ([u * c, u * s, 0.0], [-s, c, 0.0]),
            Mode::ConeBeam3d {
                source_to_iso,
                source_to_detector,
            } => {
                let v = (row as f64 - (self.det_rows as f64 - 1.0) / 2.0) * self.det_pitch;
                let src = [source_to_iso * c, source_to_iso * s, 0.0];
                let det = [
                    src[0] - source_to_detector * c - u * s,
                    src[1] - source_to_detector * s + u * c,
                    v,
                ];
                (src, [det[0] - src[0], det[1] - src[1], det[2] - src[2]])
            }
        }
    }

    /// Detector coordinates `(u, v)` in mm of sample `(row, col)`.
    pub fn detector_uv(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 - (self.det_cols as f64 - 1.0) / 2.0) * self.det_pitch,
            (row as f64 - (self.det_rows as f64 - 1.0) / 2.0) * self.det_pitch,
        )
    }
}

fn uniform_angles(n: usize, range: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 * range / n as f64).collect()
}
