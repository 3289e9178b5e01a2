use std::f64::consts::PI;

use super::{Geometry, Kernel, Mode, Projector, RampFilter, Sinogram, Volume, Window};
use crate::diff::LinearOp;
use crate::error::{shape_err, Error, Result};

/// Filtered back-projection as a linear map from sinograms to volumes.
///
/// Parallel beam: `f = (π/n)·(τ/s²)·Aᵀ K p`.
/// Cone beam (FDK, full circle): `f = (π/n)·(R²·τ²/(s³·D²))·Aᵀ W K W p`,
/// where `R`, `D` are source-to-isocentre and source-to-detector distances,
/// `W` is the cosine weight `D/√(D²+u²+v²)` and `K` filters at the
/// isocentre pitch `τ·R/D`. `W` appears on both sides because the Joseph
/// adjoint already spreads each ray with one obliquity factor.
pub struct FbpOperator {
    proj: Projector,
    filter: RampFilter,
    weights: Option<Vec<f64>>,
    scale: f64,
}

impl FbpOperator {
    /// Uses the spatial ramp discretisation, see [`Kernel`].
    pub fn new(geom: Geometry, window: Window) -> Result<Self> {
        Self::with_kernel(geom, window, Kernel::Spatial)
    }

    pub fn with_kernel(geom: Geometry, window: Window, kernel: Kernel) -> Result<Self> {
        if geom.n_views() < 2 {
            return Err(Error::Config(format!(
                "reconstruction needs at least 2 views, got {}",
                geom.n_views()
            )));
        }
        let n = geom.n_views() as f64;
        let s = geom.spacing;
        let tau = geom.det_pitch;
        let (filter, weights, scale) = match geom.mode {
            Mode::Parallel2d => (
                RampFilter::new(geom.det_cols, tau, window, kernel)?,
                None,
                PI / n * tau / (s * s),
            ),
            Mode::ConeBeam3d {
                source_to_iso: r,
                source_to_detector: d,
            } => {
                let mut w = Vec::with_capacity(geom.det_rows * geom.det_cols);
                for row in 0..geom.det_rows {
                    for col in 0..geom.det_cols {
                        let (u, v) = geom.detector_uv(row, col);
                        w.push(d / (d * d + u * u + v * v).sqrt());
                    }
                }
                (
                    RampFilter::new(geom.det_cols, tau * r / d, window, kernel)?,
                    Some(w),
                    PI / n * r * r * tau * tau / (s * s * s * d * d),
                )
            }
        };
        Ok(FbpOperator {
            proj: Projector::new(geom)?,
            filter,
            weights,
            scale,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        self.proj.geometry()
    }

    pub fn projector(&self) -> &Projector {
        &self.proj
    }

    fn weight(&self, data: &mut [f64]) {
        if let Some(w) = &self.weights {
            for view in data.chunks_mut(w.len()) {
                for (x, &wi) in view.iter_mut().zip(w) {
                    *x *= wi;
                }
            }
        }
    }

    pub fn reconstruct(&self, sino: &[f64]) -> Vec<f64> {
        let mut q = sino.to_vec();
        self.weight(&mut q);
        self.filter.apply_rows(&mut q);
        self.weight(&mut q);
        let mut f = self.proj.adjoint(&q);
        for x in &mut f {
            *x *= self.scale;
        }
        f
    }

    pub fn reconstruct_adjoint(&self, vol: &[f64]) -> Vec<f64> {
        let mut q = self.proj.forward(vol);
        for x in &mut q {
            *x *= self.scale;
        }
        self.weight(&mut q);
        self.filter.apply_rows(&mut q);
        self.weight(&mut q);
        q
    }
}

impl LinearOp for FbpOperator {
    fn input_shape(&self) -> Vec<usize> {
        self.geometry().sinogram_shape().to_vec()
    }

    fn output_shape(&self) -> Vec<usize> {
        self.geometry().extents.to_vec()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.reconstruct(x)
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.reconstruct_adjoint(y)
    }
}

/// Filtered back-projection (parallel) or FDK (cone) reconstruction.
pub fn fbp_reconstruct(sino: &Sinogram, geom: &Geometry, window: Window) -> Result<Volume> {
    if sino.shape != geom.sinogram_shape() {
        return Err(shape_err!(
            "sinogram {:?} does not match geometry {:?}",
            sino.shape,
            geom.sinogram_shape()
        ));
    }
    let op = FbpOperator::new(geom.clone(), window)?;
    Volume::from_vec(geom.extents, geom.spacing, op.reconstruct(&sino.data))
}
