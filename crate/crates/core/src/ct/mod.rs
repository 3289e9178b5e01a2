//! Physics CT renderer: Joseph ray-driven projection, its exact adjoint,
//! ramp filtering and FBP/FDK reconstruction, all usable as linear operators
//! on the autodiff tape.

mod fbp;
mod filter;
mod geometry;
pub mod phantom;
mod projector;
mod sim;

pub use fbp::{fbp_reconstruct, FbpOperator};
pub use filter::{ramp_filter, ramp_response, Kernel, RampFilter, Window};
pub use geometry::{Geometry, Mode};
pub use projector::{back_project, forward_project, Projector};
pub use sim::{add_poisson_noise, block_average, ct_sim, CtSim, SliceUpsample};

use crate::diff::Tensor;
use crate::error::{shape_err, Result};
use crate::fsct::Container;

/// Dense `[D, H, W]` scalar grid with isotropic spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub extents: [usize; 3],
    pub spacing: f64,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(extents: [usize; 3], spacing: f64) -> Self {
        Volume {
            extents,
            spacing,
            data: vec![0.0; extents.iter().product()],
        }
    }

    pub fn from_vec(extents: [usize; 3], spacing: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != extents.iter().product::<usize>() {
            return Err(shape_err!(
                "volume {:?} needs {} values, got {}",
                extents,
                extents.iter().product::<usize>(),
                data.len()
            ));
        }
        Ok(Volume {
            extents,
            spacing,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.extents[1] + y) * self.extents[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(z, y, x)]
    }

    /// Axial slice `z` as a row-major `H × W` image.
    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.extents[1] * self.extents[2];
        &self.data[z * n..(z + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.extents.to_vec(), self.data.clone()).expect("volume extents match data")
    }

    /// Stores the data plus a one-element `spacing` array.
    pub fn export(&self, name: &str, c: &mut Container) {
        c.push(name, self.to_tensor());
        c.push(format!("{name}.spacing"), Tensor::scalar(self.spacing));
    }

    pub fn import(name: &str, c: &Container) -> Result<Self> {
        let t = c.require(name)?;
        if t.rank() != 3 {
            return Err(shape_err!("{name}: expected rank 3, got {:?}", t.shape()));
        }
        let spacing = c.require(&format!("{name}.spacing"))?.item();
        let s = t.shape();
        Volume::from_vec([s[0], s[1], s[2]], spacing, t.data().to_vec())
    }
}

/// Line integrals laid out `[view, row, col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Sinogram {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(shape_err!(
                "sinogram {:?} needs {} values, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            ));
        }
        Ok(Sinogram { shape, data })
    }

    pub fn n_views(&self) -> usize {
        self.shape[0]
    }

    pub fn view(&self, v: usize) -> &[f64] {
        let n = self.shape[1] * self.shape[2];
        &self.data[v * n..(v + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.to_vec(), self.data.clone()).expect("sinogram shape matches data")
    }
}
