use rand_distr::{Distribution, Poisson};

use super::{FbpOperator, Geometry, Sinogram, Volume, Window};
use crate::diff::LinearOp;
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::ssm::LabelVolume;

/// Differentiable coarse-to-coarse simulator:
/// material `m³` → nearest-neighbour upsample to `n³` → cone-beam projection
/// → FDK → block-average back to `m³`.
pub struct CtSim {
    material: usize,
    factor: usize,
    fbp: FbpOperator,
}

impl CtSim {
    /// `render` voxels per side over a cubic field of view of `fov` mm,
    /// sampled with `n_views` views.
    pub fn new(material: usize, render: usize, fov: f64, n_views: usize, window: Window) -> Result<Self> {
        if material == 0 || !render.is_multiple_of(material) {
            return Err(Error::Config(format!(
                "material extent {material} must divide render extent {render}"
            )));
        }
        let geom = Geometry::cone_beam(render, fov / render as f64, n_views);
        Ok(CtSim {
            material,
            factor: render / material,
            fbp: FbpOperator::new(geom, window)?,
        })
    }

    pub fn material_extent(&self) -> usize {
        self.material
    }

    pub fn render_extent(&self) -> usize {
        self.material * self.factor
    }

    pub fn geometry(&self) -> &Geometry {
        self.fbp.geometry()
    }

    /// Full-resolution FDK reconstruction of a render-resolution volume.
    pub fn render_full(&self, mu: &[f64]) -> Vec<f64> {
        self.fbp.reconstruct(&self.fbp.projector().forward(mu))
    }

    /// Projection data of a render-resolution volume.
    pub fn project(&self, mu: &[f64]) -> Vec<f64> {
        self.fbp.projector().forward(mu)
    }

    pub fn reconstruct(&self, sino: &[f64]) -> Vec<f64> {
        self.fbp.reconstruct(sino)
    }
}

impl LinearOp for CtSim {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.material; 3]
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![self.material; 3]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let up = replicate(x, self.material, self.factor);
        let rec = self.render_full(&up);
        block_average(&rec, self.render_extent(), self.factor)
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let f3 = (self.factor * self.factor * self.factor) as f64;
        let mut up = replicate(y, self.material, self.factor);
        for v in &mut up {
            *v /= f3;
        }
        let sino = self.fbp.reconstruct_adjoint(&up);
        let back = self.fbp.projector().adjoint(&sino);
        let mut out = block_average(&back, self.render_extent(), self.factor);
        for v in &mut out {
            *v *= f3;
        }
        out
    }
}

/// Renders a material map and passes the labels through unchanged.
pub fn ct_sim(labels: &LabelVolume, material: &[f64], sim: &CtSim) -> Result<(LabelVolume, Volume)> {
    let m = sim.material_extent();
    if material.len() != m * m * m {
        return Err(shape_err!("material has {} values, expected {m}³", material.len()));
    }
    if labels.extents != [sim.render_extent(); 3] {
        return Err(shape_err!(
            "labels {:?} do not match render extent {}",
            labels.extents,
            sim.render_extent()
        ));
    }
    let spacing = sim.geometry().spacing * sim.factor as f64;
    let x = Volume::from_vec([m; 3], spacing, sim.apply(material))?;
    Ok((labels.clone(), x))
}

/// Nearest-neighbour upsample of an `m³` cube by `f` per axis.
fn replicate(x: &[f64], m: usize, f: usize) -> Vec<f64> {
    let n = m * f;
    let mut out = vec![0.0; n * n * n];
    for z in 0..n {
        for y in 0..n {
            let src = ((z / f) * m + y / f) * m;
            let dst = (z * n + y) * n;
            for xx in 0..n {
                out[dst + xx] = x[src + xx / f];
            }
        }
    }
    out
}

/// Mean over non-overlapping `f³` blocks of an `n³` cube.
pub fn block_average(x: &[f64], n: usize, f: usize) -> Vec<f64> {
    assert_eq!(n % f, 0, "block size must divide extent");
    let m = n / f;
    let mut out = vec![0.0; m * m * m];
    for z in 0..n {
        for y in 0..n {
            let dst = ((z / f) * m + y / f) * m;
            let src = (z * n + y) * n;
            for xx in 0..n {
                out[dst + xx / f] += x[src + xx];
            }
        }
    }
    let inv = 1.0 / (f * f * f) as f64;
    for v in &mut out {
        *v *= inv;
    }
    out
}

/// Trilinear sample of slice `k` of an `h³` upsampling of an `m³` cube,
/// returned as an `h × h` image. Uses cell-centred alignment with edge
/// clamping.
pub struct SliceUpsample {
    m: usize,
    h: usize,
    /// `(source index, weight)` lists per output pixel.
    taps: Vec<[(usize, f64); 8]>,
}

impl SliceUpsample {
    pub fn new(m: usize, h: usize, k: usize) -> Result<Self> {
        if k >= h {
            return Err(Error::Config(format!("slice {k} out of range 0..{h}")));
        }
        if m == 0 {
            return Err(Error::Config("empty source volume".into()));
        }
        let axis = |i: usize| -> (usize, usize, f64) {
            let c = ((i as f64 + 0.5) * m as f64 / h as f64 - 0.5).clamp(0.0, (m - 1) as f64);
            let i0 = c.floor() as usize;
            let i1 = (i0 + 1).min(m - 1);
            (i0, i1, c - i0 as f64)
        };
        let (z0, z1, wz) = axis(k);
        let mut taps = Vec::with_capacity(h * h);
        for y in 0..h {
            let (y0, y1, wy) = axis(y);
            for x in 0..h {
                let (x0, x1, wx) = axis(x);
                let mut t = [(0, 0.0); 8];
                let mut j = 0;
                for (zi, wzi) in [(z0, 1.0 - wz), (z1, wz)] {
                    for (yi, wyi) in [(y0, 1.0 - wy), (y1, wy)] {
                        for (xi, wxi) in [(x0, 1.0 - wx), (x1, wx)] {
                            t[j] = ((zi * m + yi) * m + xi, wzi * wyi * wxi);
                            j += 1;
                        }
                    }
                }
                taps.push(t);
            }
        }
        Ok(SliceUpsample { m, h, taps })
    }
}

impl LinearOp for SliceUpsample {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.m; 3]
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![self.h, self.h]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.taps
            .iter()
            .map(|t| t.iter().map(|&(i, w)| w * x[i]).sum())
            .collect()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m * self.m * self.m];
        for (t, &g) in self.taps.iter().zip(y) {
            for &(i, w) in t {
                out[i] += w * g;
            }
        }
        out
    }
}

/// Replaces each line integral `p` by `−ln(N/I₀)` with `N ~ Poisson(I₀·e^{−p})`.
/// Zero counts are clamped to one photon.
pub fn add_poisson_noise(sino: &mut Sinogram, i0: f64, rng: &mut Rng) -> Result<()> {
    if !(i0 > 0.0) {
        return Err(Error::Config(format!("photon count must be positive, got {i0}")));
    }
    for p in &mut sino.data {
        let lambda = i0 * (-*p).exp();
        let n = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| Error::Numeric(e.to_string()))?
                .sample(rng)
        } else {
            0.0
        };
        *p = -(n.max(1.0) / i0).ln();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_and_average_are_inverse() {
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let up = replicate(&x, 2, 3);
        assert_eq!(up.len(), 216);
        assert_eq!(block_average(&up, 6, 3), x);
    }

    #[test]
    fn slice_upsample_of_constant_is_constant() {
        let op = SliceUpsample::new(4, 16, 5).unwrap();
        let y = op.apply(&[2.5; 64]);
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-14));
        assert!(SliceUpsample::new(4, 16, 16).is_err());
    }

    #[test]
    fn material_must_divide_render() {
        assert!(CtSim::new(5, 16, 128.0, 8, Window::RamLak).is_err());
    }
}
