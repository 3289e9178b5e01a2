use super::{Geometry, Sinogram, Volume};
use crate::diff::LinearOp;
use crate::error::{shape_err, Result};
use crate::par;

/// Back-projection partial sums are formed over this many contiguous view
/// groups and added in group order, so the result does not depend on the
/// thread count.
const BP_GROUPS: usize = 8;

/// Joseph interpolating projector bound to one geometry.
///
/// Each ray is sampled once per voxel plane orthogonal to its dominant axis;
/// at each crossing the two remaining coordinates are bilinearly interpolated
/// and weighted by the path length between planes. Neighbours outside the
/// grid contribute zero. The adjoint reuses the same weights transposed.
#[derive(Clone, Debug)]
pub struct Projector {
    geom: Geometry,
}

impl Projector {
    pub fn new(geom: Geometry) -> Result<Self> {
        geom.validate()?;
        Ok(Projector { geom })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn forward(&self, vol: &[f64]) -> Vec<f64> {
        let g = &self.geom;
        assert_eq!(vol.len(), g.num_voxels(), "volume size");
        let per_view = g.det_rows * g.det_cols;
        let mut out = vec![0.0; g.num_rays()];
        par::for_each_chunk_mut(&mut out, per_view, |v, chunk| {
            for r in 0..g.det_rows {
                for c in 0..g.det_cols {
                    let (o, d) = g.ray(v, r, c);
                    let mut acc = 0.0;
                    trace(g.extents, g.spacing, o, d, |i, w| acc += w * vol[i]);
                    chunk[r * g.det_cols + c] = acc;
                }
            }
        });
        out
    }

    pub fn adjoint(&self, sino: &[f64]) -> Vec<f64> {
        let g = &self.geom;
        assert_eq!(sino.len(), g.num_rays(), "sinogram size");
        let n_views = g.n_views();
        let groups = BP_GROUPS.min(n_views);
        let per_view = g.det_rows * g.det_cols;
        let partials = par::map_range(groups, |k| {
            let mut acc = vec![0.0; g.num_voxels()];
            for v in k * n_views / groups..(k + 1) * n_views / groups {
                for r in 0..g.det_rows {
                    for c in 0..g.det_cols {
                        let y = sino[v * per_view + r * g.det_cols + c];
                        if y == 0.0 {
                            continue;
                        }
                        let (o, d) = g.ray(v, r, c);
                        trace(g.extents, g.spacing, o, d, |i, w| acc[i] += w * y);
                    }
                }
            }
            acc
        });
        let mut it = partials.into_iter();
        let mut out = it.next().expect("at least one view group");
        for p in it {
            for (a, b) in out.iter_mut().zip(&p) {
                *a += b;
            }
        }
        out
    }
}

impl LinearOp for Projector {
    fn input_shape(&self) -> Vec<usize> {
        self.geom.extents.to_vec()
    }

    fn output_shape(&self) -> Vec<usize> {
        self.geom.sinogram_shape().to_vec()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x)
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        Projector::adjoint(self, y)
    }
}

/// Line integrals of `vol` for every ray of `geom`.
pub fn forward_project(vol: &Volume, geom: &Geometry) -> Result<Sinogram> {
    check_volume(vol, geom)?;
    let p = Projector::new(geom.clone())?;
    Sinogram::from_vec(geom.sinogram_shape(), p.forward(&vol.data))
}

/// Exact adjoint of [`forward_project`].
pub fn back_project(sino: &Sinogram, geom: &Geometry) -> Result<Volume> {
    if sino.shape != geom.sinogram_shape() {
        return Err(shape_err!(
            "sinogram {:?} does not match geometry {:?}",
            sino.shape,
            geom.sinogram_shape()
        ));
    }
    let p = Projector::new(geom.clone())?;
    Volume::from_vec(geom.extents, geom.spacing, p.adjoint(&sino.data))
}

pub(super) fn check_volume(vol: &Volume, geom: &Geometry) -> Result<()> {
    if vol.extents != geom.extents {
        return Err(shape_err!(
            "volume {:?} does not match geometry {:?}",
            vol.extents,
            geom.extents
        ));
    }
    if (vol.spacing - geom.spacing).abs() > 1e-12 * geom.spacing {
        return Err(shape_err!(
            "volume spacing {} does not match geometry spacing {}",
            vol.spacing,
            geom.spacing
        ));
    }
    Ok(())
}

/// Visits `(voxel index, weight)` pairs of one ray. `ext` is `[D, H, W]`,
/// `o` and `d` are in mm with `x, y, z` ordering. Weights already include the
/// path length per plane.
#[inline]
fn trace(ext: [usize; 3], s: f64, o: [f64; 3], d: [f64; 3], mut visit: impl FnMut(usize, f64)) {
    let n = [ext[2], ext[1], ext[0]];
    let stride = [1, ext[2], ext[1] * ext[2]];
    let fo = [
        o[0] / s + (n[0] as f64 - 1.0) / 2.0,
        o[1] / s + (n[1] as f64 - 1.0) / 2.0,
        o[2] / s + (n[2] as f64 - 1.0) / 2.0,
    ];
    let ad = [d[0].abs(), d[1].abs(), d[2].abs()];
    let a = if ad[0] >= ad[1] && ad[0] >= ad[2] {
        0
    } else if ad[1] >= ad[2] {
        1
    } else {
        2
    };
    let (b, c) = match a {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let step = s * norm / ad[a];
    let (rb, rc) = (d[b] / d[a], d[c] / d[a]);
    let (nb, nc) = (n[b] as f64, n[c] as f64);
    for i in 0..n[a] {
        let dt = i as f64 - fo[a];
        let fb = fo[b] + dt * rb;
        let fc = fo[c] + dt * rc;
        if fb <= -1.0 || fc <= -1.0 || fb >= nb || fc >= nc {
            continue;
        }
        let (b0, c0) = (fb.floor(), fc.floor());
        let (wb, wc) = (fb - b0, fc - c0);
        let (b0, c0) = (b0 as isize, c0 as isize);
        let base = i * stride[a];
        for (db, w_b) in [(0, 1.0 - wb), (1, wb)] {
            let bi = b0 + db;
            if w_b == 0.0 || bi < 0 || bi as usize >= n[b] {
                continue;
            }
            for (dc, w_c) in [(0, 1.0 - wc), (1, wc)] {
                let ci = c0 + dc;
                if w_c == 0.0 || ci < 0 || ci as usize >= n[c] {
                    continue;
                }
                visit(
                    base + bi as usize * stride[b] + ci as usize * stride[c],
                    step * w_b * w_c,
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_voxel_angle_zero() {
        let g = Geometry::parallel2d(5, 0.7, 4);
        let mut v = Volume::zeros(g.extents, g.spacing);
        let c = v.index(0, 2, 2);
        v.data[c] = 0.3;
        let s = forward_project(&v, &g).unwrap();
        let mid = (g.det_cols - 1) / 2;
        assert!((s.data[mid] - 0.3 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_in_zero_out() {
        let g = Geometry::cone_beam(6, 1.0, 5);
        let s = forward_project(&Volume::zeros(g.extents, 1.0), &g).unwrap();
        assert!(s.data.iter().all(|&x| x == 0.0));
        let v = back_project(&Sinogram::zeros(g.sinogram_shape()), &g).unwrap();
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let g = Geometry::parallel2d(8, 1.0, 4);
        assert!(forward_project(&Volume::zeros([1, 8, 9], 1.0), &g).is_err());
        assert!(back_project(&Sinogram::zeros([3, 1, g.det_cols]), &g).is_err());
    }

    #[test]
    fn constant_disk_chord_length() {
        // A uniform slab along the ray direction integrates to μ·length.
        let g = Geometry::parallel2d(16, 1.0, 2);
        let v = Volume::from_vec(g.extents, 1.0, vec![0.02; 256]).unwrap();
        let s = forward_project(&v, &g).unwrap();
        let mid = (g.det_cols - 1) / 2;
        // Ray x = 0 lies between columns 7 and 8 and crosses 16 rows.
        assert!((s.data[mid] - 0.02 * 16.0).abs() < 1e-12);
    }
}
