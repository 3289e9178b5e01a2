use std::f64::consts::PI;

/// Shared spherical parameterisation giving every region the same vertex
/// layout: a north pole, `n_rings` latitude rings of `n_phi` vertices, and a
/// south pole. Corresponding vertices across shapes share `(ring, phi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SphereGrid {
    pub n_rings: usize,
    pub n_phi: usize,
}

impl SphereGrid {
    pub fn new(n_rings: usize, n_phi: usize) -> Self {
        assert!(n_rings >= 1 && n_phi >= 3, "sphere grid too coarse");
        SphereGrid { n_rings, n_phi }
    }

    pub fn vertices_per_region(&self) -> usize {
        self.n_rings * self.n_phi + 2
    }

    /// Unit directions in vertex order.
    pub fn directions(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.vertices_per_region());
        out.push([0.0, 0.0, 1.0]);
        for i in 0..self.n_rings {
            let theta = PI * (i + 1) as f64 / (self.n_rings + 1) as f64;
            let (st, ct) = theta.sin_cos();
            for j in 0..self.n_phi {
                let phi = 2.0 * PI * j as f64 / self.n_phi as f64;
                let (sp, cp) = phi.sin_cos();
                out.push([st * cp, st * sp, ct]);
            }
        }
        out.push([0.0, 0.0, -1.0]);
        out
    }

    /// Outward-oriented triangles of one region, indices local to it.
    pub fn faces(&self) -> Vec<[u32; 3]> {
        let (nr, np) = (self.n_rings as u32, self.n_phi as u32);
        let ring = |i: u32, j: u32| 1 + i * np + (j % np);
        let south = 1 + nr * np;
        let mut f = Vec::with_capacity(2 * np as usize * nr as usize);
        for j in 0..np {
            f.push([0, ring(0, j), ring(0, j + 1)]);
        }
        for i in 0..nr - 1 {
            for j in 0..np {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                f.push([a, c, d]);
                f.push([a, d, b]);
            }
        }
        for j in 0..np {
            f.push([south, ring(nr - 1, j + 1), ring(nr - 1, j)]);
        }
        f
    }
}

/// Closed triangle surfaces of `n_regions` regions laid out back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    pub n_regions: usize,
    /// Region id (1-based) per vertex.
    pub vertex_region: Vec<u8>,
    /// Global vertex indices, grouped by region.
    pub faces: Vec<[u32; 3]>,
    /// Region id per face.
    pub face_region: Vec<u8>,
}

impl Surface {
    pub fn from_grid(grid: SphereGrid, n_regions: usize) -> Self {
        assert!((1..=255).contains(&n_regions), "region count out of range");
        let nv = grid.vertices_per_region();
        let local = grid.faces();
        let mut vertex_region = Vec::with_capacity(nv * n_regions);
        let mut faces = Vec::with_capacity(local.len() * n_regions);
        let mut face_region = Vec::with_capacity(local.len() * n_regions);
        for r in 0..n_regions {
            vertex_region.extend(std::iter::repeat_n(r as u8 + 1, nv));
            let off = (r * nv) as u32;
            for t in &local {
                faces.push([t[0] + off, t[1] + off, t[2] + off]);
                face_region.push(r as u8 + 1);
            }
        }
        Surface {
            n_regions,
            vertex_region,
            faces,
            face_region,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_region.len()
    }
}
