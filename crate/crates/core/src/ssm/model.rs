use nalgebra::{DMatrix, Rotation3, SymmetricEigen, Vector3};

use super::Surface;
use crate::diff::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::fsct::Container;

/// Mode weights are clamped to `±CLAMP_SIGMAS·√λ`.
pub const CLAMP_SIGMAS: f64 = 1.5;

/// Eigenvalues at or below this fraction of the largest are treated as zero.
const EIG_REL_TOL: f64 = 1e-10;

/// PCA shape model `s ≈ s̃ + Φ b` over corresponded surfaces.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeModel {
    /// `3V` coordinates, vertex-major `(x, y, z)`.
    pub mean: Vec<f64>,
    /// Orthonormal modes, `basis[j]` has length `3V`.
    pub basis: Vec<Vec<f64>>,
    /// Descending, strictly positive.
    pub eigvals: Vec<f64>,
    pub surface: Surface,
}

/// Shape parameters `τ_S`: mode weights plus a similarity pose.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeParams {
    pub b: Vec<f64>,
    /// Axis-angle rotation in radians.
    pub rotation: [f64; 3],
    /// Translation in mm.
    pub translation: [f64; 3],
    pub log_scale: f64,
}

/// Pose coordinates following the mode weights in the flat layout.
pub const POSE_DIMS: usize = 7;

impl ShapeParams {
    pub fn zeros(n_modes: usize) -> Self {
        ShapeParams {
            b: vec![0.0; n_modes],
            rotation: [0.0; 3],
            translation: [0.0; 3],
            log_scale: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len() + POSE_DIMS
    }

    /// `[b.., r_x, r_y, r_z, t_x, t_y, t_z, σ]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.b.clone();
        v.extend_from_slice(&self.rotation);
        v.extend_from_slice(&self.translation);
        v.push(self.log_scale);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < POSE_DIMS {
            return Err(shape_err!("shape parameter vector too short: {}", v.len()));
        }
        let k = v.len() - POSE_DIMS;
        Ok(ShapeParams {
            b: v[..k].to_vec(),
            rotation: [v[k], v[k + 1], v[k + 2]],
            translation: [v[k + 3], v[k + 4], v[k + 5]],
            log_scale: v[k + 6],
        })
    }
}

impl ShapeModel {
    pub fn n_modes(&self) -> usize {
        self.eigvals.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.mean.len() / 3
    }

    /// Dimension of `τ_S`.
    pub fn param_dim(&self) -> usize {
        self.n_modes() + POSE_DIMS
    }

    pub fn clamp_limit(&self, j: usize) -> f64 {
        CLAMP_SIGMAS * self.eigvals[j].sqrt()
    }

    /// Elementwise clamp to `±1.5√λ_j`; weights past the retained modes
    /// become zero.
    pub fn clamp(&self, b: &[f64]) -> Vec<f64> {
        b.iter()
            .enumerate()
            .map(|(j, &x)| {
                if j < self.n_modes() {
                    let l = self.clamp_limit(j);
                    x.clamp(-l, l)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `s̃ + Φ·clamp(b)` in model coordinates.
    pub fn shape(&self, b: &[f64]) -> Vec<f64> {
        let b = self.clamp(b);
        let mut s = self.mean.clone();
        for (phi, &w) in self.basis.iter().zip(&b) {
            if w != 0.0 {
                for (x, p) in s.iter_mut().zip(phi) {
                    *x += w * p;
                }
            }
        }
        s
    }

    /// `exp(σ)·R(r)·(s̃ + Φ·clamp(b)) + t`, per vertex.
    pub fn synthesize(&self, tau: &ShapeParams) -> Vec<f64> {
        let mut s = self.shape(&tau.b);
        let rot = Rotation3::new(Vector3::from(tau.rotation));
        let scale = tau.log_scale.exp();
        let identity = tau.rotation == [0.0; 3] && tau.log_scale == 0.0;
        for p in s.chunks_mut(3) {
            if !identity {
                let q = rot * Vector3::new(p[0], p[1], p[2]) * scale;
                p.copy_from_slice(q.as_slice());
            }
            for k in 0..3 {
                p[k] += tau.translation[k];
            }
        }
        s
    }

    /// Mode weights `Φᵀ(s − s̃)` of a shape in model coordinates.
    pub fn project(&self, shape: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|phi| {
                phi.iter()
                    .zip(shape.iter().zip(&self.mean))
                    .map(|(p, (s, m))| p * (s - m))
                    .sum()
            })
            .collect()
    }

    /// Unclamped `s̃ + Φ b`.
    pub fn reconstruct(&self, b: &[f64]) -> Vec<f64> {
        let mut s = self.mean.clone();
        for (phi, &w) in self.basis.iter().zip(b) {
            for (x, p) in s.iter_mut().zip(phi) {
                *x += w * p;
            }
        }
        s
    }

    pub fn export(&self, c: &mut Container) {
        let d = self.mean.len();
        let k = self.n_modes();
        c.push("mean", Tensor::from_vec(self.mean.clone()));
        let mut basis = Vec::with_capacity(d * k);
        for i in 0..d {
            for phi in &self.basis {
                basis.push(phi[i]);
            }
        }
        c.push("basis", Tensor::new(vec![d, k], basis).expect("basis shape"));
        c.push("eigvals", Tensor::from_vec(self.eigvals.clone()));
        c.push(
            "regions",
            Tensor::from_vec(self.surface.vertex_region.iter().map(|&r| r as f64).collect()),
        );
        let faces: Vec<f64> = self
            .surface
            .faces
            .iter()
            .flat_map(|f| f.iter().map(|&i| i as f64))
            .collect();
        c.push(
            "faces",
            Tensor::new(vec![self.surface.faces.len(), 3], faces).expect("faces shape"),
        );
    }

    pub fn import(c: &Container) -> Result<Self> {
        let mean = c.require("mean")?.data().to_vec();
        let basis_t = c.require("basis")?;
        let eigvals = c.require("eigvals")?.data().to_vec();
        let regions = c.require("regions")?;
        let faces_t = c.require("faces")?;
        let d = mean.len();
        let k = eigvals.len();
        if basis_t.shape() != [d, k] || regions.len() * 3 != d || faces_t.rank() != 2 || faces_t.shape()[1] != 3 {
            return Err(Error::Format("inconsistent shape model arrays".into()));
        }
        let basis = (0..k)
            .map(|j| (0..d).map(|i| basis_t.data()[i * k + j]).collect())
            .collect();
        let to_int = |x: f64, bound: usize| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 && (x as usize) < bound {
                Ok(x as usize)
            } else {
                Err(Error::Format(format!("invalid index {x} in shape model")))
            }
        };
        let vertex_region = regions
            .data()
            .iter()
            .map(|&r| to_int(r, 256).map(|r| r as u8))
            .collect::<Result<Vec<u8>>>()?;
        let n_regions = vertex_region.iter().copied().max().unwrap_or(0) as usize;
        let mut faces = Vec::with_capacity(faces_t.shape()[0]);
        let mut face_region = Vec::with_capacity(faces_t.shape()[0]);
        for t in faces_t.data().chunks(3) {
            let f = [
                to_int(t[0], d / 3)? as u32,
                to_int(t[1], d / 3)? as u32,
                to_int(t[2], d / 3)? as u32,
            ];
            face_region.push(vertex_region[f[0] as usize]);
            faces.push(f);
        }
        let model = ShapeModel {
            mean,
            basis,
            eigvals,
            surface: Surface {
                n_regions,
                vertex_region,
                faces,
                face_region,
            },
        };
        Ok(model)
    }
}

/// Builds the PCA model from corresponded shapes through the `M × M` Gram
/// matrix and keeps at most `k` modes with positive variance.
pub fn build_ssm(shapes: &[Vec<f64>], k: usize, surface: Surface) -> Result<ShapeModel> {
    let m = shapes.len();
    if k == 0 {
        return Err(Error::Config("at least one mode is required".into()));
    }
    if m < k + 1 {
        return Err(Error::Data(format!("{m} shapes cannot support {k} modes (need {})", k + 1)));
    }
    let d = shapes[0].len();
    if d == 0 || !d.is_multiple_of(3) || d / 3 != surface.num_vertices() {
        return Err(shape_err!(
            "shape length {d} does not match {} surface vertices",
            surface.num_vertices()
        ));
    }
    if let Some(bad) = shapes.iter().position(|s| s.len() != d) {
        return Err(shape_err!("shape {bad} has {} coordinates, expected {d}", shapes[bad].len()));
    }
    if shapes.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric("non-finite shape coordinate".into()));
    }

    let mut mean = vec![0.0; d];
    for s in shapes {
        for (a, b) in mean.iter_mut().zip(s) {
            *a += b;
        }
    }
    for a in &mut mean {
        *a /= m as f64;
    }
    let centred: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(a, b)| a - b).collect())
        .collect();

    // Covariance C = XᵀX/(M−1) shares its nonzero spectrum with G = XXᵀ/(M−1).
    let denom = (m - 1) as f64;
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>() / denom;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lmax = eig.eigenvalues[order[0]];
    // Identical shapes leave only rounding noise in the mean subtraction.
    let energy = shapes
        .iter()
        .map(|s| s.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    if !(lmax > 1e-24 * energy) {
        return Err(Error::Degenerate("training shapes have zero variance".into()));
    }

    let mut basis = Vec::new();
    let mut eigvals = Vec::new();
    for &idx in order.iter().take(k) {
        let lambda = eig.eigenvalues[idx];
        if lambda <= EIG_REL_TOL * lmax {
            break;
        }
        // φ = Xᵀu / √((M−1)λ)
        let u = eig.eigenvectors.column(idx);
        let norm = (denom * lambda).sqrt();
        let mut phi = vec![0.0; d];
        for (i, row) in centred.iter().enumerate() {
            let w = u[i] / norm;
            for (p, x) in phi.iter_mut().zip(row) {
                *p += w * x;
            }
        }
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = phi
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, &v)| if v.abs() > acc.1.abs() { (i, v) } else { acc });
        if pivot.1 < 0.0 {
            for p in &mut phi {
                *p = -*p;
            }
        }
        // Re-orthogonalise against earlier modes; Gram-space rounding is
        // amplified by 1/√λ for small modes.
        for _ in 0..2 {
            for q in &basis {
                let c: f64 = phi.iter().zip(q).map(|(a, b)| a * b).sum();
                for (p, b) in phi.iter_mut().zip(q) {
                    *p -= c * b;
                }
            }
            let n = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
            for p in &mut phi {
                *p /= n;
            }
        }
        basis.push(phi);
        eigvals.push(lambda);
    }
    Ok(ShapeModel {
        mean,
        basis,
        eigvals,
        surface,
    })
}
