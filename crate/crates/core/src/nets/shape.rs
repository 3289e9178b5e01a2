use std::f64::consts::PI;

use super::{glorot, var};
use crate::diff::{Bound, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;
use crate::ssm::{ShapeModel, ShapeParams, CLAMP_SIGMAS, POSE_DIMS};

pub const LATENT_DIM: usize = 32;
pub const G_S_PREFIX: &str = "g_s.";

const HIDDEN: [usize; 2] = [256, 128];

/// Latent → normalised shape parameters: three dense layers with
/// LeakyReLU, LeakyReLU, Tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeNet {
    pub params: ParamStore,
}

impl ShapeNet {
    /// `out_dim` is the number of modes plus the seven pose coordinates.
    pub fn new(out_dim: usize, rng: &mut Rng) -> Self {
        let dims = [LATENT_DIM, HIDDEN[0], HIDDEN[1], out_dim];
        let mut params = ParamStore::new();
        for l in 0..3 {
            params.insert(format!("w{}", l + 1), glorot(&[dims[l], dims[l + 1]], dims[l], dims[l + 1], rng));
            params.insert(format!("b{}", l + 1), Tensor::zeros(&[dims[l + 1]]));
        }
        ShapeNet { params }
    }

    /// All weights and biases zero.
    pub fn zeros(out_dim: usize) -> Self {
        let mut net = ShapeNet::new(out_dim, &mut crate::rng::stream(0, "zeros", 0));
        for (_, p) in net.params.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        net
    }

    pub fn out_dim(&self) -> usize {
        self.params.value("b3").len()
    }

    /// `z` is `[1, 32]`; returns `[1, out_dim]` in `(−1, 1)`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        let p = |n: &str| var(&self.params, bound, n);
        let mut h = z;
        for l in 1..=3 {
            h = tape.matmul(h, p(&format!("w{l}")))?;
            h = tape.add_row_bias(h, p(&format!("b{l}")))?;
            h = if l < 3 { tape.leaky_relu(h) } else { tape.tanh(h) };
        }
        Ok(h)
    }

    pub fn infer(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let bound = self.params.bind(&mut tape);
        let zv = tape.leaf(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let u = self.forward(&mut tape, &bound, zv)?;
        Ok(tape.value(u).data().to_vec())
    }
}

/// Affine maps from tanh outputs to shape parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeRanges {
    /// `1.5·√λ_j` for retained modes, zero for unused outputs.
    pub mode_scale: Vec<f64>,
    /// Radians.
    pub rotation: f64,
    /// mm.
    pub translation: f64,
    pub log_scale: f64,
}

impl ShapeRanges {
    /// Modes ×1.5√λ, rotation ×π/8, translation ×extent/8, log-scale ×0.1.
    /// `n_mode_outputs` may exceed the model's retained modes.
    pub fn for_model(model: &ShapeModel, n_mode_outputs: usize, extent_mm: f64) -> Self {
        let mode_scale = (0..n_mode_outputs)
            .map(|j| {
                if j < model.n_modes() {
                    CLAMP_SIGMAS * model.eigvals[j].sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        ShapeRanges {
            mode_scale,
            rotation: PI / 8.0,
            translation: extent_mm / 8.0,
            log_scale: 0.1,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mode_scale.len() + POSE_DIMS
    }

    /// Per-output scale in the flat `[modes.., r, t, σ]` layout.
    pub fn scales(&self) -> Vec<f64> {
        let mut v = self.mode_scale.clone();
        v.extend([self.rotation; 3]);
        v.extend([self.translation; 3]);
        v.push(self.log_scale);
        v
    }

    /// Shape parameters for a model with `n_modes` retained modes.
    pub fn denormalize(&self, u: &[f64], n_modes: usize) -> ShapeParams {
        let k = self.mode_scale.len();
        assert_eq!(u.len(), k + POSE_DIMS, "network output width");
        let s = self.scales();
        let x: Vec<f64> = u.iter().zip(&s).map(|(a, b)| a * b).collect();
        let mut flat = x[..n_modes.min(k)].to_vec();
        flat.resize(n_modes, 0.0);
        flat.extend_from_slice(&x[k..]);
        ShapeParams::from_slice(&flat).expect("pose coordinates present")
    }

    /// Chain rule from `∂L/∂τ` back to `∂L/∂u`.
    pub fn pullback(&self, grad_tau: &[f64]) -> Vec<f64> {
        let k = self.mode_scale.len();
        let n_modes = grad_tau.len() - POSE_DIMS;
        let s = self.scales();
        let mut g = vec![0.0; k + POSE_DIMS];
        for j in 0..k.min(n_modes) {
            g[j] = grad_tau[j] * s[j];
        }
        for j in 0..POSE_DIMS {
            g[k + j] = grad_tau[n_modes + j] * s[k + j];
        }
        g
    }
}

pub fn gen_shape_params(net: &ShapeNet, ranges: &ShapeRanges, z: &[f64], n_modes: usize) -> Result<ShapeParams> {
    Ok(ranges.denormalize(&net.infer(z)?, n_modes))
}
