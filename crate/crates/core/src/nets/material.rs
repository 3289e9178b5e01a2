use super::{glorot, var, LATENT_DIM};
use crate::diff::{Bound, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

pub const G_M_PREFIX: &str = "g_m.";

/// Upper end of the generated attenuation range, mm⁻¹.
pub const MU_MAX: f64 = 0.05;

/// Side of the generated material cube.
pub const MATERIAL_EXTENT: usize = 16;

/// Latent `32×1³` → ×4 → conv → BN → ReLU → ×2 → conv → BN → ReLU → ×2 →
/// conv → Tanh, mapped to `[0, μ_max]` on a `16³` grid. Normalisation uses
/// the statistics of the current sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialNet {
    pub params: ParamStore,
}

impl MaterialNet {
    /// `widths` are the two hidden channel counts (256 and 128 at full size).
    pub fn new(widths: [usize; 2], rng: &mut Rng) -> Self {
        let chans = [LATENT_DIM, widths[0], widths[1], 1];
        let mut params = ParamStore::new();
        for l in 0..3 {
            let (ci, co) = (chans[l], chans[l + 1]);
            params.insert(format!("conv{}.w", l + 1), glorot(&[co, ci, 3, 3, 3], ci * 27, co * 27, rng));
            params.insert(format!("conv{}.b", l + 1), Tensor::zeros(&[co]));
            if l < 2 {
                params.insert(format!("bn{}.gamma", l + 1), Tensor::filled(&[co], 1.0));
                params.insert(format!("bn{}.beta", l + 1), Tensor::zeros(&[co]));
            }
        }
        MaterialNet { params }
    }

    pub fn widths(&self) -> [usize; 2] {
        [self.params.value("conv1.b").len(), self.params.value("conv2.b").len()]
    }

    /// `z` has 32 entries in any shape; returns `[16, 16, 16]` attenuation.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        let p = |n: &str| var(&self.params, bound, n);
        let mut h = tape.reshape(z, &[LATENT_DIM, 1, 1, 1])?;
        for (l, f) in [(1, 4), (2, 2), (3, 2)] {
            h = tape.upsample_nn(h, f)?;
            h = tape.conv3d(h, p(&format!("conv{l}.w")), Some(p(&format!("conv{l}.b"))))?;
            if l < 3 {
                h = tape
                    .batchnorm(h, p(&format!("bn{l}.gamma")), p(&format!("bn{l}.beta")), None)?
                    .0;
                h = tape.relu(h);
            }
        }
        let h = tape.tanh(h);
        let mu = tape.affine(h, MU_MAX / 2.0, MU_MAX / 2.0);
        tape.reshape(mu, &[MATERIAL_EXTENT; 3])
    }

    pub fn infer(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let bound = self.params.bind(&mut tape);
        let zv = tape.leaf(Tensor::from_vec(z.to_vec()));
        let m = self.forward(&mut tape, &bound, zv)?;
        Ok(tape.value(m).data().to_vec())
    }
}

/// `16³` attenuation map for latent `z`.
pub fn gen_material(net: &MaterialNet, z: &[f64]) -> Result<Vec<f64>> {
    net.infer(z)
}
