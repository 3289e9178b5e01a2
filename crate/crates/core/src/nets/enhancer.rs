use rand::Rng as _;

use super::var;
use crate::diff::ops::LEAKY_SLOPE;
use crate::diff::{Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

pub const ENH_PREFIX: &str = "enh.";

/// Four 3×3 convolutions `3 → w → w → w → 1` with LeakyReLU between and a
/// linear output. Input channels: upsampled coarse slice, label slice,
/// constant plane `k/H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Enhancer {
    pub params: ParamStore,
}

impl Enhancer {
    /// Initialised so the output equals input channel 0. Hidden channels 0
    /// and 1 carry `+x` and `−x`; since `leaky(x) − leaky(−x) = (1 + s)·x`
    /// the pair survives each activation linearly. The remaining hidden
    /// channels start random and feed the output through zero weights.
    pub fn identity(width: usize, rng: &mut Rng) -> Self {
        assert!(width >= 2, "enhancer needs at least two hidden channels");
        let chans = [3, width, width, width, 1];
        let centre = 4;
        let mut params = ParamStore::new();
        for l in 0..4 {
            let (ci, co) = (chans[l], chans[l + 1]);
            let a = (6.0 / ((ci + co) * 9) as f64).sqrt();
            let mut w = vec![0.0; co * ci * 9];
            let at = |o: usize, c: usize| (o * ci + c) * 9 + centre;
            if l < 3 {
                for o in 2..co {
                    for v in &mut w[o * ci * 9..(o + 1) * ci * 9] {
                        *v = rng.random_range(-a..a);
                    }
                }
            }
            let g = 1.0 / (1.0 + LEAKY_SLOPE);
            if l == 0 {
                w[at(0, 0)] = 1.0;
                w[at(1, 0)] = -1.0;
            } else if l < 3 {
                w[at(0, 0)] = g;
                w[at(0, 1)] = -g;
                w[at(1, 0)] = -g;
                w[at(1, 1)] = g;
            } else {
                w[at(0, 0)] = g;
                w[at(0, 1)] = -g;
            }
            params.insert(
                format!("conv{}.w", l + 1),
                Tensor::new(vec![co, ci, 3, 3], w).expect("weight shape"),
            );
            params.insert(format!("conv{}.b", l + 1), Tensor::zeros(&[co]));
        }
        Enhancer { params }
    }

    pub fn width(&self) -> usize {
        self.params.value("conv1.b").len()
    }

    /// `x` is `[3, H, W]`; returns `[1, H, W]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let p = |n: &str| var(&self.params, bound, n);
        let mut h = x;
        for l in 1..=4 {
            h = tape.conv2d(h, p(&format!("conv{l}.w")), Some(p(&format!("conv{l}.b"))))?;
            if l < 4 {
                h = tape.leaky_relu(h);
            }
        }
        Ok(h)
    }

    /// Enhanced `H × H` slice.
    pub fn enhance_slice(&self, coarse: &[f64], labels: &[f64], k: usize, h: usize) -> Result<Vec<f64>> {
        let input = enhancer_input(coarse, labels, k, h)?;
        let mut tape = Tape::inference();
        let bound = self.params.bind(&mut tape);
        let xv = tape.leaf(input);
        let y = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(y).data().to_vec())
    }
}

/// Stacks the coarse slice, the label slice and the constant plane `k/H`.
pub fn enhancer_input(coarse: &[f64], labels: &[f64], k: usize, h: usize) -> Result<Tensor> {
    if k >= h {
        return Err(Error::Config(format!("slice index {k} outside 0..{h}")));
    }
    if coarse.len() != h * h || labels.len() != h * h {
        return Err(shape_err!(
            "slices have {} and {} pixels, expected {h}×{h}",
            coarse.len(),
            labels.len()
        ));
    }
    let mut data = Vec::with_capacity(3 * h * h);
    data.extend_from_slice(coarse);
    data.extend_from_slice(labels);
    data.extend(std::iter::repeat_n(k as f64 / h as f64, h * h));
    Tensor::new(vec![3, h, h], data)
}
