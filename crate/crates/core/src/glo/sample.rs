use super::prior::LatentPrior;
use super::train::TrainState;
use crate::ct::{SliceUpsample, Volume};
use crate::diff::LinearOp;
use crate::error::Result;
use crate::nets::MATERIAL_EXTENT;
use crate::par;
use crate::rng::stream;
use crate::ssm::{LabelVolume, ShapeParams};

/// A generated volume with its labels and the shape parameters behind them.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub tau: ShapeParams,
    pub labels: LabelVolume,
    pub volume: Volume,
}

/// Full chain for one latent: shape → labels, material → simulated coarse
/// volume, then every slice through the enhancer.
pub fn generate(state: &TrainState, z: &[f64]) -> Result<Synthetic> {
    let h = state.config.render;
    let tau = state.shape_params(z)?;
    let labels = state.labels_for(&tau)?;
    let mu = state.material_net.infer(z)?;
    let coarse = state.sim().apply(&mu);
    let r = state.ssm.surface.n_regions as f64;
    let slices = par::map_range(h, |k| -> Result<Vec<f64>> {
        let c = SliceUpsample::new(MATERIAL_EXTENT, h, k)?.apply(&coarse);
        let lab: Vec<f64> = labels.slice(k).iter().map(|&v| v as f64 / r).collect();
        state.enhancer.enhance_slice(&c, &lab, k, h)
    });
    let mut data = Vec::with_capacity(h * h * h);
    for s in slices {
        data.extend(s?);
    }
    let volume = Volume::from_vec([h; 3], state.config.spacing(), data)?;
    Ok(Synthetic { tau, labels, volume })
}

/// `n` samples with latents drawn from `prior`; sample `j` depends only on
/// `(seed, j)` and the trained state.
pub fn sample_dataset(state: &TrainState, prior: &LatentPrior, n: usize, seed: u64) -> Result<Vec<Synthetic>> {
    (0..n)
        .map(|j| generate(state, &prior.sample(&mut stream(seed, "sample", j as u64))))
        .collect()
}
