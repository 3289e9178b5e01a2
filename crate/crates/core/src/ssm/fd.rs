use super::{voxelize, LabelVolume, ShapeModel, ShapeParams};
use crate::error::Result;
use crate::par;

/// Central-difference steps per coordinate of `τ_S`.
#[derive(Clone, Debug, PartialEq)]
pub struct FdSteps {
    /// One per mode, in mode-weight units.
    pub modes: Vec<f64>,
    /// Radians.
    pub rotation: f64,
    /// mm.
    pub translation: f64,
    pub log_scale: f64,
}

impl FdSteps {
    /// `0.01·√λ_j` per mode, 0.01 rad, half a voxel, 0.01 in log-scale.
    pub fn for_model(model: &ShapeModel, spacing: f64) -> Self {
        FdSteps {
            modes: model.eigvals.iter().map(|l| 0.01 * l.sqrt()).collect(),
            rotation: 0.01,
            translation: 0.5 * spacing,
            log_scale: 0.01,
        }
    }

    /// Steps in the flat `[b.., r, t, σ]` layout.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.modes.clone();
        v.extend([self.rotation; 3]);
        v.extend([self.translation; 3]);
        v.push(self.log_scale);
        v
    }
}

/// Central differences of `f` at `tau`, one coordinate per task.
pub fn fd_grad<F>(tau: &ShapeParams, steps: &FdSteps, f: F) -> Vec<f64>
where
    F: Fn(&ShapeParams) -> f64 + Sync + Send,
{
    let x = tau.to_vec();
    let h = steps.to_vec();
    assert_eq!(x.len(), h.len(), "step count must match parameter count");
    par::map_range(x.len(), |i| {
        let eval = |delta: f64| {
            let mut y = x.clone();
            y[i] += delta;
            f(&ShapeParams::from_slice(&y).expect("same length"))
        };
        (eval(h[i]) - eval(-h[i])) / (2.0 * h[i])
    })
}

/// Gradient of `loss(voxelize(synthesize(τ)))` by central differences.
pub fn fd_grad_through_ssm<L>(
    model: &ShapeModel,
    tau: &ShapeParams,
    steps: &FdSteps,
    extents: [usize; 3],
    spacing: f64,
    loss: L,
) -> Result<Vec<f64>>
where
    L: Fn(&LabelVolume) -> f64 + Sync + Send,
{
    // Surface and grid are fixed; validate once so the per-coordinate
    // evaluations cannot fail.
    voxelize(&model.synthesize(tau), &model.surface, extents, spacing)?;
    Ok(fd_grad(tau, steps, |t| {
        let labels = voxelize(&model.synthesize(t), &model.surface, extents, spacing)
            .expect("validated surface");
        loss(&labels)
    }))
}
