//! The shape, material and enhancer networks, each owning a named
//! [`ParamStore`](crate::diff::ParamStore) whose entries are checkpointed under
//! a fixed prefix.

mod enhancer;
mod material;
mod shape;

pub use enhancer::{enhancer_input, Enhancer, ENH_PREFIX};
pub use material::{gen_material, MaterialNet, G_M_PREFIX, MATERIAL_EXTENT, MU_MAX};
pub use shape::{gen_shape_params, ShapeNet, ShapeRanges, G_S_PREFIX, LATENT_DIM};

use rand::Rng as _;

use crate::diff::{Bound, ParamStore, Tensor, Var};
use crate::rng::Rng;

/// Uniform `±√(6/(fan_in + fan_out))` weights.
pub(crate) fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Tape variable bound to parameter `name`.
pub(crate) fn var(store: &ParamStore, bound: &Bound, name: &str) -> Var {
    bound.var(
        store
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}")),
    )
}
