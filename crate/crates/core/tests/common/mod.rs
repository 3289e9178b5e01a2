//! Small synthetic datasets shared by the training tests.
#![allow(dead_code)]

use fedsim::glo::{GloConfig, TrainSample};
use fedsim::phantom::{generate_sample, shape_library, PhantomFamily, RenderSpec};
use fedsim::ssm::{build_ssm, ShapeModel};

pub const REGIONS: usize = 7;

/// `n` samples of `family` at `res³`; the first `labeled` keep labels.
pub fn dataset(family: &str, res: usize, n: usize, labeled: usize, seed: u64) -> Vec<TrainSample> {
    let f = PhantomFamily::preset(family, REGIONS).unwrap();
    (0..n)
        .map(|i| {
            let s = generate_sample(&f, RenderSpec::new(res), seed, i).unwrap();
            TrainSample::new(s.id, s.volume, (i < labeled).then_some(s.labels)).unwrap()
        })
        .collect()
}

/// Shape model from a library of draws disjoint from the dataset streams.
pub fn model(family: &str, res: usize, shapes: usize, modes: usize) -> ShapeModel {
    let f = PhantomFamily::preset(family, REGIONS).unwrap();
    build_ssm(&shape_library(&f, shapes, res, 99).unwrap(), modes, f.surface()).unwrap()
}

/// Reduced network widths for time-boxed tests.
pub fn small_config(res: usize, n_modes: usize) -> GloConfig {
    let mut c = GloConfig::new(res, 56.0);
    c.n_modes = n_modes;
    c.material_widths = [8, 4];
    c.enhancer_width = 8;
    c
}
