pub mod data;
pub mod evaluate;
pub mod federated;
pub mod render;
pub mod selftest;
pub mod train;

use std::path::Path;

use fedsim::phantom::{load_sample, Manifest, ManifestEntry, Split};

use crate::fail::{Context, Outcome};

pub const MANIFEST: &str = "manifest.tsv";

pub fn read_manifest(dir: &Path) -> Outcome<Manifest> {
    let p = dir.join(MANIFEST);
    Manifest::read(&p).context(p.display())
}

/// Training entries of a dataset, loaded with the labels the manifest
/// grants.
pub fn load_train(dir: &Path, m: &Manifest) -> Outcome<Vec<fedsim::glo::TrainSample>> {
    m.in_split(Split::Train)
        .map(|e: &ManifestEntry| {
            let s = load_sample(dir, e).context(&e.id)?;
            fedsim::glo::TrainSample::from_loaded(s).context(&e.id)
        })
        .collect()
}

/// `"12,4,4"` → `[12, 4, 4]`.
pub fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<usize>| format!("expected three sizes, got {}", v.len()))
}
