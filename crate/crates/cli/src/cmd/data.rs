use std::path::PathBuf;

use clap::{Args, ValueEnum};
use fedsim::fsct::Container;
use fedsim::phantom::{generate_family, read_labels, shape_library, split, PhantomFamily, RenderSpec, Split};
use fedsim::ssm::build_ssm;
use serde::Serialize;

use super::{parse_triple, read_manifest, MANIFEST};
use crate::config::canonical;
use crate::fail::{Context, Failure, Outcome};
use crate::output::{pgm, run_info_path, write_files, RunInfo, Stage, RUN_INFO};

/// Generate a procedural phantom dataset with reference reconstructions.
#[derive(Args, Debug, Serialize)]
pub struct GenData {
    /// Phantom family: siteA, siteB or siteC.
    #[arg(long)]
    pub family: String,
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    /// Volume extent per side (at least 16).
    #[arg(long, default_value_t = 32)]
    pub res: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Anatomical regions per phantom.
    #[arg(long, default_value_t = 7)]
    pub regions: usize,
    /// Train, validation and test sizes, e.g. `12,4,4`. Without it every
    /// sample is a labeled training sample.
    #[arg(long, value_parser = parse_triple)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<[usize; 3]>,
    /// Training samples that keep their labels (default: all).
    #[arg(long, requires = "split")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeled: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_data(a: &GenData) -> Outcome<()> {
    let family = PhantomFamily::preset(&a.family, a.regions)?;
    let stage = Stage::new(&a.out)?;
    let mut m = generate_family(&family, a.n, RenderSpec::new(a.res), a.seed, stage.path())?;
    if let Some(sizes) = a.split {
        m = split(&m, sizes, a.labeled.unwrap_or(sizes[0]), a.seed)?;
        m.write(&stage.join(MANIFEST))?;
    }
    let first = &m.entries[0];
    let v = fedsim::phantom::read_volume(&stage.join(&first.volume))?;
    let [_, h, w] = v.extents;
    stage.write("preview.pgm", pgm(w, h, v.slice(v.extents[0] / 2)))?;
    stage.write(RUN_INFO, RunInfo::new("gen-data", a.seed, canonical(a)).to_toml())?;
    stage.commit()?;
    println!(
        "{}: {} samples of {} at {}³ ({} train, {} labeled)",
        a.out.display(),
        m.entries.len(),
        a.family,
        a.res,
        m.in_split(Split::Train).count(),
        m.num_labeled(Split::Train)
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeSource {
    /// Fresh draws of the dataset's family from a separate stream.
    Library,
    /// Surfaces of the labeled training samples.
    Labeled,
}

/// Build a statistical shape model.
#[derive(Args, Debug, Serialize)]
pub struct BuildSsm {
    /// Dataset directory (holds manifest.tsv).
    #[arg(long)]
    pub data: PathBuf,
    /// Retained modes, capped at the number of shapes minus one.
    #[arg(long, default_value_t = 14)]
    pub modes: usize,
    #[arg(long, value_enum, default_value_t = ShapeSource::Library)]
    pub source: ShapeSource,
    /// Shapes drawn for `--source library`.
    #[arg(long, default_value_t = 40)]
    pub library_size: usize,
    /// Seed of the library stream.
    #[arg(long, default_value_t = 99)]
    pub seed: u64,
    /// Output `.fsct` file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn build(a: &BuildSsm) -> Outcome<()> {
    let m = read_manifest(&a.data)?;
    let family = PhantomFamily::preset(&m.family, m.n_regions)?;
    let shapes = match a.source {
        ShapeSource::Library => shape_library(&family, a.library_size, m.res, a.seed)?,
        ShapeSource::Labeled => m
            .in_split(Split::Train)
            .filter(|e| e.labeled)
            .map(|e| {
                let p = a.data.join(e.labels.as_deref().unwrap_or_default());
                read_labels(&p).map(|(_, pts)| pts).context(p.display())
            })
            .collect::<Outcome<_>>()?,
    };
    if shapes.len() < 2 {
        return Err(Failure::config(format!("a shape model needs at least two shapes, got {}", shapes.len())));
    }
    let modes = a.modes.min(shapes.len() - 1);
    let model = build_ssm(&shapes, modes, family.surface())?;
    let mut c = Container::new();
    model.export(&mut c);
    let info = RunInfo::new("build-ssm", a.seed, canonical(a)).to_toml();
    write_files(&[(a.out.clone(), c.to_bytes()), (run_info_path(&a.out), info.into_bytes())])?;
    println!("{}: {} modes from {} shapes", a.out.display(), model.n_modes(), shapes.len());
    Ok(())
}
