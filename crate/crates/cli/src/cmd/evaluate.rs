use std::path::{Path, PathBuf};

use clap::Args;
use fedsim::eval::{evaluate_protocol, report_csv, require_paths, ProtocolConfig, SegSample, SegTrainConfig, SiteSplits, Target};
use fedsim::glo::sample_dataset;
use fedsim::phantom::{read_labels, read_volume, Manifest, ManifestEntry, Split};
use serde::Serialize;

use super::train::{open_run, CONFIG, MODEL, SSM};
use super::{read_manifest, MANIFEST};
use crate::config::{canonical, load, EvalConfig, EvalSite};
use crate::fail::{Context, Failure, Outcome};
use crate::output::{run_info_path, write_files, RunInfo};

/// Score segmenters trained on real, generated and fully labeled data.
#[derive(Args, Debug, Serialize)]
pub struct Evaluate {
    /// TOML evaluation config.
    #[arg(long)]
    pub config: PathBuf,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

/// Every file a site needs, checked before any work starts.
fn site_inputs(s: &EvalSite) -> Vec<PathBuf> {
    let mut v = vec![s.data.join(MANIFEST)];
    v.extend([MODEL, CONFIG, SSM, MANIFEST].map(|f| s.run.join(f)));
    v
}

/// Loads an entry with its label file whether or not the manifest grants
/// the label to the generator.
fn real_sample(dir: &Path, e: &ManifestEntry, target: Target) -> Outcome<SegSample> {
    let Some(lab) = &e.labels else {
        return Err(Failure::new(crate::fail::Kind::Other, format!("{}: no label file", e.id)));
    };
    let v = read_volume(&dir.join(&e.volume)).context(&e.id)?;
    let (l, _) = read_labels(&dir.join(lab)).context(&e.id)?;
    Ok(SegSample::new(e.id.clone(), v, &l, target)?)
}

fn site_splits(cfg: &EvalConfig, s: &EvalSite, target: Target) -> Outcome<SiteSplits> {
    let m: Manifest = read_manifest(&s.data)?;
    let load = |split: Split, labeled_only: bool| -> Outcome<Vec<SegSample>> {
        m.in_split(split)
            .filter(|e| !labeled_only || e.labeled)
            .map(|e| real_sample(&s.data, e, target))
            .collect()
    };
    let run = open_run(&s.run)?;
    let prior = run.state.fit_latent_prior()?;
    let synthetic = sample_dataset(&run.state, &prior, cfg.synthetic, cfg.synthetic_seed)?
        .into_iter()
        .enumerate()
        .map(|(j, g)| SegSample::new(format!("gen-{j:03}"), g.volume, &g.labels, target))
        .collect::<Result<_, _>>()?;
    Ok(SiteSplits {
        site: s.name.clone(),
        labeled: load(Split::Train, true)?,
        train_full: load(Split::Train, false)?,
        synthetic,
        test: load(Split::Test, false)?,
    })
}

pub fn evaluate(a: &Evaluate) -> Outcome<()> {
    let cfg: EvalConfig = load(&a.config)?;
    if cfg.sites.is_empty() {
        return Err(Failure::config("evaluation needs at least one site"));
    }
    let inputs: Vec<PathBuf> = cfg.sites.iter().flat_map(site_inputs).collect();
    require_paths(&inputs)?;
    let target = match cfg.target_region {
        0 => Target::Foreground,
        r => Target::Region(r),
    };
    let sites: Vec<SiteSplits> = cfg
        .sites
        .iter()
        .map(|s| site_splits(&cfg, s, target).context(&s.name))
        .collect::<Outcome<_>>()?;
    let protocol = ProtocolConfig {
        train: SegTrainConfig {
            pretrain_epochs: cfg.segmenter.pretrain_epochs,
            finetune_epochs: cfg.segmenter.finetune_epochs,
            lr: cfg.segmenter.lr,
            seed: 0,
        },
        seeds: cfg.seeds.clone(),
    };
    let rows = evaluate_protocol(&sites, &protocol)?;
    let csv = report_csv(&rows);
    let info = RunInfo::new("evaluate", cfg.seeds.first().copied().unwrap_or(0), canonical(&cfg)).to_toml();
    write_files(&[(a.out.clone(), csv.clone().into_bytes()), (run_info_path(&a.out), info.into_bytes())])?;
    print!("{csv}");
    Ok(())
}
