use std::path::{Path, PathBuf};

use clap::Args;
use fedsim::fsct::Container;
use fedsim::glo::{metrics_csv, sample_dataset, EpochMetrics, Phase, TrainSample, TrainState};
use fedsim::phantom::{write_labels, write_volume, Manifest, ManifestEntry, Split};
use fedsim::ssm::ShapeModel;
use serde::Serialize;

use super::{load_train, read_manifest, MANIFEST};
use crate::config::{canonical, load, TrainConfig};
use crate::fail::{Context, Outcome};
use crate::output::{pgm, RunInfo, Stage, RUN_INFO};

pub const MODEL: &str = "model.fsct";
pub const METRICS: &str = "metrics.csv";
pub const CONFIG: &str = "config.toml";
pub const SSM: &str = "ssm.fsct";

pub fn read_ssm(path: &Path) -> Outcome<ShapeModel> {
    let c = Container::read_file(path).context(path.display())?;
    ShapeModel::import(&c).context(path.display())
}

/// Train a generator on one dataset.
#[derive(Args, Debug, Serialize)]
pub struct Train {
    /// TOML run config.
    #[arg(long)]
    pub config: PathBuf,
}

/// Pre-training, enhancer pre-training, then the semi-supervised schedule.
/// Unlabeled latents are drawn from the prior fitted at the phase switch.
/// The last row, at `epoch = total`, records the rates after the schedule
/// has run out.
pub fn run_schedule(st: &mut TrainState, data: &[TrainSample], mut log: impl FnMut(&EpochMetrics)) -> Outcome<Vec<EpochMetrics>> {
    let mut rows = Vec::new();
    let mut push = |row: EpochMetrics| {
        log(&row);
        rows.push(row);
    };
    for _ in 0..st.config.pretrain_epochs {
        push(st.pretrain_epoch(data)?);
    }
    for _ in 0..st.config.enhancer_epochs {
        push(st.enhancer_epoch(data)?);
    }
    let total = st.config.schedule.total();
    if total > 0 {
        if st.labeled().iter().any(|l| !l) {
            let prior = st.fit_latent_prior()?;
            st.init_unlabeled(&prior)?;
        }
        for _ in 0..total {
            push(st.semi_supervised_epoch(data)?);
        }
        let (lab, unl) = st.semi_rates(total);
        push(EpochMetrics {
            epoch: total,
            phase: Phase::SemiSupervised,
            loss_iou: None,
            loss_material: None,
            loss_enhancer: None,
            loss_unlabeled: None,
            lr_labeled: lab,
            lr_unlabeled: unl,
        });
    }
    Ok(rows)
}

pub fn train(a: &Train) -> Outcome<()> {
    let cfg: TrainConfig = load(&a.config)?;
    let m = read_manifest(&cfg.data.dir)?;
    let ssm = read_ssm(&cfg.data.ssm)?;
    let glo = cfg.generator().glo(&m, ssm.n_modes(), cfg.seed)?;
    let data = load_train(&cfg.data.dir, &m)?;
    let stage = Stage::new(&cfg.data.out)?;
    let mut st = TrainState::new(glo, ssm, &data)?;
    let rows = run_schedule(&mut st, &data, |r| {
        let loss = [r.loss_iou, r.loss_material, r.loss_enhancer, r.loss_unlabeled]
            .map(|v| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into()))
            .join(" ");
        eprintln!("{} epoch {}: {loss}", r.phase, r.epoch);
    })?;

    let mut model = Container::new();
    st.export(&mut model);
    model.write_file(stage.join(MODEL))?;
    stage.write(METRICS, metrics_csv(&rows))?;
    let text = canonical(&cfg);
    stage.write(CONFIG, &text)?;
    std::fs::copy(&cfg.data.ssm, stage.join(SSM)).context(cfg.data.ssm.display())?;
    m.write(&stage.join(MANIFEST))?;
    stage.write(RUN_INFO, RunInfo::new("train", cfg.seed, text).to_toml())?;
    stage.commit()?;
    println!("{}: {} epochs over {} samples", cfg.data.out.display(), rows.len(), data.len());
    Ok(())
}

/// A finished `train` run: its dataset index, shape model and
/// trained state. Everything comes from the run directory.
pub struct Run {
    pub manifest: Manifest,
    pub state: TrainState,
}

pub fn open_run(dir: &Path) -> Outcome<Run> {
    let config: TrainConfig = load(&dir.join(CONFIG))?;
    let manifest = read_manifest(dir)?;
    let ssm = read_ssm(&dir.join(SSM))?;
    let glo = config.generator().glo(&manifest, ssm.n_modes(), config.seed)?;
    let p = dir.join(MODEL);
    let c = Container::read_file(&p).context(p.display())?;
    let state = TrainState::from_checkpoint(glo, ssm, &c).context(p.display())?;
    Ok(Run { manifest, state })
}

/// Draw synthetic labeled volumes from a trained generator.
#[derive(Args, Debug, Serialize)]
pub struct Sample {
    /// Output directory of `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `n` generated pairs plus a manifest listing them as labeled
/// training samples.
pub fn sample(a: &Sample) -> Outcome<()> {
    let run = open_run(&a.run)?;
    let st = &run.state;
    let prior = st.fit_latent_prior()?;
    let samples = sample_dataset(st, &prior, a.n, a.seed)?;
    let stage = Stage::new(&a.out)?;
    let mut entries = Vec::with_capacity(a.n);
    for (j, s) in samples.iter().enumerate() {
        let id = format!("gen-{j:03}");
        let (vol, lab) = (format!("{id}.vol.fsct"), format!("{id}.lab.fsct"));
        write_volume(&s.volume, &stage.join(&vol))?;
        write_labels(&s.labels, &st.ssm.synthesize(&s.tau), &stage.join(&lab))?;
        let [d, h, w] = s.volume.extents;
        stage.write(&format!("{id}.pgm"), pgm(w, h, s.volume.slice(d / 2)))?;
        let l: Vec<f64> = s.labels.slice(d / 2).iter().map(|&v| v as f64).collect();
        stage.write(&format!("{id}.lab.pgm"), pgm(w, h, &l))?;
        entries.push(ManifestEntry {
            id,
            volume: vol,
            labels: Some(lab),
            split: Split::Train,
            labeled: true,
        });
    }
    let m = Manifest {
        family: format!("generated-{}", run.manifest.family),
        seed: a.seed,
        entries,
        ..run.manifest.clone()
    };
    m.write(&stage.join(MANIFEST))?;
    let cfg = canonical(a);
    stage.write(RUN_INFO, RunInfo::new("sample", a.seed, cfg).to_toml())?;
    stage.commit()?;
    println!("{}: {} samples", a.out.display(), a.n);
    Ok(())
}
