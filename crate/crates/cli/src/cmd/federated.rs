use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, ValueEnum};
use fedsim::diff::Tensor;
use fedsim::federated::{run_federation, ClientPhase, ServerOptimizer, ServerState, Site, Transport};
use fedsim::fsct::Container;
use fedsim::glo::TrainState;
use fedsim::nets::{ENH_PREFIX, G_M_PREFIX, G_S_PREFIX};
use serde::Serialize;

use super::train::read_ssm;
use super::{load_train, read_manifest};
use crate::config::{canonical, load, GeneratorConfig, SiteConfig};
use crate::fail::{Context, Failure, Outcome};
use crate::output::{RunInfo, Stage, RUN_INFO};

pub const GLOBAL: &str = "global.fsct";
pub const WIRE: &str = "wire.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    /// Channels between threads of this process.
    Inproc,
    /// Loopback TCP on `--listen`.
    Tcp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseArg {
    /// Labeled samples only.
    Pretrain,
    /// Every sample; unlabeled latents start from the site's own prior.
    Semi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

/// Train the shared generators across sites without moving their data.
#[derive(Args, Debug, Serialize)]
pub struct TrainFederated {
    /// One TOML file per site.
    #[arg(long, num_args = 1.., required = true)]
    pub sites: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub rounds: u64,
    #[arg(long, value_enum, default_value_t = TransportKind::Inproc)]
    pub transport: TransportKind,
    /// Server address for `--transport tcp`; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:0")]
    pub listen: SocketAddr,
    /// Shape model shared by all sites.
    #[arg(long)]
    pub ssm: PathBuf,
    /// Generator settings (the `[model]`, `[schedule]`, `[rates]` and
    /// `[render]` tables of a train config).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PhaseArg::Pretrain)]
    pub phase: PhaseArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Seconds the server waits for any report.
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    /// Output of an earlier run to continue from: global parameters,
    /// latents and enhancers. Round numbering and optimiser moments restart.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Canonical<'a> {
    args: &'a TrainFederated,
    generator: &'a GeneratorConfig,
    sites: &'a [SiteConfig],
}

fn site_file(id: u32) -> String {
    format!("site-{id}.fsct")
}

fn read_container(p: &std::path::Path) -> Outcome<Container> {
    Container::read_file(p).context(p.display())
}

pub fn train_federated(a: &TrainFederated) -> Outcome<()> {
    let generator: GeneratorConfig = match &a.config {
        Some(p) => load(p)?,
        None => GeneratorConfig::default(),
    };
    let site_cfgs: Vec<SiteConfig> = a.sites.iter().map(|p| load(p)).collect::<Outcome<_>>()?;
    let ssm = read_ssm(&a.ssm)?;
    let resume = a.resume.as_ref().map(|d| read_container(&d.join(GLOBAL))).transpose()?;
    let resumed_semi = resume.as_ref().and_then(|c| c.get("semi")).is_some_and(|t| t.data()[0] != 0.0);
    let phase = match a.phase {
        PhaseArg::Pretrain => ClientPhase::Pretrain,
        PhaseArg::Semi => ClientPhase::SemiSupervised,
    };

    let mut sites = Vec::with_capacity(site_cfgs.len());
    let mut geometry = None;
    for sc in &site_cfgs {
        let m = read_manifest(&sc.data)?;
        let g = (m.res, m.fov);
        if *geometry.get_or_insert(g) != g {
            return Err(Failure::config(format!(
                "site {}: dataset is {}³ over {} mm, other sites use {:?}",
                sc.site_id, m.res, m.fov, geometry
            )));
        }
        let data = load_train(&sc.data, &m)?;
        let glo = generator.glo(&m, ssm.n_modes(), sc.seed)?;
        let mut st = TrainState::new(glo, ssm.clone(), &data)?;
        if let Some(p) = &sc.enhancer {
            st.enhancer.params.import(ENH_PREFIX, &read_container(p)?).context(p.display())?;
        }
        if let Some(dir) = &a.resume {
            let p = dir.join(site_file(sc.site_id));
            st.import(&read_container(&p)?).context(p.display())?;
        }
        if phase == ClientPhase::SemiSupervised && !resumed_semi && st.labeled().iter().any(|l| !l) {
            let prior = st.fit_latent_prior().context(format!("site {}", sc.site_id))?;
            st.init_unlabeled(&prior)?;
        }
        sites.push(Site::new(sc.site_id, st, data, phase)?);
    }

    let ids: Vec<u32> = sites.iter().map(|s| s.id).collect();
    let first = &sites[0].state;
    let lr = match phase {
        ClientPhase::Pretrain => first.config.lr_pretrain,
        ClientPhase::SemiSupervised => first.config.lr_labeled,
    };
    let optimizer = match a.optimizer {
        OptimizerArg::Adam => ServerOptimizer::Adam,
        OptimizerArg::Sgd => ServerOptimizer::Sgd,
    };
    let mut server = ServerState::new(
        first.shape_net.params.clone(),
        first.material_net.params.clone(),
        &ids,
        optimizer,
        lr.shape,
        lr.material,
    )?;
    if let Some(c) = &resume {
        server.shape.import(G_S_PREFIX, c)?;
        server.material.import(G_M_PREFIX, c)?;
    }
    let transport = match a.transport {
        TransportKind::Inproc => Transport::Inproc,
        TransportKind::Tcp => Transport::Tcp(a.listen),
    };

    let stage = Stage::new(&a.out)?;
    let log = run_federation(&mut server, &mut sites, a.rounds, &transport, Duration::from_secs(a.timeout_secs))?;

    let mut global = server.params();
    global.push("semi", Tensor::from_vec(vec![(phase == ClientPhase::SemiSupervised) as u8 as f64]));
    global.write_file(stage.join(GLOBAL))?;
    for s in &sites {
        let mut c = Container::new();
        s.state.export(&mut c);
        // Site copies of g_s/g_m predate the last server step; global.fsct
        // is authoritative.
        c.write_file(stage.join(&site_file(s.id)))?;
    }
    let mut wire = String::from("direction\ttype\tround\tbytes\tarrays\n");
    for r in log.records() {
        let dir = if r.to_server { "up" } else { "down" };
        wire.push_str(&format!("{dir}\t{}\t{}\t{}\t{}\n", r.message_type, r.round, r.bytes, r.arrays.join(",")));
    }
    stage.write(WIRE, wire)?;
    let text = canonical(&Canonical {
        args: a,
        generator: &generator,
        sites: &site_cfgs,
    });
    stage.write(RUN_INFO, RunInfo::new("train-federated", 0, text).to_toml())?;
    stage.commit()?;
    println!("{}: {} rounds across sites {:?}", a.out.display(), server.round, ids);
    Ok(())
}
