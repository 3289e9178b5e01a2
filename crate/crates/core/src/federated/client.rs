use rand::Rng as _;

use super::wire::RoundMessage;
use crate::diff::ParamStore;
use crate::error::{Error, Result};
use crate::fsct::Container;
use crate::glo::{generate, Group, StepGrads, StepOutput, Synthetic, TrainSample, TrainState};
use crate::nets::{Enhancer, G_M_PREFIX, G_S_PREFIX};
use crate::rng::stream;

/// Which local step a client runs per round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientPhase {
    /// Labeled samples only: supervised generator gradients plus a local
    /// enhancer step on a ground-truth slice.
    Pretrain,
    /// Every sample; unlabeled samples run the full generative chain.
    SemiSupervised,
}

/// A site: private data, private latents and enhancer, and a local copy of
/// the global networks refreshed by every broadcast.
#[derive(Clone, Debug)]
pub struct Site {
    pub id: u32,
    pub state: TrainState,
    pub data: Vec<TrainSample>,
    pub phase: ClientPhase,
    next_round: u64,
}

impl Site {
    pub fn new(id: u32, state: TrainState, data: Vec<TrainSample>, phase: ClientPhase) -> Result<Self> {
        if state.num_samples() != data.len() {
            return Err(Error::Data(format!(
                "site {id}: {} samples but {} latents",
                data.len(),
                state.num_samples()
            )));
        }
        let site = Site {
            id,
            state,
            data,
            phase,
            next_round: 0,
        };
        if site.schedule().is_empty() {
            return Err(Error::Data(format!("site {id} has no samples for {phase:?}")));
        }
        Ok(site)
    }

    /// Round the site expects next.
    pub fn expected_round(&self) -> u64 {
        self.next_round
    }

    fn schedule(&self) -> Vec<usize> {
        let labeled = self.state.labeled();
        (0..self.data.len())
            .filter(|&i| self.phase == ClientPhase::SemiSupervised || labeled[i])
            .collect()
    }

    /// Local sample used in `round`: the phase's samples in index order,
    /// cycled.
    pub fn sample_for_round(&self, round: u64) -> usize {
        let s = self.schedule();
        s[(round % s.len() as u64) as usize]
    }

    /// Slice drawn for `round` from the site's own stream.
    pub fn slice_for_round(&self, round: u64) -> usize {
        stream(self.state.config.seed, "fl/slice", round).random_range(0..self.state.config.render)
    }

    /// Loads global parameters into the local networks.
    pub fn load_globals(&mut self, params: &Container) -> Result<()> {
        self.state.shape_net.params.import(G_S_PREFIX, params)?;
        self.state.material_net.params.import(G_M_PREFIX, params)
    }

    /// Gradients of this round's local step at the current parameters.
    pub fn local_grads(&self, round: u64) -> Result<(usize, StepOutput)> {
        let i = self.sample_for_round(round);
        let out = if self.state.labeled()[i] {
            self.state.labeled_grads(&self.data, i)?
        } else {
            self.state.unlabeled_grads(&self.data, i, self.slice_for_round(round))?
        };
        Ok((i, out))
    }
}

fn grads_container(store: &ParamStore, prefix: &str, flat: &[f64], out: &mut Container) -> Result<()> {
    let mut s = store.clone();
    s.set_grads_flat(flat)?;
    s.export_grads(prefix, out);
    Ok(())
}

/// Handles one broadcast: loads the globals, runs one step on one local
/// sample, updates the latent and enhancer locally and returns the
/// generator gradients. Enhancer arrays never enter the report.
pub fn client_round(site: &mut Site, msg: &RoundMessage) -> Result<RoundMessage> {
    let RoundMessage::ModelBroadcast { round, params } = msg else {
        return Err(Error::Protocol(format!("site {} expected a broadcast", site.id)));
    };
    if *round != site.next_round {
        return Err(Error::Protocol(format!(
            "site {} expected round {}, got {round}",
            site.id, site.next_round
        )));
    }
    site.load_globals(params)?;
    let (i, out) = site.local_grads(*round)?;
    let labeled = site.state.labeled()[i];
    let cfg = site.state.config.clone();
    let (rates, group) = match (labeled, site.phase) {
        (true, ClientPhase::Pretrain) => (cfg.lr_pretrain, Group::Labeled),
        (true, ClientPhase::SemiSupervised) => (cfg.lr_labeled, Group::Labeled),
        (false, _) => (cfg.lr_unlabeled, Group::Unlabeled),
    };
    let enhancer = if labeled {
        let k = site.slice_for_round(*round);
        site.state.enhancer_grads(&site.data, i, k)?.grads.enhancer
    } else {
        out.grads.enhancer.clone()
    };
    let local = StepGrads {
        latent: out.grads.latent.clone(),
        enhancer,
        ..Default::default()
    };
    site.state.apply(i, &local, rates, group)?;

    let mut grads = Container::new();
    grads_container(&site.state.shape_net.params, G_S_PREFIX, &out.grads.shape, &mut grads)?;
    grads_container(&site.state.material_net.params, G_M_PREFIX, &out.grads.material, &mut grads)?;
    site.next_round = round + 1;
    Ok(RoundMessage::GradientReport {
        round: *round,
        site_id: site.id,
        sample_count: 1,
        grads,
    })
}

/// The same generated shape and material rendered through two sites'
/// enhancers. Labels depend only on the shared generators.
pub fn cross_site_render(state: &TrainState, z: &[f64], a: &Enhancer, b: &Enhancer) -> Result<(Synthetic, Synthetic)> {
    let mut s = state.clone();
    s.enhancer = a.clone();
    let va = generate(&s, z)?;
    s.enhancer = b.clone();
    let vb = generate(&s, z)?;
    Ok((va, vb))
}
