use std::collections::BTreeMap;

use super::wire::RoundMessage;
use crate::diff::{Adam, AdamConfig, ParamStore};
use crate::error::{Error, Result};
use crate::fsct::Container;
use crate::nets::{G_M_PREFIX, G_S_PREFIX};

/// Update rule for the aggregated gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServerOptimizer {
    Adam,
    Sgd,
}

/// A validated report waiting for the rest of its round.
#[derive(Clone, Debug, PartialEq)]
struct Pending {
    sample_count: u32,
    shape: Vec<f64>,
    material: Vec<f64>,
}

/// Global shape and material parameters plus the synchronous round state.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub shape: ParamStore,
    pub material: ParamStore,
    pub adam: Adam,
    pub optimizer: ServerOptimizer,
    pub lr_shape: f64,
    pub lr_material: f64,
    pub round: u64,
    sites: Vec<u32>,
    pending: BTreeMap<u32, Pending>,
}

impl ServerState {
    pub fn new(
        shape: ParamStore,
        material: ParamStore,
        sites: &[u32],
        optimizer: ServerOptimizer,
        lr_shape: f64,
        lr_material: f64,
    ) -> Result<Self> {
        let mut ids = sites.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() || ids.len() != sites.len() {
            return Err(Error::Config("site ids must be unique and non-empty".into()));
        }
        Ok(ServerState {
            shape,
            material,
            adam: Adam::new(AdamConfig::default()),
            optimizer,
            lr_shape,
            lr_material,
            round: 0,
            sites: ids,
            pending: BTreeMap::new(),
        })
    }

    /// Registered sites in aggregation order.
    pub fn sites(&self) -> &[u32] {
        &self.sites
    }

    /// Sites whose report for the current round is still missing.
    pub fn missing(&self) -> Vec<u32> {
        self.sites.iter().copied().filter(|s| !self.pending.contains_key(s)).collect()
    }

    pub fn params(&self) -> Container {
        let mut c = Container::new();
        self.shape.export(G_S_PREFIX, &mut c);
        self.material.export(G_M_PREFIX, &mut c);
        c
    }

    pub fn broadcast(&self) -> RoundMessage {
        RoundMessage::ModelBroadcast {
            round: self.round,
            params: self.params(),
        }
    }

    /// Validates and stores one report for the current round.
    pub fn receive(&mut self, msg: RoundMessage) -> Result<()> {
        let RoundMessage::GradientReport {
            round,
            site_id,
            sample_count,
            grads,
        } = msg
        else {
            return Err(Error::Protocol(format!("server expected a gradient report, got {msg:?}")));
        };
        if round != self.round {
            return Err(Error::Protocol(format!(
                "site {site_id} reported round {round} during round {}",
                self.round
            )));
        }
        if self.sites.binary_search(&site_id).is_err() {
            return Err(Error::Protocol(format!("unregistered site {site_id}")));
        }
        if self.pending.contains_key(&site_id) {
            return Err(Error::Protocol(format!("duplicate report from site {site_id} in round {round}")));
        }
        if sample_count == 0 {
            return Err(Error::Protocol(format!("site {site_id} reported zero samples")));
        }
        let expected = self.shape.len() + self.material.len();
        if grads.len() != expected {
            return Err(Error::Protocol(format!(
                "site {site_id} sent {} arrays, expected {expected}",
                grads.len()
            )));
        }
        let flat = |store: &ParamStore, prefix: &str| -> Result<Vec<f64>> {
            let mut s = store.clone();
            s.import_grads(prefix, &grads)?;
            Ok(s.grads_flat())
        };
        let shape = flat(&self.shape, G_S_PREFIX)?;
        let material = flat(&self.material, G_M_PREFIX)?;
        self.pending.insert(
            site_id,
            Pending {
                sample_count,
                shape,
                material,
            },
        );
        Ok(())
    }

    /// Aggregates the complete round (sample-weighted mean in site order),
    /// applies one update, advances the round and returns the new broadcast.
    pub fn finish_round(&mut self) -> Result<RoundMessage> {
        let missing = self.missing();
        if !missing.is_empty() {
            return Err(Error::Protocol(format!("round {} is missing reports from sites {missing:?}", self.round)));
        }
        let pending = std::mem::take(&mut self.pending);
        let total: f64 = pending.values().map(|p| p.sample_count as f64).sum();
        let mean = |pick: fn(&Pending) -> &Vec<f64>| -> Vec<f64> {
            let n = pick(pending.values().next().expect("at least one site")).len();
            let mut acc = vec![0.0; n];
            for p in pending.values() {
                let w = p.sample_count as f64;
                for (a, g) in acc.iter_mut().zip(pick(p)) {
                    *a += w * g;
                }
            }
            acc.iter().map(|a| a / total).collect()
        };
        let (gs, gm) = (mean(|p| &p.shape), mean(|p| &p.material));
        self.step(&gs, &gm)?;
        self.round += 1;
        Ok(self.broadcast())
    }

    fn step(&mut self, gs: &[f64], gm: &[f64]) -> Result<()> {
        self.shape.set_grads_flat(gs)?;
        self.material.set_grads_flat(gm)?;
        match self.optimizer {
            ServerOptimizer::Adam => {
                self.adam.step(G_S_PREFIX, &mut self.shape, self.lr_shape);
                self.adam.step(G_M_PREFIX, &mut self.material, self.lr_material);
            }
            ServerOptimizer::Sgd => {
                for (store, lr) in [(&mut self.shape, self.lr_shape), (&mut self.material, self.lr_material)] {
                    for (_, p) in store.iter_mut() {
                        let g = p.grad.data().to_vec();
                        for (v, g) in p.value.data_mut().iter_mut().zip(g) {
                            *v -= lr * g;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// One complete round from a set of reports.
    pub fn server_round(&mut self, reports: Vec<RoundMessage>) -> Result<RoundMessage> {
        for r in reports {
            self.receive(r)?;
        }
        self.finish_round()
    }
}
