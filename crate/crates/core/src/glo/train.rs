use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::config::{GloConfig, Rates};
use super::loss::{loss_iou, loss_material_var, loss_slice_var};
use super::prior::LatentPrior;
use crate::ct::{block_average, CtSim, SliceUpsample, Volume};
use crate::diff::{Adam, AdamConfig, LinearOp, Tape, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::fsct::Container;
use crate::nets::{
    enhancer_input, Enhancer, MaterialNet, ShapeNet, ShapeRanges, ENH_PREFIX, G_M_PREFIX, G_S_PREFIX, LATENT_DIM,
    MATERIAL_EXTENT,
};
use crate::phantom::LoadedSample;
use crate::rng::stream;
use crate::ssm::{fd_grad, fd_grad_through_ssm, soft_foreground, voxelize, voxelize_soft, FdSteps, ShapeModel, ShapeParams};

/// One training volume. `coarse` is the reference volume block-averaged to
/// the material extent; labels are present only for labeled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub volume: Volume,
    pub coarse: Vec<f64>,
    pub labels: Option<crate::ssm::LabelVolume>,
    foreground: Option<Vec<f64>>,
}

impl TrainSample {
    pub fn new(id: impl Into<String>, volume: Volume, labels: Option<crate::ssm::LabelVolume>) -> Result<Self> {
        let [d, h, w] = volume.extents;
        if d != h || h != w || d % MATERIAL_EXTENT != 0 {
            return Err(shape_err!(
                "training volumes must be cubes with a side divisible by {MATERIAL_EXTENT}, got {:?}",
                volume.extents
            ));
        }
        if let Some(l) = &labels {
            if l.extents != volume.extents {
                return Err(shape_err!("labels {:?} differ from volume {:?}", l.extents, volume.extents));
            }
        }
        let coarse = block_average(&volume.data, d, d / MATERIAL_EXTENT);
        let foreground = labels.as_ref().map(|l| l.foreground());
        Ok(TrainSample {
            id: id.into(),
            volume,
            coarse,
            labels,
            foreground,
        })
    }

    pub fn from_loaded(s: LoadedSample) -> Result<Self> {
        TrainSample::new(s.id, s.volume, s.labels)
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    fn extent(&self) -> usize {
        self.volume.extents[0]
    }

    /// Reference slice `k` as `[1, H, H]`.
    fn slice(&self, k: usize) -> Tensor {
        let h = self.extent();
        Tensor::new(vec![1, h, h], self.volume.slice(k).to_vec()).expect("slice shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    PretrainParams,
    PretrainEnhancer,
    SemiSupervised,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::PretrainParams => "pretrain_params",
            Phase::PretrainEnhancer => "pretrain_enhancer",
            Phase::SemiSupervised => "semi_supervised",
        })
    }
}

/// Which Adam instance an update uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Labeled,
    Unlabeled,
}

/// Gradients of one step. Empty vectors mean the step does not touch that
/// parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepGrads {
    pub latent: Vec<f64>,
    pub shape: Vec<f64>,
    pub material: Vec<f64>,
    pub enhancer: Vec<f64>,
}

/// Loss values observed in the forward pass of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    /// Hard-label IoU loss of the generated shape.
    pub iou: Option<f64>,
    /// Soft-label IoU loss differentiated for the shape gradient.
    pub iou_soft: Option<f64>,
    pub material: Option<f64>,
    pub enhancer: Option<f64>,
    pub unlabeled: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub grads: StepGrads,
    pub losses: StepLosses,
}

/// Per-epoch means of the step losses and the learning rates in force.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub loss_iou: Option<f64>,
    pub loss_material: Option<f64>,
    pub loss_enhancer: Option<f64>,
    pub loss_unlabeled: Option<f64>,
    pub lr_labeled: Rates,
    pub lr_unlabeled: Rates,
}

pub const METRICS_HEADER: &str = "epoch,phase,loss_iou,loss_material,loss_enhancer,loss_unlabeled,\
lr_latent,lr_shape,lr_material,lr_enhancer,lr_u_latent,lr_u_shape,lr_u_material,lr_u_enhancer";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let (a, b) = (self.lr_labeled, self.lr_unlabeled);
        format!(
            "{},{},{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.epoch,
            self.phase,
            o(self.loss_iou),
            o(self.loss_material),
            o(self.loss_enhancer),
            o(self.loss_unlabeled),
            a.latent,
            a.shape,
            a.material,
            a.enhancer,
            b.latent,
            b.shape,
            b.material,
            b.enhancer
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Default)]
struct Means {
    sums: [f64; 5],
    counts: [usize; 5],
}

impl Means {
    fn add(&mut self, l: &StepLosses) {
        for (j, v) in [l.iou, l.material, l.enhancer, l.unlabeled, l.iou_soft].into_iter().enumerate() {
            if let Some(v) = v {
                self.sums[j] += v;
                self.counts[j] += 1;
            }
        }
    }

    fn get(&self, j: usize) -> Option<f64> {
        (self.counts[j] > 0).then(|| self.sums[j] / self.counts[j] as f64)
    }
}

/// Latents, networks and optimiser state of a training run.
#[derive(Clone)]
pub struct TrainState {
    pub config: GloConfig,
    pub ssm: Arc<ShapeModel>,
    pub ranges: ShapeRanges,
    pub fd_steps: FdSteps,
    /// One `[1, 32]` latent per dataset sample.
    pub latents: Vec<Tensor>,
    labeled: Vec<bool>,
    pub shape_net: ShapeNet,
    pub material_net: MaterialNet,
    pub enhancer: Enhancer,
    pub adam_labeled: Adam,
    pub adam_unlabeled: Adam,
    /// Completed epochs of the current phase.
    pub epoch: usize,
    pub phase: Phase,
    prior_ready: bool,
    sim: Arc<CtSim>,
}

impl std::fmt::Debug for TrainState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainState")
            .field("phase", &self.phase)
            .field("epoch", &self.epoch)
            .field("samples", &self.latents.len())
            .finish_non_exhaustive()
    }
}

impl PartialEq for TrainState {
    fn eq(&self, o: &Self) -> bool {
        // The simulator is a pure function of the config.
        self.config == o.config
            && self.ssm == o.ssm
            && self.ranges == o.ranges
            && self.latents == o.latents
            && self.labeled == o.labeled
            && self.shape_net == o.shape_net
            && self.material_net == o.material_net
            && self.enhancer == o.enhancer
            && self.adam_labeled == o.adam_labeled
            && self.adam_unlabeled == o.adam_unlabeled
            && self.epoch == o.epoch
            && self.phase == o.phase
            && self.prior_ready == o.prior_ready
    }
}

impl TrainState {
    /// Fresh networks and unit-normal latents, one per sample.
    pub fn new(config: GloConfig, ssm: ShapeModel, data: &[TrainSample]) -> Result<Self> {
        config.validate()?;
        for s in data {
            if s.extent() != config.render {
                return Err(shape_err!("sample {} has extent {}, config expects {}", s.id, s.extent(), config.render));
            }
        }
        Self::with_flags(config, ssm, data.iter().map(TrainSample::is_labeled).collect())
    }

    /// A state for a run saved by [`export`](Self::export), without its
    /// dataset. Only generation and prior fitting make sense on it.
    pub fn from_checkpoint(config: GloConfig, ssm: ShapeModel, c: &Container) -> Result<Self> {
        config.validate()?;
        let flags = c.require("labeled")?.data().iter().map(|&f| f != 0.0).collect();
        let mut s = Self::with_flags(config, ssm, flags)?;
        s.import(c)?;
        Ok(s)
    }

    fn with_flags(config: GloConfig, ssm: ShapeModel, labeled: Vec<bool>) -> Result<Self> {
        let seed = config.seed;
        let ranges = ShapeRanges::for_model(&ssm, config.n_modes, config.fov);
        let fd_steps = FdSteps::for_model(&ssm, config.spacing());
        let latents = (0..labeled.len())
            .map(|i| {
                let mut r = stream(seed, "latent", i as u64);
                let z = (0..LATENT_DIM).map(|_| StandardNormal.sample(&mut r)).collect();
                Tensor::new(vec![1, LATENT_DIM], z).expect("latent shape")
            })
            .collect();
        let shape_net = ShapeNet::new(ranges.out_dim(), &mut stream(seed, "init/g_s", 0));
        let material_net = MaterialNet::new(config.material_widths, &mut stream(seed, "init/g_m", 0));
        let enhancer = Enhancer::identity(config.enhancer_width, &mut stream(seed, "init/enh", 0));
        let sim = Arc::new(CtSim::new(MATERIAL_EXTENT, config.render, config.fov, config.n_views, config.window)?);
        Ok(TrainState {
            ranges,
            fd_steps,
            latents,
            labeled,
            shape_net,
            material_net,
            enhancer,
            adam_labeled: Adam::new(AdamConfig::default()),
            adam_unlabeled: Adam::new(AdamConfig::default()),
            epoch: 0,
            phase: Phase::PretrainParams,
            prior_ready: false,
            sim,
            ssm: Arc::new(ssm),
            config,
        })
    }

    pub fn labeled(&self) -> &[bool] {
        &self.labeled
    }

    pub fn sim(&self) -> &Arc<CtSim> {
        &self.sim
    }

    pub fn num_samples(&self) -> usize {
        self.latents.len()
    }

    /// Switches phase, restarting the epoch counter on a change.
    pub fn set_phase(&mut self, phase: Phase) {
        if self.phase != phase {
            self.phase = phase;
            self.epoch = 0;
        }
    }

    fn check_data(&self, data: &[TrainSample]) -> Result<()> {
        if data.len() != self.latents.len() {
            return Err(Error::Data(format!(
                "dataset has {} samples, state has {} latents",
                data.len(),
                self.latents.len()
            )));
        }
        for (s, &l) in data.iter().zip(&self.labeled) {
            if s.is_labeled() != l {
                return Err(Error::Data(format!("sample {} changed its labeled status", s.id)));
            }
        }
        Ok(())
    }

    fn labeled_sample<'a>(&self, data: &'a [TrainSample], i: usize) -> Result<(&'a TrainSample, &'a [f64])> {
        let s = data.get(i).ok_or_else(|| Error::Data(format!("sample index {i} out of range")))?;
        match &s.foreground {
            Some(fg) if self.labeled[i] => Ok((s, fg)),
            _ => Err(Error::Data(format!("sample {} has no labels", s.id))),
        }
    }

    /// Shape parameters for a network output.
    pub fn tau(&self, u: &[f64]) -> ShapeParams {
        self.ranges.denormalize(u, self.ssm.n_modes())
    }

    /// Shape parameters generated from latent `z`.
    pub fn shape_params(&self, z: &[f64]) -> Result<ShapeParams> {
        Ok(self.tau(&self.shape_net.infer(z)?))
    }

    fn extents(&self) -> [usize; 3] {
        [self.config.render; 3]
    }

    /// Hard labels of a generated shape.
    pub fn labels_for(&self, tau: &ShapeParams) -> Result<crate::ssm::LabelVolume> {
        voxelize(&self.ssm.synthesize(tau), &self.ssm.surface, self.extents(), self.config.spacing())
    }

    /// `∂L/∂τ` of the foreground IoU loss against `fg`, plus the loss the
    /// gradient differentiates.
    fn shape_grad(&self, tau: &ShapeParams, fg: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (m, ext, sp) = (&*self.ssm, self.extents(), self.config.spacing());
        match self.config.temperature {
            Some(t) => {
                let occ = |p: &ShapeParams| soft_foreground(&m.synthesize(p), &m.surface, ext, sp, t);
                let center = ops_iou(&occ(tau)?, fg);
                let g = fd_grad(tau, &self.fd_steps, |p| ops_iou(&occ(p).expect("validated surface"), fg));
                Ok((g, center))
            }
            None => {
                let center = ops_iou(&self.labels_for(tau)?.foreground(), fg);
                let g = fd_grad_through_ssm(m, tau, &self.fd_steps, ext, sp, |l| ops_iou(&l.foreground(), fg))?;
                Ok((g, center))
            }
        }
    }

    /// Gradients of the foreground IoU loss for labeled sample `i` with
    /// respect to `z_i` and the shape network.
    pub fn shape_grads(&self, data: &[TrainSample], i: usize) -> Result<StepOutput> {
        let (_, fg) = self.labeled_sample(data, i)?;
        let mut tape = Tape::new();
        let bs = self.shape_net.params.bind(&mut tape);
        let z = tape.leaf(self.latents[i].clone());
        let u = self.shape_net.forward(&mut tape, &bs, z)?;
        let tau = self.tau(tape.value(u).data());
        let (g_tau, iou_soft) = self.shape_grad(&tau, fg)?;
        let iou = loss_iou(&self.labels_for(&tau)?.foreground(), fg)?;
        let ls = tape.weighted_sum(u, self.ranges.pullback(&g_tau))?;
        let g = tape.backward(ls)?;
        Ok(StepOutput {
            grads: StepGrads {
                latent: g.get_or_zeros(z, &[1, LATENT_DIM]).into_data(),
                shape: self.shape_net.params.flat_grads_of(&bs, &g),
                ..Default::default()
            },
            losses: StepLosses {
                iou: Some(iou),
                iou_soft: Some(iou_soft),
                ..Default::default()
            },
        })
    }

    /// Gradients of the material loss for labeled sample `i` with respect to
    /// `z_i` and the material network.
    pub fn material_grads(&self, data: &[TrainSample], i: usize) -> Result<StepOutput> {
        let (s, _) = self.labeled_sample(data, i)?;
        let mut tape = Tape::new();
        let bm = self.material_net.params.bind(&mut tape);
        let z = tape.leaf(self.latents[i].clone());
        let mu = self.material_net.forward(&mut tape, &bm, z)?;
        let x = tape.linear_op(mu, self.sim.clone() as Arc<dyn LinearOp>)?;
        let target = tape.leaf(Tensor::new(vec![MATERIAL_EXTENT; 3], s.coarse.clone())?);
        let lm = loss_material_var(&mut tape, x, target)?;
        let g = tape.backward(lm)?;
        Ok(StepOutput {
            grads: StepGrads {
                latent: g.get_or_zeros(z, &[1, LATENT_DIM]).into_data(),
                material: self.material_net.params.flat_grads_of(&bm, &g),
                ..Default::default()
            },
            losses: StepLosses {
                material: Some(tape.value(lm).item()),
                ..Default::default()
            },
        })
    }

    /// Sum of [`shape_grads`](Self::shape_grads) and
    /// [`material_grads`](Self::material_grads) at the current parameters.
    pub fn labeled_grads(&self, data: &[TrainSample], i: usize) -> Result<StepOutput> {
        let s = self.shape_grads(data, i)?;
        let m = self.material_grads(data, i)?;
        let latent = s.grads.latent.iter().zip(&m.grads.latent).map(|(a, b)| a + b).collect();
        Ok(StepOutput {
            grads: StepGrads {
                latent,
                shape: s.grads.shape,
                material: m.grads.material,
                enhancer: Vec::new(),
            },
            losses: StepLosses {
                material: m.losses.material,
                ..s.losses
            },
        })
    }

    /// Coarse simulated slice `k` of sample `i`'s material, `H × H`.
    fn coarse_slice(&self, i: usize, k: usize) -> Result<Vec<f64>> {
        let mu = self.material_net.infer(self.latents[i].data())?;
        let x = self.sim.apply(&mu);
        Ok(SliceUpsample::new(MATERIAL_EXTENT, self.config.render, k)?.apply(&x))
    }

    /// Label slice scaled to `[0, 1]` by the region count.
    fn label_channel(&self, labels: &[u8]) -> Vec<f64> {
        let r = self.ssm.surface.n_regions as f64;
        labels.iter().map(|&v| v as f64 / r).collect()
    }

    /// Enhancer input of the enhancer pre-training step: the upsampled
    /// simulated slice, the ground-truth label slice and the slice plane.
    pub fn enhancer_pretrain_input(&self, data: &[TrainSample], i: usize, k: usize) -> Result<Tensor> {
        let (s, _) = self.labeled_sample(data, i)?;
        let labels = s.labels.as_ref().expect("labeled");
        let h = self.config.render;
        if k >= h {
            return Err(Error::Config(format!("slice {k} out of range 0..{h}")));
        }
        enhancer_input(&self.coarse_slice(i, k)?, &self.label_channel(labels.slice(k)), k, h)
    }

    /// Enhancer gradient for slice `k` of labeled sample `i`; generators
    /// are held fixed.
    pub fn enhancer_grads(&self, data: &[TrainSample], i: usize, k: usize) -> Result<StepOutput> {
        let input = self.enhancer_pretrain_input(data, i, k)?;
        let h = self.config.render;
        let mut tape = Tape::new();
        let be = self.enhancer.params.bind(&mut tape);
        let xv = tape.leaf(input);
        let y = self.enhancer.forward(&mut tape, &be, xv)?;
        let target = tape.leaf(data[i].slice(k));
        let d = tape.sub(y, target)?;
        let ss = tape.sum_squares(d);
        let l = tape.affine(ss, 1.0 / (h * h) as f64, 0.0);
        let loss = tape.value(l).item();
        let g = tape.backward(l)?;
        Ok(StepOutput {
            grads: StepGrads {
                enhancer: self.enhancer.params.flat_grads_of(&be, &g),
                ..Default::default()
            },
            losses: StepLosses {
                enhancer: Some(loss),
                ..Default::default()
            },
        })
    }

    /// Slice loss of the enhancer for a fixed coarse slice and label channel.
    fn enhanced_slice_loss(&self, coarse: &[f64], labels: &[f64], k: usize, target: &Tensor) -> Result<f64> {
        let h = self.config.render;
        let mut tape = Tape::inference();
        let be = self.enhancer.params.bind(&mut tape);
        let xv = tape.leaf(enhancer_input(coarse, labels, k, h)?);
        let y = self.enhancer.forward(&mut tape, &be, xv)?;
        let t = tape.leaf(target.clone());
        let l = loss_slice_var(&mut tape, y, t)?;
        Ok(tape.value(l).item())
    }

    /// Gradients of the reconstruction loss of slice `k` for sample `i`
    /// through the full generative chain. The shape network receives the
    /// finite-difference gradient of the same loss with the label channel
    /// taken from soft labels when a temperature is set.
    pub fn unlabeled_grads(&self, data: &[TrainSample], i: usize, k: usize) -> Result<StepOutput> {
        let s = data.get(i).ok_or_else(|| Error::Data(format!("sample index {i} out of range")))?;
        let h = self.config.render;
        if k >= h {
            return Err(Error::Config(format!("slice {k} out of range 0..{h}")));
        }
        let mut tape = Tape::new();
        let bs = self.shape_net.params.bind(&mut tape);
        let bm = self.material_net.params.bind(&mut tape);
        let be = self.enhancer.params.bind(&mut tape);
        let z = tape.leaf(self.latents[i].clone());

        let u = self.shape_net.forward(&mut tape, &bs, z)?;
        let tau = self.tau(tape.value(u).data());
        let labels = self.labels_for(&tau)?;
        let label_ch = self.label_channel(labels.slice(k));

        let mu = self.material_net.forward(&mut tape, &bm, z)?;
        let x = tape.linear_op(mu, self.sim.clone() as Arc<dyn LinearOp>)?;
        let up: Arc<dyn LinearOp> = Arc::new(SliceUpsample::new(MATERIAL_EXTENT, h, k)?);
        let c = tape.linear_op(x, up)?;
        let c = tape.reshape(c, &[1, h, h])?;
        let coarse = tape.value(c).data().to_vec();
        let lab = tape.leaf(Tensor::new(vec![1, h, h], label_ch)?);
        let kp = tape.leaf(Tensor::filled(&[1, h, h], k as f64 / h as f64));
        let input = tape.concat(&[c, lab, kp])?;
        let y = self.enhancer.forward(&mut tape, &be, input)?;
        let target_t = s.slice(k);
        let target = tape.leaf(target_t.clone());
        let lu = loss_slice_var(&mut tape, y, target)?;
        let unlabeled = tape.value(lu).item();

        let g_tau = self.unlabeled_shape_grad(&tau, &coarse, k, &target_t)?;
        let ls = tape.weighted_sum(u, self.ranges.pullback(&g_tau))?;
        let total = tape.add(lu, ls)?;
        let g = tape.backward(total)?;
        Ok(StepOutput {
            grads: StepGrads {
                latent: g.get_or_zeros(z, &[1, LATENT_DIM]).into_data(),
                shape: self.shape_net.params.flat_grads_of(&bs, &g),
                material: self.material_net.params.flat_grads_of(&bm, &g),
                enhancer: self.enhancer.params.flat_grads_of(&be, &g),
            },
            losses: StepLosses {
                unlabeled: Some(unlabeled),
                ..Default::default()
            },
        })
    }

    fn unlabeled_shape_grad(&self, tau: &ShapeParams, coarse: &[f64], k: usize, target: &Tensor) -> Result<Vec<f64>> {
        let (m, ext, sp) = (&*self.ssm, self.extents(), self.config.spacing());
        let n = self.config.render * self.config.render;
        let channel = |p: &ShapeParams| -> Result<Vec<f64>> {
            let pts = m.synthesize(p);
            match self.config.temperature {
                Some(t) => {
                    let soft = voxelize_soft(&pts, &m.surface, ext, sp, t)?;
                    let r = m.surface.n_regions;
                    let mut ch = vec![0.0; n];
                    for reg in 1..=r {
                        let occ = soft.exclusive(reg as u8);
                        for (c, o) in ch.iter_mut().zip(&occ[k * n..(k + 1) * n]) {
                            *c += reg as f64 * o / r as f64;
                        }
                    }
                    Ok(ch)
                }
                None => Ok(self.label_channel(voxelize(&pts, &m.surface, ext, sp)?.slice(k))),
            }
        };
        channel(tau)?;
        Ok(fd_grad(tau, &self.fd_steps, |p| {
            let ch = channel(p).expect("validated surface");
            self.enhanced_slice_loss(coarse, &ch, k, target).expect("validated shapes")
        }))
    }

    /// Adam update of the groups present in `g`. Enhancer gradients are
    /// ignored while the enhancer is frozen.
    pub fn apply(&mut self, i: usize, g: &StepGrads, rates: Rates, group: Group) -> Result<()> {
        let adam = match group {
            Group::Labeled => &mut self.adam_labeled,
            Group::Unlabeled => &mut self.adam_unlabeled,
        };
        if !g.latent.is_empty() {
            let z = &mut self.latents[i];
            if g.latent.len() != z.len() {
                return Err(shape_err!("latent gradient has {} entries", g.latent.len()));
            }
            adam.step_tensor(&format!("z.{i}"), z, &g.latent, rates.latent);
            if self.config.project_latents {
                let norm = z.norm();
                if norm > 1.0 {
                    for v in z.data_mut() {
                        *v /= norm;
                    }
                }
            }
        }
        if !g.shape.is_empty() {
            self.shape_net.params.set_grads_flat(&g.shape)?;
            adam.step(G_S_PREFIX, &mut self.shape_net.params, rates.shape);
        }
        if !g.material.is_empty() {
            self.material_net.params.set_grads_flat(&g.material)?;
            adam.step(G_M_PREFIX, &mut self.material_net.params, rates.material);
        }
        if !g.enhancer.is_empty() && !self.config.freeze_enhancer {
            self.enhancer.params.set_grads_flat(&g.enhancer)?;
            adam.step(ENH_PREFIX, &mut self.enhancer.params, rates.enhancer);
        }
        Ok(())
    }

    /// One supervised update of `z_i`, the shape network and the material
    /// network with the labeled optimiser.
    pub fn pretrain_step(&mut self, data: &[TrainSample], i: usize) -> Result<StepLosses> {
        let out = self.labeled_grads(data, i)?;
        self.apply(i, &out.grads, self.config.lr_pretrain, Group::Labeled)?;
        Ok(out.losses)
    }

    pub fn pretrain_enhancer_step(&mut self, data: &[TrainSample], i: usize, k: usize) -> Result<StepLosses> {
        let out = self.enhancer_grads(data, i, k)?;
        self.apply(i, &out.grads, self.config.lr_pretrain, Group::Labeled)?;
        Ok(out.losses)
    }

    /// Uniform slice for sample `i` in the current epoch and phase.
    pub fn slice_index(&self, i: usize) -> usize {
        let idx = (self.epoch * self.num_samples() + i) as u64;
        stream(self.config.seed, &format!("slice/{}", self.phase), idx).random_range(0..self.config.render)
    }

    fn labeled_indices(&self) -> Vec<usize> {
        (0..self.num_samples()).filter(|&i| self.labeled[i]).collect()
    }

    fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.num_samples()).filter(|&i| !self.labeled[i]).collect()
    }

    fn metrics(&self, m: &Means, lab: Rates, unl: Rates) -> EpochMetrics {
        EpochMetrics {
            epoch: self.epoch,
            phase: self.phase,
            loss_iou: m.get(0),
            loss_material: m.get(1),
            loss_enhancer: m.get(2),
            loss_unlabeled: m.get(3),
            lr_labeled: lab,
            lr_unlabeled: unl,
        }
    }

    /// One pass of [`pretrain_step`](Self::pretrain_step) over the labeled
    /// samples in index order.
    pub fn pretrain_epoch(&mut self, data: &[TrainSample]) -> Result<EpochMetrics> {
        self.check_data(data)?;
        self.set_phase(Phase::PretrainParams);
        let mut m = Means::default();
        for i in self.labeled_indices() {
            m.add(&self.pretrain_step(data, i)?);
        }
        let r = self.config.lr_pretrain;
        let row = self.metrics(&m, r, r.scaled(0.0));
        self.epoch += 1;
        Ok(row)
    }

    /// One random slice per labeled sample.
    pub fn enhancer_epoch(&mut self, data: &[TrainSample]) -> Result<EpochMetrics> {
        self.check_data(data)?;
        self.set_phase(Phase::PretrainEnhancer);
        let mut m = Means::default();
        for i in self.labeled_indices() {
            let k = self.slice_index(i);
            m.add(&self.pretrain_enhancer_step(data, i, k)?);
        }
        let r = self.config.lr_pretrain;
        let row = self.metrics(&m, r, r.scaled(0.0));
        self.epoch += 1;
        Ok(row)
    }

    /// Fits the latent Gaussian to the labeled latents.
    pub fn fit_latent_prior(&self) -> Result<LatentPrior> {
        let zs: Vec<Vec<f64>> = self
            .labeled_indices()
            .into_iter()
            .map(|i| self.latents[i].data().to_vec())
            .collect();
        LatentPrior::fit(&zs)
    }

    /// Draws every unlabeled latent from the prior.
    pub fn init_unlabeled(&mut self, prior: &LatentPrior) -> Result<()> {
        if prior.dim() != LATENT_DIM {
            return Err(shape_err!("prior has dimension {}, latents {LATENT_DIM}", prior.dim()));
        }
        for i in self.unlabeled_indices() {
            let z = prior.sample(&mut stream(self.config.seed, "latent/unlabeled", i as u64));
            self.latents[i] = Tensor::new(vec![1, LATENT_DIM], z)?;
        }
        self.prior_ready = true;
        Ok(())
    }

    /// Rates of both groups at the start of semi-supervised epoch `epoch`.
    pub fn semi_rates(&self, epoch: usize) -> (Rates, Rates) {
        let f = self.config.schedule.factor(epoch);
        (self.config.lr_labeled.scaled(f), self.config.lr_unlabeled.scaled(f))
    }

    fn labeled_semi_step(&mut self, data: &[TrainSample], i: usize, rates: Rates, m: &mut Means) -> Result<()> {
        let out = self.labeled_grads(data, i)?;
        self.apply(i, &out.grads, rates, Group::Labeled)?;
        m.add(&out.losses);
        if !self.config.freeze_enhancer {
            let k = self.slice_index(i);
            let out = self.enhancer_grads(data, i, k)?;
            self.apply(i, &out.grads, rates, Group::Labeled)?;
            m.add(&out.losses);
        }
        Ok(())
    }

    /// Labeled steps only, with the semi-supervised schedule.
    pub fn supervised_epoch(&mut self, data: &[TrainSample]) -> Result<EpochMetrics> {
        self.check_data(data)?;
        self.set_phase(Phase::SemiSupervised);
        let (lab, unl) = self.semi_rates(self.epoch);
        let mut m = Means::default();
        for i in self.labeled_indices() {
            self.labeled_semi_step(data, i, lab, &mut m)?;
        }
        let row = self.metrics(&m, lab, unl);
        self.epoch += 1;
        Ok(row)
    }

    /// Alternates labeled and unlabeled steps: `L₀ U₀ L₁ U₁ …`, then the
    /// remainder of the longer list.
    pub fn semi_supervised_epoch(&mut self, data: &[TrainSample]) -> Result<EpochMetrics> {
        self.check_data(data)?;
        let (li, ui) = (self.labeled_indices(), self.unlabeled_indices());
        if !ui.is_empty() && !self.prior_ready {
            return Err(Error::Config("unlabeled latents must be drawn from the prior first".into()));
        }
        self.set_phase(Phase::SemiSupervised);
        let (lab, unl) = self.semi_rates(self.epoch);
        let mut m = Means::default();
        for j in 0..li.len().max(ui.len()) {
            if let Some(&i) = li.get(j) {
                self.labeled_semi_step(data, i, lab, &mut m)?;
            }
            if let Some(&i) = ui.get(j) {
                let k = self.slice_index(i);
                let out = self.unlabeled_grads(data, i, k)?;
                self.apply(i, &out.grads, unl, Group::Unlabeled)?;
                m.add(&out.losses);
            }
        }
        let row = self.metrics(&m, lab, unl);
        self.epoch += 1;
        Ok(row)
    }

    /// Hard-label IoU loss per labeled sample at the current parameters.
    pub fn labeled_iou_losses(&self, data: &[TrainSample]) -> Result<Vec<f64>> {
        self.check_data(data)?;
        self.labeled_indices()
            .into_iter()
            .map(|i| {
                let (_, fg) = self.labeled_sample(data, i)?;
                let tau = self.shape_params(self.latents[i].data())?;
                loss_iou(&self.labels_for(&tau)?.foreground(), fg)
            })
            .collect()
    }

    /// Unlabeled reconstruction loss per unlabeled sample on a fixed slice.
    pub fn unlabeled_losses(&self, data: &[TrainSample], k: usize) -> Result<Vec<f64>> {
        self.check_data(data)?;
        self.unlabeled_indices()
            .into_iter()
            .map(|i| Ok(self.unlabeled_grads(data, i, k)?.losses.unlabeled.expect("set")))
            .collect()
    }

    /// Networks, latents and labeled flags.
    pub fn export(&self, c: &mut Container) {
        self.shape_net.params.export(G_S_PREFIX, c);
        self.material_net.params.export(G_M_PREFIX, c);
        self.enhancer.params.export(ENH_PREFIX, c);
        let n = self.latents.len();
        let flat: Vec<f64> = self.latents.iter().flat_map(|z| z.data().iter().copied()).collect();
        c.push("latents", Tensor::new(vec![n, LATENT_DIM], flat).expect("latent stack"));
        let flags = self.labeled.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        c.push("labeled", Tensor::new(vec![n], flags).expect("flags"));
    }

    /// Loads networks and latents saved by [`export`](Self::export) into a
    /// state built for the same dataset.
    pub fn import(&mut self, c: &Container) -> Result<()> {
        self.shape_net.params.import(G_S_PREFIX, c)?;
        self.material_net.params.import(G_M_PREFIX, c)?;
        self.enhancer.params.import(ENH_PREFIX, c)?;
        let lat = c.require("latents")?;
        let flags = c.require("labeled")?;
        if lat.shape() != [self.latents.len(), LATENT_DIM] || flags.len() != self.labeled.len() {
            return Err(shape_err!("checkpoint latents {:?} do not match the dataset", lat.shape()));
        }
        if flags.data().iter().zip(&self.labeled).any(|(&f, &l)| (f != 0.0) != l) {
            return Err(Error::Data("checkpoint labeled flags differ from the dataset".into()));
        }
        for (z, row) in self.latents.iter_mut().zip(lat.data().chunks(LATENT_DIM)) {
            z.data_mut().copy_from_slice(row);
        }
        self.prior_ready = true;
        Ok(())
    }
}

fn ops_iou(p: &[f64], y: &[f64]) -> f64 {
    crate::diff::ops::soft_iou_loss(p, y)
}
