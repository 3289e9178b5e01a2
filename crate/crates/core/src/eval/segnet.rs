use rand::seq::SliceRandom;

use crate::ct::Volume;
use crate::diff::{Adam, AdamConfig, Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::nets::{glorot, var};
use crate::rng::stream;
use crate::ssm::LabelVolume;

pub const SEG_PREFIX: &str = "seg.";

/// A volume with its binary target mask (0 or 1 per voxel).
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub id: String,
    pub volume: Volume,
    pub mask: Vec<f64>,
}

/// Which labels count as foreground for the binary task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Every labeled voxel.
    Foreground,
    /// A single region id.
    Region(u8),
}

impl Target {
    pub fn mask(self, labels: &LabelVolume) -> Vec<f64> {
        labels
            .data
            .iter()
            .map(|&l| match self {
                Target::Foreground => (l > 0) as u8 as f64,
                Target::Region(r) => (l == r) as u8 as f64,
            })
            .collect()
    }
}

impl SegSample {
    pub fn new(id: impl Into<String>, volume: Volume, labels: &LabelVolume, target: Target) -> Result<Self> {
        if labels.extents != volume.extents {
            return Err(shape_err!(
                "labels {:?} do not match volume {:?}",
                labels.extents,
                volume.extents
            ));
        }
        if volume.extents.iter().any(|e| e % 2 != 0) {
            return Err(shape_err!("segmenter needs even extents, got {:?}", volume.extents));
        }
        Ok(SegSample {
            id: id.into(),
            mask: target.mask(labels),
            volume,
        })
    }
}

/// Zero mean, unit variance per volume; a constant volume only centres.
pub fn standardize(data: &[f64]) -> Vec<f64> {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let s = if var > 0.0 { var.sqrt() } else { 1.0 };
    data.iter().map(|v| (v - mean) / s).collect()
}

/// Two-level encoder-decoder: conv(1→8) ReLU, 2³ average pool, conv(8→16)
/// ReLU, nearest ×2, concat with the first features, conv(24→8) ReLU,
/// conv(8→1), sigmoid. Convolutions are 3³ same-size.
#[derive(Clone, Debug, PartialEq)]
pub struct SegNet {
    pub params: ParamStore,
}

const LAYERS: [(usize, usize); 4] = [(1, 8), (8, 16), (24, 8), (8, 1)];

impl SegNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = stream(seed, "init/seg", 0);
        let mut params = ParamStore::new();
        for (l, (ci, co)) in LAYERS.iter().enumerate() {
            params.insert(format!("conv{}.w", l + 1), glorot(&[*co, *ci, 3, 3, 3], ci * 27, co * 27, &mut rng));
            params.insert(format!("conv{}.b", l + 1), Tensor::zeros(&[*co]));
        }
        SegNet { params }
    }

    /// `x` is `[1, D, H, W]` with even extents; returns logits of the same
    /// shape.
    pub fn logits(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let p = |n: &str| var(&self.params, bound, n);
        let conv = |tape: &mut Tape, h: Var, l: usize| {
            tape.conv3d(h, p(&format!("conv{l}.w")), Some(p(&format!("conv{l}.b"))))
        };
        let h1 = conv(tape, x, 1)?;
        let h1 = tape.relu(h1);
        let down = tape.avg_pool(h1, [2, 2, 2])?;
        let h2 = conv(tape, down, 2)?;
        let h2 = tape.relu(h2);
        let up = tape.upsample_nn(h2, 2)?;
        let cat = tape.concat(&[up, h1])?;
        let h3 = conv(tape, cat, 3)?;
        let h3 = tape.relu(h3);
        conv(tape, h3, 4)
    }

    fn input(volume: &Volume) -> Result<Tensor> {
        let [d, h, w] = volume.extents;
        Tensor::new(vec![1, d, h, w], standardize(&volume.data))
    }

    /// Mean BCE of one sample and its parameter gradient in store order.
    pub fn loss_and_grad(&self, s: &SegSample) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.leaf(Self::input(&s.volume)?);
        let y = tape.leaf(Tensor::new(tape.value(x).shape().to_vec(), s.mask.clone())?);
        let l = self.logits(&mut tape, &bound, x)?;
        let loss = tape.bce_with_logits(l, y)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], self.params.flat_grads_of(&bound, &grads)))
    }

    /// Foreground probabilities in (0, 1).
    pub fn predict(&self, volume: &Volume) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let bound = self.params.bind(&mut tape);
        let x = tape.leaf(Self::input(volume)?);
        let l = self.logits(&mut tape, &bound, x)?;
        let p = tape.sigmoid(l);
        Ok(tape.value(p).data().to_vec())
    }

    /// Thresholded prediction at 0.5.
    pub fn segment(&self, volume: &Volume) -> Result<Vec<bool>> {
        Ok(self.predict(volume)?.into_iter().map(|p| p > 0.5).collect())
    }
}

/// Epoch counts, rate and seed of a two-stage segmenter run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegTrainConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            pretrain_epochs: 20,
            finetune_epochs: 20,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// Batch-1 Adam over a reshuffled set each epoch. Returns mean loss per
/// epoch.
pub fn train_epochs(net: &mut SegNet, adam: &mut Adam, set: &[SegSample], epochs: usize, lr: f64, seed: u64, stage: &str) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for e in 0..epochs {
        order.shuffle(&mut stream(seed, &format!("seg/{stage}"), e as u64));
        let mut total = 0.0;
        for &i in &order {
            let (l, g) = net.loss_and_grad(&set[i])?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("segmenter loss is {l} at epoch {e}")));
            }
            total += l;
            net.params.set_grads_flat(&g)?;
            adam.step(SEG_PREFIX, &mut net.params, lr);
        }
        history.push(total / set.len().max(1) as f64);
    }
    Ok(history)
}

/// Pretrains on `pretrain`, then fine-tunes on `finetune` with fresh
/// optimiser state. An empty set skips its stage.
pub fn train_segmenter(pretrain: &[SegSample], finetune: &[SegSample], cfg: SegTrainConfig) -> Result<SegNet> {
    if pretrain.is_empty() && finetune.is_empty() {
        return Err(Error::Data("segmenter needs at least one training sample".into()));
    }
    let mut net = SegNet::new(cfg.seed);
    if !pretrain.is_empty() {
        let mut adam = Adam::new(AdamConfig::default());
        train_epochs(&mut net, &mut adam, pretrain, cfg.pretrain_epochs, cfg.lr, cfg.seed, "pretrain")?;
    }
    if !finetune.is_empty() {
        let mut adam = Adam::new(AdamConfig::default());
        train_epochs(&mut net, &mut adam, finetune, cfg.finetune_epochs, cfg.lr, cfg.seed, "finetune")?;
    }
    Ok(net)
}
