use std::sync::Arc;

use crate::diff::ops::{self, ConvDims};
use crate::diff::Tensor;
use crate::error::{shape_err, Result};

/// Handle to a value held by a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A linear map with an explicit adjoint, usable as a differentiable node.
pub trait LinearOp: Send + Sync {
    fn input_shape(&self) -> Vec<usize>;
    fn output_shape(&self) -> Vec<usize>;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, y: &[f64]) -> Vec<f64>;
}

enum Op {
    MatMul,
    AddRowBias,
    Conv { dims: ConvDims, has_bias: bool },
    Upsample(usize),
    AvgPool([usize; 3]),
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    Add,
    Sub,
    Mul,
    Affine(f64),
    Reshape,
    Concat(Vec<usize>),
    Linear(Arc<dyn LinearOp>),
    SumSquares,
    Sum,
    Weighted(Vec<f64>),
    SoftIou,
    BceWithLogits,
}

struct Record {
    inputs: Vec<Var>,
    output: Var,
    op: Op,
}

/// Reverse-mode recorder. Values live on the tape; when recording is disabled
/// ops still compute their outputs but leave no backward record.
pub struct Tape {
    values: Vec<Tensor>,
    records: Vec<Record>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Number of records replayed.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            records: Vec::new(),
            recording: true,
        }
    }

    /// Forward-only tape: values are computed but nothing is recorded.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.clear();
        self.records.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.values.push(t);
        Var(self.values.len() - 1)
    }

    fn push(&mut self, t: Tensor, inputs: Vec<Var>, op: Op) -> Var {
        let out = self.leaf(t);
        if self.recording {
            self.records.push(Record {
                inputs,
                output: out,
                op,
            });
        }
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(y, vec![a, b], Op::MatMul))
    }

    /// Adds `bias[j]` to column `j` of every row of a matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = *xv.shape().last().unwrap_or(&0);
        if xv.rank() != 2 || bv.len() != n {
            return Err(shape_err!(
                "row bias {:?} does not fit {:?}",
                bv.shape(),
                xv.shape()
            ));
        }
        let mut y = xv.clone();
        for row in y.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        Ok(self.push(y, vec![x, bias], Op::AddRowBias))
    }

    pub fn conv3d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        self.conv(x, w, bias, 3)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        self.conv(x, w, bias, 2)
    }

    fn conv(&mut self, x: Var, w: Var, bias: Option<Var>, rank: usize) -> Result<Var> {
        let dims = ops::conv_dims(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            rank,
        )?;
        let out = ops::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            dims,
        );
        let mut shape = vec![dims.c_out];
        shape.extend_from_slice(&self.value(x).shape()[1..]);
        let y = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(
            y,
            inputs,
            Op::Conv {
                dims,
                has_bias: bias.is_some(),
            },
        ))
    }

    pub fn upsample_nn(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = ops::upsample_nn(self.value(x), factor)?;
        Ok(self.push(y, vec![x], Op::Upsample(factor)))
    }

    pub fn avg_pool(&mut self, x: Var, factors: [usize; 3]) -> Result<Var> {
        let y = ops::avg_pool(self.value(x), factors)?;
        Ok(self.push(y, vec![x], Op::AvgPool(factors)))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(ops::leaky_relu);
        self.push(y, vec![x], Op::LeakyRelu)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, vec![x], Op::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        self.push(y, vec![x], Op::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(ops::sigmoid);
        self.push(y, vec![x], Op::Sigmoid)
    }

    /// Batch normalisation over channel 0. `running` selects stored statistics
    /// (eval mode); `None` uses the statistics of `x`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let out = ops::batchnorm(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            ops::BN_EPS,
            running,
        )?;
        let v = self.push(
            out.y,
            vec![x, gamma, beta],
            Op::BatchNorm {
                xhat: out.xhat,
                inv_std: out.inv_std,
                batch: running.is_none(),
            },
        );
        Ok((v, out.mean, out.var))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err!(
                "elementwise operands differ: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let y = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(y, vec![a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(x).map(|v| scale * v + shift);
        self.push(y, vec![x], Op::Affine(scale))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, vec![x], Op::Reshape))
    }

    /// Concatenate along axis 0; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let mut lens = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        let mut lead = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != first[1..] {
                return Err(shape_err!(
                    "concat: {:?} does not match {:?}",
                    t.shape(),
                    first
                ));
            }
            lead += t.shape()[0];
            lens.push(t.len());
            data.extend_from_slice(t.data());
        }
        let mut shape = first;
        shape[0] = lead;
        let y = Tensor::new(shape, data)?;
        Ok(self.push(y, parts.to_vec(), Op::Concat(lens)))
    }

    pub fn linear_op(&mut self, x: Var, op: Arc<dyn LinearOp>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != op.input_shape().iter().product::<usize>() {
            return Err(shape_err!(
                "linear operator expects {:?}, got {:?}",
                op.input_shape(),
                xv.shape()
            ));
        }
        let y = Tensor::new(op.output_shape(), op.apply(xv.data()))?;
        Ok(self.push(y, vec![x], Op::Linear(op)))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), vec![x], Op::SumSquares)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), vec![x], Op::Sum)
    }

    /// `Σ w_i x_i` against fixed weights; used to inject externally computed
    /// gradients into the graph.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(shape_err!(
                "weights length {} != {}",
                weights.len(),
                xv.len()
            ));
        }
        let s = xv.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), vec![x], Op::Weighted(weights)))
    }

    pub fn soft_iou(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, y) = (self.value(pred), self.value(target));
        if p.shape() != y.shape() {
            return Err(shape_err!("iou operands differ: {:?} vs {:?}", p.shape(), y.shape()));
        }
        let l = ops::soft_iou_loss(p.data(), y.data());
        Ok(self.push(Tensor::scalar(l), vec![pred, target], Op::SoftIou))
    }

    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        let (l, y) = (self.value(logits), self.value(target));
        if l.shape() != y.shape() {
            return Err(shape_err!("bce operands differ: {:?} vs {:?}", l.shape(), y.shape()));
        }
        let v = ops::bce_with_logits(l.data(), y.data());
        Ok(self.push(Tensor::scalar(v), vec![logits, target], Op::BceWithLogits))
    }

    /// Backpropagate from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar output, got {:?}",
                self.value(output).shape()
            ));
        }
        self.backward_with(output, Tensor::filled(self.value(output).shape(), 1.0))
    }

    /// Backpropagate an explicit upstream gradient for `output`.
    pub fn backward_with(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return Err(shape_err!(
                "seed {:?} does not match output {:?}",
                seed.shape(),
                self.value(output).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[output.0] = Some(seed);
        let mut visited = 0;
        for rec in self.records.iter().rev() {
            visited += 1;
            let Some(g) = grads[rec.output.0].take() else {
                continue;
            };
            let contributions = self.op_backward(rec, &g);
            grads[rec.output.0] = Some(g);
            for (var, cg) in rec.inputs.iter().zip(contributions) {
                if let Some(cg) = cg {
                    accumulate(&mut grads[var.0], cg);
                }
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn op_backward(&self, rec: &Record, g: &Tensor) -> Vec<Option<Tensor>> {
        let input = |i: usize| self.value(rec.inputs[i]);
        let out = self.value(rec.output);
        let like = |t: &Tensor, data: Vec<f64>| Tensor::new(t.shape().to_vec(), data).expect("shape");
        let elementwise = |f: &dyn Fn(usize) -> f64| {
            like(g, (0..g.len()).map(|i| g.data()[i] * f(i)).collect())
        };
        match &rec.op {
            Op::MatMul => {
                let (ga, gb) = ops::matmul_backward(input(0), input(1), g);
                vec![Some(ga), Some(gb)]
            }
            Op::AddRowBias => {
                let n = input(1).len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (a, b) in gb.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                vec![Some(g.clone()), Some(like(input(1), gb))]
            }
            Op::Conv { dims, has_bias } => {
                let (gx, gw, gb) =
                    ops::conv_backward(input(0).data(), input(1).data(), g.data(), *dims);
                let mut v = vec![Some(like(input(0), gx)), Some(like(input(1), gw))];
                if *has_bias {
                    v.push(Some(like(input(2), gb)));
                }
                v
            }
            Op::Upsample(f) => vec![Some(ops::upsample_nn_backward(g, *f))],
            Op::AvgPool(f) => vec![Some(ops::avg_pool_backward(g, input(0).shape(), *f))],
            Op::LeakyRelu => {
                let x = input(0).data();
                vec![Some(elementwise(&|i| {
                    if x[i] >= 0.0 {
                        1.0
                    } else {
                        ops::LEAKY_SLOPE
                    }
                }))]
            }
            Op::Relu => {
                let x = input(0).data();
                vec![Some(elementwise(&|i| if x[i] > 0.0 { 1.0 } else { 0.0 }))]
            }
            Op::Tanh => {
                let y = out.data();
                vec![Some(elementwise(&|i| 1.0 - y[i] * y[i]))]
            }
            Op::Sigmoid => {
                let y = out.data();
                vec![Some(elementwise(&|i| y[i] * (1.0 - y[i])))]
            }
            Op::BatchNorm {
                xhat,
                inv_std,
                batch,
            } => {
                let (gx, gg, gb) =
                    ops::batchnorm_backward(g.data(), xhat, inv_std, input(1).data(), *batch);
                vec![
                    Some(like(input(0), gx)),
                    Some(like(input(1), gg)),
                    Some(like(input(2), gb)),
                ]
            }
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Op::Mul => {
                let (a, b) = (input(0).data(), input(1).data());
                vec![Some(elementwise(&|i| b[i])), Some(elementwise(&|i| a[i]))]
            }
            Op::Affine(s) => vec![Some(g.map(|v| v * s))],
            Op::Reshape => vec![Some(like(input(0), g.data().to_vec()))],
            Op::Concat(lens) => {
                let mut off = 0;
                lens.iter()
                    .enumerate()
                    .map(|(i, &n)| {
                        let t = like(input(i), g.data()[off..off + n].to_vec());
                        off += n;
                        Some(t)
                    })
                    .collect()
            }
            Op::Linear(op) => vec![Some(like(input(0), op.adjoint(g.data())))],
            Op::SumSquares => {
                let s = g.item();
                vec![Some(input(0).map(|v| 2.0 * s * v))]
            }
            Op::Sum => {
                let s = g.item();
                vec![Some(Tensor::filled(input(0).shape(), s))]
            }
            Op::Weighted(w) => {
                let s = g.item();
                vec![Some(like(input(0), w.iter().map(|v| v * s).collect()))]
            }
            Op::SoftIou => {
                let s = g.item();
                let gp = ops::soft_iou_grad(input(0).data(), input(1).data());
                vec![Some(like(input(0), gp.iter().map(|v| v * s).collect())), None]
            }
            Op::BceWithLogits => {
                let s = g.item() / input(0).len() as f64;
                let (l, t) = (input(0).data(), input(1).data());
                let gl = l
                    .iter()
                    .zip(t)
                    .map(|(&a, &b)| (ops::sigmoid(a) - b) * s)
                    .collect();
                vec![Some(like(input(0), gl)), None]
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}
