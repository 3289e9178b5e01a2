//! Forward and backward kernels shared by the tape and by callers that only
//! need the forward values.

use crate::diff::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::par;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_EPS: f64 = 1e-5;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a)?;
    let (k2, n) = dims2(b)?;
    if k != k2 {
        return Err(shape_err!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Returns (g·bᵀ, aᵀ·g).
pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut ga = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            let brow = &bd[p * n..(p + 1) * n];
            let grow = &gd[i * n..(i + 1) * n];
            ga[i * k + p] = brow.iter().zip(grow).map(|(x, y)| x * y).sum();
        }
    }
    let mut gb = vec![0.0; k * n];
    for i in 0..m {
        let grow = &gd[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            let out = &mut gb[p * n..(p + 1) * n];
            for (o, &gv) in out.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    (
        Tensor::new(vec![m, k], ga).expect("shape"),
        Tensor::new(vec![k, n], gb).expect("shape"),
    )
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(shape_err!("expected a matrix, got shape {:?}", s)),
    }
}

/// Spatial layout of a convolution: channels-first, three spatial axes, odd
/// kernel extents with same-size zero padding.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub spatial: [usize; 3],
    pub kernel: [usize; 3],
}

impl ConvDims {
    fn volume(&self) -> usize {
        self.spatial.iter().product()
    }

    fn ksize(&self) -> usize {
        self.kernel.iter().product()
    }

    fn w_index(&self, o: usize, c: usize, k: [usize; 3]) -> usize {
        (((o * self.c_in + c) * self.kernel[0] + k[0]) * self.kernel[1] + k[1]) * self.kernel[2]
            + k[2]
    }
}

/// Valid output range along one axis for kernel offset `d`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n.saturating_sub(d as usize) } else { n };
    (lo, hi.max(lo))
}

fn offsets(kernel: [usize; 3]) -> Vec<([usize; 3], [isize; 3])> {
    let mut v = Vec::with_capacity(kernel.iter().product());
    for a in 0..kernel[0] {
        for b in 0..kernel[1] {
            for c in 0..kernel[2] {
                v.push((
                    [a, b, c],
                    [
                        a as isize - (kernel[0] / 2) as isize,
                        b as isize - (kernel[1] / 2) as isize,
                        c as isize - (kernel[2] / 2) as isize,
                    ],
                ));
            }
        }
    }
    v
}

pub fn conv_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, dims: ConvDims) -> Vec<f64> {
    let vol = dims.volume();
    let [d, h, wd] = dims.spatial;
    let offs = offsets(dims.kernel);
    let mut out = vec![0.0; dims.c_out * vol];
    par::for_each_chunk_mut(&mut out, vol, |o, out_o| {
        if let Some(b) = bias {
            out_o.fill(b[o]);
        }
        for c in 0..dims.c_in {
            let xc = &x[c * vol..(c + 1) * vol];
            for &(k, [dz, dy, dx]) in &offs {
                let wv = w[dims.w_index(o, c, k)];
                if wv == 0.0 {
                    continue;
                }
                let (z0, z1) = span(d, dz);
                let (y0, y1) = span(h, dy);
                let (x0, x1) = span(wd, dx);
                for z in z0..z1 {
                    let zi = (z as isize + dz) as usize;
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let orow = &mut out_o[(z * h + y) * wd + x0..(z * h + y) * wd + x1];
                        let base = (zi * h + yi) * wd;
                        let xs = (x0 as isize + dx) as usize;
                        let irow = &xc[base + xs..base + xs + (x1 - x0)];
                        for (ov, &iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradients of a convolution with respect to input, weights and bias.
pub fn conv_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    dims: ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let vol = dims.volume();
    let [d, h, wd] = dims.spatial;
    let offs = offsets(dims.kernel);

    let mut gx = vec![0.0; dims.c_in * vol];
    par::for_each_chunk_mut(&mut gx, vol, |c, gx_c| {
        for o in 0..dims.c_out {
            let gy_o = &gy[o * vol..(o + 1) * vol];
            for &(k, [dz, dy, dx]) in &offs {
                let wv = w[dims.w_index(o, c, k)];
                if wv == 0.0 {
                    continue;
                }
                let (z0, z1) = span(d, dz);
                let (y0, y1) = span(h, dy);
                let (x0, x1) = span(wd, dx);
                for z in z0..z1 {
                    let zi = (z as isize + dz) as usize;
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let grow = &gy_o[(z * h + y) * wd + x0..(z * h + y) * wd + x1];
                        let base = (zi * h + yi) * wd;
                        let xs = (x0 as isize + dx) as usize;
                        let drow = &mut gx_c[base + xs..base + xs + (x1 - x0)];
                        for (dv, &gv) in drow.iter_mut().zip(grow) {
                            *dv += wv * gv;
                        }
                    }
                }
            }
        }
    });

    let per_out = dims.c_in * dims.ksize();
    let mut gw = vec![0.0; dims.c_out * per_out];
    par::for_each_chunk_mut(&mut gw, per_out, |o, gw_o| {
        let gy_o = &gy[o * vol..(o + 1) * vol];
        for c in 0..dims.c_in {
            let xc = &x[c * vol..(c + 1) * vol];
            for &(k, [dz, dy, dx]) in &offs {
                let (z0, z1) = span(d, dz);
                let (y0, y1) = span(h, dy);
                let (x0, x1) = span(wd, dx);
                let mut acc = 0.0;
                for z in z0..z1 {
                    let zi = (z as isize + dz) as usize;
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let grow = &gy_o[(z * h + y) * wd + x0..(z * h + y) * wd + x1];
                        let base = (zi * h + yi) * wd;
                        let xs = (x0 as isize + dx) as usize;
                        let irow = &xc[base + xs..base + xs + (x1 - x0)];
                        acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                gw_o[dims.w_index(0, c, k)] = acc;
            }
        }
    });

    let gb = (0..dims.c_out)
        .map(|o| gy[o * vol..(o + 1) * vol].iter().sum())
        .collect();
    (gx, gw, gb)
}

/// Same-size 3³ convolution of a `[c_in, D, H, W]` input.
pub fn conv3d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let dims = conv_dims(x, w, bias, 3)?;
    let out = conv_forward(x.data(), w.data(), bias.map(|b| b.data()), dims);
    let mut shape = vec![dims.c_out];
    shape.extend_from_slice(&x.shape()[1..]);
    Tensor::new(shape, out)
}

/// Same-size 3×3 convolution of a `[c_in, H, W]` input.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let dims = conv_dims(x, w, bias, 2)?;
    let out = conv_forward(x.data(), w.data(), bias.map(|b| b.data()), dims);
    let mut shape = vec![dims.c_out];
    shape.extend_from_slice(&x.shape()[1..]);
    Tensor::new(shape, out)
}

pub(crate) fn conv_dims(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    spatial_rank: usize,
) -> Result<ConvDims> {
    if x.rank() != spatial_rank + 1 || w.rank() != spatial_rank + 2 {
        return Err(shape_err!(
            "conv{}d expects input rank {} and weight rank {}, got {:?} and {:?}",
            spatial_rank,
            spatial_rank + 1,
            spatial_rank + 2,
            x.shape(),
            w.shape()
        ));
    }
    if w.shape()[2..].iter().any(|&k| k != 3) {
        return Err(Error::Config(format!(
            "only 3-wide kernels with stride 1 are supported, got {:?}",
            &w.shape()[2..]
        )));
    }
    let c_in = x.shape()[0];
    let c_out = w.shape()[0];
    if w.shape()[1] != c_in {
        return Err(shape_err!(
            "weight expects {} input channels, input has {}",
            w.shape()[1],
            c_in
        ));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(shape_err!("bias length {} != {} outputs", b.len(), c_out));
        }
    }
    let (spatial, kernel) = if spatial_rank == 3 {
        ([x.shape()[1], x.shape()[2], x.shape()[3]], [3, 3, 3])
    } else {
        ([1, x.shape()[1], x.shape()[2]], [1, 3, 3])
    };
    if spatial.contains(&0) {
        return Err(shape_err!("empty spatial extent {:?}", x.shape()));
    }
    Ok(ConvDims {
        c_in,
        c_out,
        spatial,
        kernel,
    })
}

/// Nearest-neighbour upsampling of a `[c, D, H, W]` tensor by 2 or 4.
pub fn upsample_nn(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor != 2 && factor != 4 {
        return Err(Error::Config(format!(
            "upsampling factor must be 2 or 4, got {factor}"
        )));
    }
    let [c, d, h, w] = dims4(x)?;
    let (od, oh, ow) = (d * factor, h * factor, w * factor);
    let src = x.data();
    let mut out = vec![0.0; c * od * oh * ow];
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                let srow = &src[((ch * d + z / factor) * h + y / factor) * w..][..w];
                let orow = &mut out[((ch * od + z) * oh + y) * ow..][..ow];
                for (xx, v) in orow.iter_mut().enumerate() {
                    *v = srow[xx / factor];
                }
            }
        }
    }
    Tensor::new(vec![c, od, oh, ow], out)
}

/// Adjoint of nearest-neighbour upsampling: block sums.
pub fn upsample_nn_backward(g: &Tensor, factor: usize) -> Tensor {
    let [c, od, oh, ow] = [g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]];
    let (d, h, w) = (od / factor, oh / factor, ow / factor);
    let mut out = vec![0.0; c * d * h * w];
    let gd = g.data();
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                let grow = &gd[((ch * od + z) * oh + y) * ow..][..ow];
                let orow = &mut out[((ch * d + z / factor) * h + y / factor) * w..][..w];
                for (xx, &v) in grow.iter().enumerate() {
                    orow[xx / factor] += v;
                }
            }
        }
    }
    Tensor::new(vec![c, d, h, w], out).expect("shape")
}

/// Block-average pooling of a `[c, D, H, W]` tensor.
pub fn avg_pool(x: &Tensor, f: [usize; 3]) -> Result<Tensor> {
    let [c, d, h, w] = dims4(x)?;
    if f.contains(&0) || d % f[0] != 0 || h % f[1] != 0 || w % f[2] != 0 {
        return Err(shape_err!(
            "pool factors {:?} do not divide extents {:?}",
            f,
            x.shape()
        ));
    }
    let (od, oh, ow) = (d / f[0], h / f[1], w / f[2]);
    let scale = 1.0 / (f[0] * f[1] * f[2]) as f64;
    let src = x.data();
    let mut out = vec![0.0; c * od * oh * ow];
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                let srow = &src[((ch * d + z) * h + y) * w..][..w];
                let orow = &mut out[((ch * od + z / f[0]) * oh + y / f[1]) * ow..][..ow];
                for (xx, &v) in srow.iter().enumerate() {
                    orow[xx / f[2]] += v * scale;
                }
            }
        }
    }
    Tensor::new(vec![c, od, oh, ow], out)
}

pub fn avg_pool_backward(g: &Tensor, input_shape: &[usize], f: [usize; 3]) -> Tensor {
    let [c, d, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
    let (oh, ow) = (h / f[1], w / f[2]);
    let od = d / f[0];
    let scale = 1.0 / (f[0] * f[1] * f[2]) as f64;
    let gd = g.data();
    let mut out = vec![0.0; c * d * h * w];
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                let grow = &gd[((ch * od + z / f[0]) * oh + y / f[1]) * ow..][..ow];
                let orow = &mut out[((ch * d + z) * h + y) * w..][..w];
                for (xx, v) in orow.iter_mut().enumerate() {
                    *v = grow[xx / f[2]] * scale;
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out).expect("shape")
}

pub(crate) fn dims4(x: &Tensor) -> Result<[usize; 4]> {
    match x.shape() {
        [c, d, h, w] => Ok([*c, *d, *h, *w]),
        s => Err(shape_err!("expected [c, D, H, W], got {:?}", s)),
    }
}

#[inline]
pub fn leaky_relu(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Normalisation mode for [`batchnorm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Statistics of the current input.
    Batch,
    /// Stored running statistics.
    Running,
}

/// Per-channel normalisation result, keeping what backward needs.
pub struct BatchNormOut {
    pub y: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalisation over channel 0 of `x`. A channel whose values are all
/// identical normalises to zero, so it outputs β exactly.
pub fn batchnorm(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    running: Option<(&[f64], &[f64])>,
) -> Result<BatchNormOut> {
    let c = x.shape().first().copied().unwrap_or(0);
    if c == 0 || gamma.len() != c || beta.len() != c {
        return Err(shape_err!(
            "batchnorm: {} channels, γ {}, β {}",
            c,
            gamma.len(),
            beta.len()
        ));
    }
    let n = x.len() / c;
    let xd = x.data();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];
    for ch in 0..c {
        let xs = &xd[ch * n..(ch + 1) * n];
        let (mean, var, constant) = match running {
            Some((rm, rv)) => (rm[ch], rv[ch], false),
            None => {
                let mean = xs.iter().sum::<f64>() / n as f64;
                let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let constant = xs.iter().all(|&v| v == xs[0]);
                (mean, var, constant)
            }
        };
        let is = 1.0 / (var + eps).sqrt();
        inv_std[ch] = is;
        means[ch] = mean;
        vars[ch] = var;
        for i in 0..n {
            let xh = if constant { 0.0 } else { (xs[i] - mean) * is };
            xhat[ch * n + i] = xh;
            y[ch * n + i] = gamma[ch] * xh + beta[ch];
        }
    }
    Ok(BatchNormOut {
        y: Tensor::new(x.shape().to_vec(), y)?,
        xhat,
        inv_std,
        mean: means,
        var: vars,
    })
}

/// Backward of batch-statistics normalisation. Returns (gx, gγ, gβ).
pub fn batchnorm_backward(
    g: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    batch_stats: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = gamma.len();
    let n = g.len() / c;
    let mut gx = vec![0.0; g.len()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for ch in 0..c {
        let gs = &g[ch * n..(ch + 1) * n];
        let xs = &xhat[ch * n..(ch + 1) * n];
        let sum_g: f64 = gs.iter().sum();
        let sum_gx: f64 = gs.iter().zip(xs).map(|(a, b)| a * b).sum();
        gb[ch] = sum_g;
        gg[ch] = sum_gx;
        let k = gamma[ch] * inv_std[ch];
        for i in 0..n {
            gx[ch * n + i] = if batch_stats {
                k * (gs[i] - sum_g / n as f64 - xs[i] * sum_gx / n as f64)
            } else {
                k * gs[i]
            };
        }
    }
    (gx, gg, gb)
}

/// Soft intersection-over-union loss `1 − Σ p·y / Σ (p + y − p·y)`; zero when
/// both inputs are empty.
pub fn soft_iou_loss(p: &[f64], y: &[f64]) -> f64 {
    let (inter, union) = iou_sums(p, y);
    if union == 0.0 {
        0.0
    } else {
        1.0 - inter / union
    }
}

fn iou_sums(p: &[f64], y: &[f64]) -> (f64, f64) {
    let mut inter = 0.0;
    let mut union = 0.0;
    for (&a, &b) in p.iter().zip(y) {
        inter += a * b;
        union += a + b - a * b;
    }
    (inter, union)
}

pub fn soft_iou_grad(p: &[f64], y: &[f64]) -> Vec<f64> {
    let (inter, union) = iou_sums(p, y);
    if union == 0.0 {
        return vec![0.0; p.len()];
    }
    y.iter()
        .map(|&b| -(b * union - inter * (1.0 - b)) / (union * union))
        .collect()
}

/// Mean binary cross-entropy on logits.
pub fn bce_with_logits(logits: &[f64], target: &[f64]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(target)
        .map(|(&l, &t)| l.max(0.0) - t * l + (-l.abs()).exp().ln_1p())
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_conv3d(x: &Tensor, w: &Tensor) -> Vec<f64> {
        let [ci, d, h, wd] = dims4(x).unwrap();
        let co = w.shape()[0];
        let mut out = vec![0.0; co * d * h * wd];
        for o in 0..co {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for a in 0..3 {
                                for b in 0..3 {
                                    for e in 0..3 {
                                        let (zi, yi, xi) = (
                                            z as isize + a as isize - 1,
                                            y as isize + b as isize - 1,
                                            xx as isize + e as isize - 1,
                                        );
                                        if zi < 0
                                            || yi < 0
                                            || xi < 0
                                            || zi >= d as isize
                                            || yi >= h as isize
                                            || xi >= wd as isize
                                        {
                                            continue;
                                        }
                                        let xv = x.data()[((c * d + zi as usize) * h
                                            + yi as usize)
                                            * wd
                                            + xi as usize];
                                        let wv = w.data()[(((o * ci + c) * 3 + a) * 3 + b) * 3 + e];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[((o * d + z) * h + y) * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv3d_zero_input() {
        let x = Tensor::zeros(&[2, 3, 3, 3]);
        let w = Tensor::new(vec![1, 2, 3, 3, 3], pseudo(54, 1)).unwrap();
        assert!(conv3d(&x, &w, None).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv3d_identity_kernel_copies() {
        let x = Tensor::new(vec![1, 4, 4, 4], pseudo(64, 5)).unwrap();
        let mut w = Tensor::zeros(&[1, 1, 3, 3, 3]);
        w.data_mut()[13] = 1.0;
        assert_eq!(conv3d(&x, &w, None).unwrap().data(), x.data());
    }

    #[test]
    fn conv3d_matches_brute_force() {
        let x = Tensor::new(vec![2, 4, 4, 4], pseudo(128, 2)).unwrap();
        let w = Tensor::new(vec![1, 2, 3, 3, 3], pseudo(54, 3)).unwrap();
        let fast = conv3d(&x, &w, None).unwrap();
        let slow = brute_conv3d(&x, &w);
        for (a, b) in fast.data().iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_rejects_wide_kernel() {
        let x = Tensor::zeros(&[1, 4, 4, 4]);
        let w = Tensor::zeros(&[1, 1, 5, 5, 5]);
        assert!(matches!(conv3d(&x, &w, None), Err(Error::Config(_))));
    }

    #[test]
    fn upsample_replicates() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![7.0]).unwrap();
        let y = upsample_nn(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert!(matches!(upsample_nn(&x, 3), Err(Error::Config(_))));
    }

    #[test]
    fn upsample_conserves_mass_and_adjoint() {
        let x = Tensor::new(vec![2, 2, 3, 2], pseudo(24, 9)).unwrap();
        for f in [2, 4] {
            let y = upsample_nn(&x, f).unwrap();
            let s_in: f64 = x.data().iter().sum();
            let s_out: f64 = y.data().iter().sum();
            assert!((s_out - (f * f * f) as f64 * s_in).abs() < 1e-10);
            let g = upsample_nn_backward(&Tensor::filled(y.shape(), 1.0), f);
            assert!(g.data().iter().all(|&v| v == (f * f * f) as f64));
        }
    }

    #[test]
    fn activations_basic_values() {
        assert_eq!(0f64.tanh(), 0.0);
        assert_eq!((-1f64).max(0.0), 0.0);
        assert_eq!(leaky_relu(-1.0), -0.01);
    }

    #[test]
    fn batchnorm_constant_input_gives_beta() {
        let x = Tensor::filled(&[2, 5], 3.7);
        let out = batchnorm(&x, &[2.0, 3.0], &[0.5, -1.0], BN_EPS, None).unwrap();
        assert_eq!(&out.y.data()[..5], &[0.5; 5]);
        assert_eq!(&out.y.data()[5..], &[-1.0; 5]);
    }

    #[test]
    fn soft_iou_edge_cases() {
        let y = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(soft_iou_loss(&y, &y), 0.0);
        assert_eq!(soft_iou_loss(&[0.0, 1.0, 0.0, 1.0], &y), 1.0);
        assert_eq!(soft_iou_loss(&[0.0; 4], &[0.0; 4]), 0.0);
    }
}
