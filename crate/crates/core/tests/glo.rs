mod common;

use std::time::Instant;

use fedsim::ct::SliceUpsample;
use fedsim::diff::check::{central_diff, rel_err};
use fedsim::diff::{LinearOp, Tape, Tensor};
use fedsim::fsct::Container;
use fedsim::glo::*;
use fedsim::nets::{LATENT_DIM, MATERIAL_EXTENT};
use fedsim::rng::stream;
use fedsim::ssm::{soft_foreground, FdSteps, ShapeParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

const RES: usize = 16;

fn toy(n: usize, labeled: usize) -> (Vec<TrainSample>, TrainState) {
    let data = common::dataset("siteA", RES, n, labeled, 7);
    let ssm = common::model("siteA", RES, 20, 8);
    let state = TrainState::new(common::small_config(RES, 8), ssm, &data).unwrap();
    (data, state)
}

// ---------------------------------------------------------------- losses

#[test]
fn iou_trivial_cases() {
    let y = [1.0, 0.0, 1.0, 1.0];
    assert_eq!(loss_iou(&y, &y).unwrap(), 0.0);
    assert_eq!(loss_iou(&[0.0, 1.0, 0.0, 0.0], &y).unwrap(), 1.0);
    assert_eq!(loss_iou(&[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
    assert!(loss_iou(&[0.0; 3], &y).is_err());
}

#[test]
fn iou_half_occupancy_matches_direct_sum() {
    let n = 64;
    let p = vec![0.5; n];
    let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let ny = (n / 2) as f64;
    let expected = 1.0 - (0.5 * ny) / (0.5 * n as f64 + ny - 0.5 * ny);
    assert!((loss_iou(&p, &y).unwrap() - expected).abs() < 1e-15);
}

proptest! {
    #[test]
    fn iou_bounded_and_symmetric(bits in proptest::collection::vec(any::<(bool, bool)>(), 1..64),
                                 soft in proptest::collection::vec(0.0f64..=1.0, 64)) {
        let a: Vec<f64> = bits.iter().map(|b| b.0 as u8 as f64).collect();
        let b: Vec<f64> = bits.iter().map(|b| b.1 as u8 as f64).collect();
        prop_assert_eq!(loss_iou(&a, &b).unwrap(), loss_iou(&b, &a).unwrap());
        let l = loss_iou(&soft[..a.len()], &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&l));
    }
}

#[test]
fn material_loss_constant_offset_closed_form() {
    let m = 16;
    let n = m * m * m;
    let mut rng = stream(1, "mat", 0);
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.05)).collect();
    assert_eq!(loss_material(&b, &b, m).unwrap(), 0.0);
    let c = 0.003;
    let a: Vec<f64> = b.iter().map(|v| v + c).collect();
    // ‖·‖² over N voxels, then one term per scale over N/f³ voxels.
    let expected = c * c * (n + n + n / 8 + n / 64) as f64;
    let got = loss_material(&a, &b, m).unwrap();
    assert!(rel_err(got, expected, 0.0) < 1e-9, "{got} vs {expected}");
}

#[test]
fn material_loss_gradient_matches_fd() {
    let m = 8;
    let mut rng = stream(2, "mat", 0);
    let a: Vec<f64> = (0..m * m * m).map(|_| rng.random_range(0.0..0.05)).collect();
    let b: Vec<f64> = (0..m * m * m).map(|_| rng.random_range(0.0..0.05)).collect();
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![m; 3], a.clone()).unwrap());
    let t = tape.leaf(Tensor::new(vec![m; 3], b.clone()).unwrap());
    let l = loss_material_var(&mut tape, x, t).unwrap();
    assert!(rel_err(tape.value(l).item(), loss_material(&a, &b, m).unwrap(), 0.0) < 1e-12);
    let g = tape.backward(l).unwrap().get(x).unwrap().clone();
    let mut f = |v: &[f64]| loss_material(v, &b, m).unwrap();
    for i in (0..a.len()).step_by(7) {
        let fd = central_diff(&mut f, &a, i, 1e-6);
        assert!(rel_err(g.data()[i], fd, 1e-10) < 1e-5, "voxel {i}: {} vs {fd}", g.data()[i]);
    }
}

#[test]
fn slice_loss_gradient_matches_fd() {
    let h = 16;
    let mut rng = stream(3, "slice", 0);
    let a: Vec<f64> = (0..h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eval = |v: &[f64], grad: bool| {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, h, h], v.to_vec()).unwrap());
        let t = tape.leaf(Tensor::new(vec![1, h, h], b.clone()).unwrap());
        let l = loss_slice_var(&mut tape, x, t).unwrap();
        let g = grad.then(|| tape.backward(l).unwrap().get(x).unwrap().clone());
        (tape.value(l).item(), g)
    };
    let g = eval(&a, true).1.unwrap();
    let mut f = |v: &[f64]| eval(v, false).0;
    for i in (0..a.len()).step_by(5) {
        let fd = central_diff(&mut f, &a, i, 1e-6);
        assert!(rel_err(g.data()[i], fd, 1e-10) < 1e-5);
    }
}

// ---------------------------------------------------------------- schedule

#[test]
fn schedule_is_constant_then_linear() {
    let s = Schedule { constant: 30, decay: 30 };
    assert_eq!(s.factor(0), 1.0);
    assert_eq!(s.factor(29), 1.0);
    assert_eq!(s.factor(30), 1.0);
    assert_eq!(s.factor(45), 0.5);
    assert_eq!(s.factor(60), 0.0);
    assert_eq!(s.factor(75), 0.0);
    for e in 30..60 {
        assert!(s.factor(e + 1) < s.factor(e));
    }
    let c = GloConfig::new(32, 56.0);
    let r = c.lr_labeled.scaled(s.factor(45));
    assert_eq!(r.latent, 0.5 * 1e-4);
    assert_eq!(r.enhancer, 0.5 * 1e-5);
    let u = c.lr_unlabeled.scaled(s.factor(45));
    assert_eq!(u.material, 0.5 * 1e-3);
}

// ---------------------------------------------------------------- prior

#[test]
fn prior_of_equal_latents_is_ridge() {
    let v: Vec<f64> = (0..LATENT_DIM).map(|i| i as f64 * 0.1).collect();
    let p = LatentPrior::fit(&vec![v.clone(); 5]).unwrap();
    for (a, b) in p.mean.iter().zip(&v) {
        assert!((a - b).abs() <= 1e-15 * b.abs());
    }
    let ridge = DMatrix::identity(LATENT_DIM, LATENT_DIM) * PRIOR_RIDGE;
    assert!((&p.cov - ridge).abs().max() < 1e-28);
}

#[test]
fn prior_of_two_latents_factorises() {
    let a: Vec<f64> = (0..LATENT_DIM).map(|i| (i as f64).sin()).collect();
    let b: Vec<f64> = (0..LATENT_DIM).map(|i| (i as f64).cos()).collect();
    let p = LatentPrior::fit(&[a, b]).unwrap();
    let rebuilt = &p.chol * p.chol.transpose();
    assert!((rebuilt - &p.cov).abs().max() < 1e-12);
    assert!(LatentPrior::fit(&[vec![0.0; LATENT_DIM]]).is_err());
    assert!(LatentPrior::fit(&[]).is_err());
}

#[test]
fn prior_recovers_known_gaussian() {
    let d = 4;
    let mu0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
    let l0 = DMatrix::from_row_slice(d, d, &[
        1.0, 0.0, 0.0, 0.0, //
        0.5, 2.0, 0.0, 0.0, //
        -0.3, 0.2, 0.7, 0.0, //
        0.1, 0.0, 0.4, 1.5,
    ]);
    let n = 10_000;
    let mut rng = stream(5, "prior", 0);
    let zs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let e = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            (&mu0 + &l0 * e).iter().copied().collect()
        })
        .collect();
    let p = LatentPrior::fit(&zs).unwrap();
    let sigma0 = &l0 * l0.transpose();
    for i in 0..d {
        let tol = 3.0 * sigma0[(i, i)].sqrt() / (n as f64).sqrt();
        assert!((p.mean[i] - mu0[i]).abs() < tol, "coordinate {i}");
    }
    // Sampling is reproducible from the seed.
    let s1 = p.sample(&mut stream(9, "draw", 0));
    let s2 = p.sample(&mut stream(9, "draw", 0));
    assert_eq!(s1, s2);
}

// ---------------------------------------------------------------- pretraining

#[test]
fn pretrain_is_deterministic() {
    let (data, s0) = toy(4, 4);
    let run = || {
        let mut s = s0.clone();
        for _ in 0..2 {
            s.pretrain_epoch(&data).unwrap();
        }
        s
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_ne!(a, s0);
}

#[test]
fn pretrain_rejects_unlabeled_samples() {
    let (data, mut s) = toy(3, 1);
    assert!(s.pretrain_step(&data, 2).is_err());
    assert!(s.pretrain_enhancer_step(&data, 2, 0).is_err());
    assert!(s.pretrain_epoch(&data[..2]).is_err());
}

#[test]
fn pretrain_halves_iou_loss_on_toy_set() {
    let (data, mut s) = toy(4, 4);
    let initial: f64 = s.labeled_iou_losses(&data).unwrap().iter().sum::<f64>() / 4.0;
    for _ in 0..50 {
        s.pretrain_epoch(&data).unwrap();
    }
    let fin: f64 = s.labeled_iou_losses(&data).unwrap().iter().sum::<f64>() / 4.0;
    assert!(fin < 0.5 * initial, "initial {initial}, final {fin}");
}

#[test]
fn latent_only_descent_is_monotone() {
    let (data, mut s) = toy(1, 1);
    let mut r = s.config.lr_pretrain;
    r.shape = 0.0;
    r.material = 0.0;
    r.latent = 1e-4;
    let frozen = (s.shape_net.clone(), s.material_net.clone());
    let mut last = f64::INFINITY;
    let mut first = None;
    for step in 0..50 {
        let out = s.shape_grads(&data, 0).unwrap();
        let soft = out.losses.iou_soft.unwrap();
        assert!(soft <= last + 1e-12, "step {step}: {soft} > {last}");
        first.get_or_insert(soft);
        last = soft;
        let g = StepGrads {
            latent: out.grads.latent,
            ..Default::default()
        };
        s.apply(0, &g, r, Group::Labeled).unwrap();
    }
    assert!(last < first.unwrap());
    assert_eq!((s.shape_net.clone(), s.material_net.clone()), frozen);
}

/// Independent replay of one labeled step with fresh Adam moments: the
/// shape branch by hand (MLP, central differences, scaling and Adam), the
/// material branch from a hand-derived loss gradient seeded into the tape.
#[test]
fn one_pretrain_step_matches_straight_line_oracle() {
    let (data, s0) = toy(1, 1);
    let mut s = s0.clone();
    s.pretrain_step(&data, 0).unwrap();

    let p = &s0.shape_net.params;
    let w = |n: &str| p.value(n).data().to_vec();
    let (w1, b1, w2, b2, w3, b3) = (w("w1"), w("b1"), w("w2"), w("b2"), w("w3"), w("b3"));
    let (d0, d1, d2) = (LATENT_DIM, b1.len(), b2.len());
    let d3 = b3.len();
    let z = s0.latents[0].data().to_vec();
    let leaky = |v: f64| if v >= 0.0 { v } else { 0.01 * v };
    let dleaky = |v: f64| if v >= 0.0 { 1.0 } else { 0.01 };
    let affine = |x: &[f64], w: &[f64], b: &[f64], n_in: usize, n_out: usize| -> Vec<f64> {
        (0..n_out).map(|j| b[j] + (0..n_in).map(|i| x[i] * w[i * n_out + j]).sum::<f64>()).collect()
    };
    let a1 = affine(&z, &w1, &b1, d0, d1);
    let h1: Vec<f64> = a1.iter().map(|&v| leaky(v)).collect();
    let a2 = affine(&h1, &w2, &b2, d1, d2);
    let h2: Vec<f64> = a2.iter().map(|&v| leaky(v)).collect();
    let u: Vec<f64> = affine(&h2, &w3, &b3, d2, d3).iter().map(|v| v.tanh()).collect();

    // τ = scale ⊙ u, gradient by central differences of the soft IoU.
    let ssm = &*s0.ssm;
    let scales = s0.ranges.scales();
    let tau: Vec<f64> = u.iter().zip(&scales).map(|(a, b)| a * b).collect();
    let fg = data[0].labels.as_ref().unwrap().foreground();
    let spacing = 56.0 / RES as f64;
    let iou = |t: &[f64]| {
        let pts = ssm.synthesize(&ShapeParams::from_slice(t).unwrap());
        let occ = soft_foreground(&pts, &ssm.surface, [RES; 3], spacing, 1.0).unwrap();
        let (mut i, mut un) = (0.0, 0.0);
        for (a, b) in occ.iter().zip(&fg) {
            i += a * b;
            un += a + b - a * b;
        }
        1.0 - i / un
    };
    let steps = FdSteps::for_model(ssm, spacing).to_vec();
    let g_tau: Vec<f64> = (0..tau.len())
        .map(|j| {
            let (mut up, mut dn) = (tau.clone(), tau.clone());
            up[j] += steps[j];
            dn[j] -= steps[j];
            (iou(&up) - iou(&dn)) / (2.0 * steps[j])
        })
        .collect();
    let g_u: Vec<f64> = g_tau.iter().zip(&scales).map(|(a, b)| a * b).collect();

    // Manual backprop through the MLP.
    let delta3: Vec<f64> = g_u.iter().zip(&u).map(|(g, u)| g * (1.0 - u * u)).collect();
    let back = |delta: &[f64], w: &[f64], pre: &[f64], n_in: usize, n_out: usize| -> Vec<f64> {
        (0..n_in)
            .map(|i| dleaky(pre[i]) * (0..n_out).map(|j| delta[j] * w[i * n_out + j]).sum::<f64>())
            .collect()
    };
    let delta2 = back(&delta3, &w3, &a2, d2, d3);
    let delta1 = back(&delta2, &w2, &a1, d1, d2);
    let gz_shape: Vec<f64> = (0..d0).map(|i| (0..d1).map(|j| delta1[j] * w1[i * d1 + j]).sum()).collect();
    let outer = |x: &[f64], d: &[f64]| -> Vec<f64> { x.iter().flat_map(|a| d.iter().map(move |b| a * b)).collect() };
    let g_shape: Vec<(&str, Vec<f64>)> = vec![
        ("w1", outer(&z, &delta1)),
        ("b1", delta1.clone()),
        ("w2", outer(&h1, &delta2)),
        ("b2", delta2.clone()),
        ("w3", outer(&h2, &delta3)),
        ("b3", delta3.clone()),
    ];

    // Material branch: ∂L/∂x by hand, seeded into the network and simulator.
    let m = MATERIAL_EXTENT;
    let mut tape = Tape::new();
    let bm = s0.material_net.params.bind(&mut tape);
    let zv = tape.leaf(s0.latents[0].clone());
    let mu = s0.material_net.forward(&mut tape, &bm, zv).unwrap();
    let x = tape.linear_op(mu, s0.sim().clone()).unwrap();
    let d: Vec<f64> = tape.value(x).data().iter().zip(&data[0].coarse).map(|(a, b)| a - b).collect();
    let mut seed = d.iter().map(|v| 2.0 * v).collect::<Vec<_>>();
    for f in [1usize, 2, 4] {
        let mc = m / f;
        let inv = 1.0 / (f * f * f) as f64;
        let mut pooled = vec![0.0; mc * mc * mc];
        for zz in 0..m {
            for yy in 0..m {
                for xx in 0..m {
                    pooled[((zz / f) * mc + yy / f) * mc + xx / f] += inv * d[(zz * m + yy) * m + xx];
                }
            }
        }
        for zz in 0..m {
            for yy in 0..m {
                for xx in 0..m {
                    seed[(zz * m + yy) * m + xx] += 2.0 * inv * pooled[((zz / f) * mc + yy / f) * mc + xx / f];
                }
            }
        }
    }
    let grads = tape.backward_with(x, Tensor::new(vec![m; 3], seed).unwrap()).unwrap();
    let gz: Vec<f64> = grads
        .get(zv)
        .unwrap()
        .data()
        .iter()
        .zip(&gz_shape)
        .map(|(a, b)| a + b)
        .collect();

    // First Adam step from zero moments.
    let lr = s0.config.lr_pretrain.latent;
    let adam = |p: f64, g: f64| {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mh = ((1.0 - b1) * g) / (1.0 - b1);
        let vh = ((1.0 - b2) * g * g) / (1.0 - b2);
        p - lr * mh / (vh.sqrt() + eps)
    };
    let check = |name: &str, before: &[f64], after: &[f64], g: &[f64]| {
        for (k, ((&p0, &p1), &gk)) in before.iter().zip(after).zip(g).enumerate() {
            let expected = adam(p0, gk);
            // Rounding in near-zero gradients moves the first Adam step by
            // at most lr·|δg|/ε.
            assert!(
                (p1 - expected).abs() <= 1e-6 * lr,
                "{name}[{k}]: {p1} vs {expected} (grad {gk})"
            );
        }
    };
    let lib = s0.labeled_grads(&data, 0).unwrap().grads;
    let close = |name: &str, a: &[f64], b: &[f64]| {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (k, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= 1e-9 * scale, "{name} grad[{k}]: {x} vs {y}");
        }
    };
    close("z", &lib.latent, &gz);
    let flat_shape: Vec<f64> = g_shape.iter().flat_map(|(_, g)| g.iter().copied()).collect();
    close("shape", &lib.shape, &flat_shape);
    let flat_mat: Vec<f64> = (0..s0.material_net.params.len())
        .flat_map(|i| grads.get(bm.var(i)).unwrap().data().to_vec())
        .collect();
    close("material", &lib.material, &flat_mat);
    check("z", s0.latents[0].data(), s.latents[0].data(), &gz);
    for (name, g) in &g_shape {
        check(name, s0.shape_net.params.value(name).data(), s.shape_net.params.value(name).data(), g);
    }
    for (i, (name, p)) in s0.material_net.params.iter().enumerate() {
        let g = grads.get(bm.var(i)).unwrap();
        check(name, p.value.data(), s.material_net.params.value(name).data(), g.data());
    }
    assert_eq!(s.enhancer, s0.enhancer);
}

// ---------------------------------------------------------------- enhancer

/// Replaces sample `i`'s reference volume by the upsampled simulation of
/// its current material, so the identity enhancer is exact on it.
fn consistent_sample(s: &TrainState, data: &mut [TrainSample], i: usize) {
    let mu = s.material_net.infer(s.latents[i].data()).unwrap();
    let coarse = s.sim().apply(&mu);
    let mut vol = data[i].volume.clone();
    for k in 0..RES {
        let sl = SliceUpsample::new(MATERIAL_EXTENT, RES, k).unwrap().apply(&coarse);
        vol.data[k * RES * RES..(k + 1) * RES * RES].copy_from_slice(&sl);
    }
    data[i] = TrainSample::new(data[i].id.clone(), vol, data[i].labels.clone()).unwrap();
}

#[test]
fn identity_enhancer_on_consistent_sample_has_zero_loss() {
    let (mut data, s) = toy(1, 1);
    consistent_sample(&s, &mut data, 0);
    let out = s.enhancer_grads(&data, 0, 5).unwrap();
    assert!(out.losses.enhancer.unwrap() < 1e-22);
    let gmax = out.grads.enhancer.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    assert!(gmax < 1e-10, "{gmax}");
}

#[test]
fn enhancer_input_uses_ground_truth_labels() {
    let (data, mut s) = toy(1, 1);
    // Move the generated shape far from the truth so the two label sets differ.
    s.shape_net.params.get_mut("b3").unwrap().value.data_mut()[8 + 3] = 5.0;
    let k = 7;
    let input = s.enhancer_pretrain_input(&data, 0, k).unwrap();
    let gt = data[0].labels.as_ref().unwrap().slice(k);
    let ch: Vec<f64> = gt.iter().map(|&v| v as f64 / common::REGIONS as f64).collect();
    assert_eq!(&input.data()[RES * RES..2 * RES * RES], &ch[..]);
    let generated = s.labels_for(&s.shape_params(s.latents[0].data()).unwrap()).unwrap();
    assert_ne!(generated.slice(k), gt);
    assert!(input.data()[2 * RES * RES..].iter().all(|&v| v == k as f64 / RES as f64));
}

#[test]
fn enhancer_overfits_one_slice() {
    let (data, mut s) = toy(1, 1);
    let k = 8;
    let initial = s.enhancer_grads(&data, 0, k).unwrap().losses.enhancer.unwrap();
    let mut last = initial;
    for _ in 0..2000 {
        last = s.pretrain_enhancer_step(&data, 0, k).unwrap().enhancer.unwrap();
        if last < 1e-2 * initial {
            break;
        }
    }
    let fin = s.enhancer_grads(&data, 0, k).unwrap().losses.enhancer.unwrap();
    assert!(fin < 1e-3, "absolute MSE {fin}");
    assert!(fin < 0.1 * initial, "initial {initial}, final {fin} (last step {last})");
}

// ---------------------------------------------------------------- semi-supervised

fn pretrained(n: usize, labeled: usize) -> (Vec<TrainSample>, TrainState) {
    let (data, mut s) = toy(n, labeled);
    for _ in 0..10 {
        s.pretrain_epoch(&data).unwrap();
    }
    for _ in 0..10 {
        s.enhancer_epoch(&data).unwrap();
    }
    let prior = s.fit_latent_prior().unwrap();
    s.init_unlabeled(&prior).unwrap();
    (data, s)
}

#[test]
fn semi_supervised_needs_prior_for_unlabeled() {
    let (data, mut s) = toy(3, 2);
    assert!(s.semi_supervised_epoch(&data).is_err());
}

#[test]
fn no_unlabeled_reduces_to_supervised_epoch() {
    let (data, s) = pretrained(3, 3);
    let (mut a, mut b) = (s.clone(), s);
    for _ in 0..2 {
        let ra = a.semi_supervised_epoch(&data).unwrap();
        let rb = b.supervised_epoch(&data).unwrap();
        assert_eq!(ra, rb);
    }
    assert_eq!(a, b);
}

#[test]
fn frozen_enhancer_is_bitwise_unchanged() {
    let (data, mut s) = pretrained(4, 2);
    s.config.freeze_enhancer = true;
    let before = s.enhancer.clone();
    let other = (s.shape_net.clone(), s.latents.clone());
    s.semi_supervised_epoch(&data).unwrap();
    assert_eq!(s.enhancer, before);
    assert_ne!((s.shape_net.clone(), s.latents.clone()), other);
}

#[test]
fn unlabeled_latents_come_from_prior() {
    let (data, s) = pretrained(4, 2);
    let prior = s.fit_latent_prior().unwrap();
    for i in 2..4 {
        let expected = prior.sample(&mut stream(s.config.seed, "latent/unlabeled", i as u64));
        assert_eq!(s.latents[i].data(), &expected[..]);
    }
    assert_eq!(s.labeled(), &[true, true, false, false]);
    assert_eq!(data.len(), s.num_samples());
}

#[test]
fn sixty_epoch_toy_run_reduces_unlabeled_loss() {
    let (data, mut s) = pretrained(12, 4);
    let k = RES / 2;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let initial = mean(s.unlabeled_losses(&data, k).unwrap());
    let mut rows = Vec::new();
    for _ in 0..s.config.schedule.total() {
        rows.push(s.semi_supervised_epoch(&data).unwrap());
    }
    let fin = mean(s.unlabeled_losses(&data, k).unwrap());
    assert!(fin < initial, "initial {initial}, final {fin}");
    assert_eq!(rows[0].lr_unlabeled, s.config.lr_unlabeled);
    assert_eq!(rows[45].lr_unlabeled, s.config.lr_unlabeled.scaled(0.5));
    assert!(rows.iter().all(|r| r.loss_unlabeled.is_some() && r.loss_iou.is_some()));
}

#[test]
fn metrics_csv_has_one_row_per_epoch() {
    let (data, mut s) = toy(2, 2);
    let rows = vec![s.pretrain_epoch(&data).unwrap(), s.enhancer_epoch(&data).unwrap()];
    let csv = metrics_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,pretrain_params,"));
    assert!(lines[2].starts_with("0,pretrain_enhancer,,,"));
    let n_cols = METRICS_HEADER.split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == n_cols));
}

// ---------------------------------------------------------------- sampling

#[test]
fn sampling_is_deterministic_and_clamped() {
    let (_, s) = pretrained(4, 4);
    let prior = s.fit_latent_prior().unwrap();
    assert!(sample_dataset(&s, &prior, 0, 1).unwrap().is_empty());
    let a = sample_dataset(&s, &prior, 3, 11).unwrap();
    let b = sample_dataset(&s, &prior, 3, 11).unwrap();
    assert_eq!(a, b);
    for syn in &a {
        for (j, &bj) in syn.tau.b.iter().enumerate() {
            assert!(bj.abs() <= s.ssm.clamp_limit(j) + 1e-12);
        }
        assert_eq!(syn.volume.extents, [RES; 3]);
        assert!(syn.volume.data.iter().all(|v| v.is_finite()));
        assert!(syn.labels.count(1) > 0);
    }
    let c = sample_dataset(&s, &prior, 3, 12).unwrap();
    assert_ne!(a[0].volume, c[0].volume);
}

#[test]
fn twenty_samples_at_32_cubed_within_budget() {
    let data = common::dataset("siteA", 32, 2, 2, 3);
    let ssm = common::model("siteA", 32, 20, 8);
    let mut cfg = GloConfig::new(32, 56.0);
    cfg.n_modes = 8;
    let s = TrainState::new(cfg, ssm, &data).unwrap();
    let prior = s.fit_latent_prior().unwrap();
    let t = Instant::now();
    let out = sample_dataset(&s, &prior, 20, 5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert_eq!(out.len(), 20);
    assert!(secs < 60.0, "{secs:.1} s");
}

#[test]
fn checkpoint_round_trip() {
    let (data, mut s) = toy(3, 2);
    s.pretrain_epoch(&data).unwrap();
    let mut c = Container::new();
    s.export(&mut c);
    let bytes = c.to_bytes();
    let (_, mut fresh) = toy(3, 2);
    fresh.import(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(fresh.latents, s.latents);
    assert_eq!(fresh.shape_net.params.values_flat(), s.shape_net.params.values_flat());
    assert_eq!(fresh.material_net.params.values_flat(), s.material_net.params.values_flat());
    assert_eq!(fresh.enhancer.params.values_flat(), s.enhancer.params.values_flat());
    let (_, mut wrong) = toy(3, 1);
    assert!(wrong.import(&c).is_err());
}
