use fedsim::diff::check::{central_diff, rel_err};
use fedsim::diff::{Adam, AdamConfig, Tape, Tensor};
use fedsim::fsct::Container;
use fedsim::nets::{
    enhancer_input, gen_material, gen_shape_params, Enhancer, MaterialNet, ShapeNet, ShapeRanges, ENH_PREFIX,
    G_M_PREFIX, G_S_PREFIX, LATENT_DIM, MU_MAX,
};
use fedsim::rng::stream;
use fedsim::ssm::{build_ssm, ShapeParams, SphereGrid, Surface};
use rand::Rng;
use rand_distr::StandardNormal;

fn latent(seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "z", 0);
    (0..LATENT_DIM).map(|_| rng.sample(StandardNormal)).collect()
}

fn toy_model() -> fedsim::ssm::ShapeModel {
    let grid = SphereGrid::new(4, 8);
    let mut rng = stream(1, "shapes", 0);
    let shapes: Vec<Vec<f64>> = (0..16)
        .map(|_| {
            grid.directions()
                .iter()
                .flat_map(|d| {
                    let r: [f64; 3] = [rng.random_range(8.0..12.0), 10.0, rng.random_range(8.0..12.0)];
                    [d[0] * r[0], d[1] * r[1], d[2] * r[2]]
                })
                .collect()
        })
        .collect();
    build_ssm(&shapes, 14, Surface::from_grid(grid, 1)).unwrap()
}

#[test]
fn shape_net_parameter_count() {
    let net = ShapeNet::new(21, &mut stream(0, "g_s", 0));
    assert_eq!(net.params.num_scalars(), 32 * 256 + 256 + 256 * 128 + 128 + 128 * 21 + 21);
    // The layer sizes sum to 44,053.
    assert_eq!(net.params.num_scalars(), 44_053);
}

#[test]
fn zero_shape_net_gives_mean_shape() {
    let model = toy_model();
    let net = ShapeNet::zeros(21);
    let ranges = ShapeRanges::for_model(&model, 14, 64.0);
    let tau = gen_shape_params(&net, &ranges, &latent(3), model.n_modes()).unwrap();
    assert_eq!(tau, ShapeParams::zeros(model.n_modes()));
    assert_eq!(model.synthesize(&tau), model.mean);
}

#[test]
fn generated_modes_respect_clamp() {
    let model = toy_model();
    let ranges = ShapeRanges::for_model(&model, 14, 64.0);
    for s in 0..20 {
        let mut net = ShapeNet::new(21, &mut stream(s, "g_s", 0));
        // Large weights saturate tanh.
        for (_, p) in net.params.iter_mut() {
            for v in p.value.data_mut() {
                *v *= 50.0;
            }
        }
        let tau = gen_shape_params(&net, &ranges, &latent(s), model.n_modes()).unwrap();
        for (j, b) in tau.b.iter().enumerate() {
            assert!(b.abs() <= model.clamp_limit(j));
        }
        assert_eq!(model.clamp(&tau.b), tau.b);
    }
}

#[test]
fn shape_net_gradients_match_differences() {
    let net = ShapeNet::new(21, &mut stream(4, "g_s", 0));
    let z = latent(5);
    let mut rng = stream(6, "pick", 0);
    for out in [0usize, 7, 13, 20] {
        let mut tape = Tape::new();
        let bound = net.params.bind(&mut tape);
        let zv = tape.leaf(Tensor::new(vec![1, 32], z.clone()).unwrap());
        let u = net.forward(&mut tape, &bound, zv).unwrap();
        let mut seed = Tensor::zeros(&[1, 21]);
        seed.data_mut()[out] = 1.0;
        let grads = tape.backward_with(u, seed).unwrap();
        for name in ["w1", "b1", "w2", "w3", "b3"] {
            let idx = net.params.index_of(name).unwrap();
            let g = grads.get(bound.var(idx)).unwrap();
            let i = rng.random_range(0..g.len());
            let base = net.params.value(name).data().to_vec();
            let mut f = |x: &[f64]| {
                let mut n = net.clone();
                n.params.get_mut(name).unwrap().value.data_mut().copy_from_slice(x);
                n.infer(&z).unwrap()[out]
            };
            let fd = central_diff(&mut f, &base, i, 1e-6);
            let err = rel_err(g.data()[i], fd, 1e-6);
            assert!(err < 1e-5, "output {out}, {name}[{i}]: {} vs {fd}", g.data()[i]);
        }
    }
}

#[test]
fn zero_material_net_is_mid_range() {
    let mut net = MaterialNet::new([8, 4], &mut stream(0, "g_m", 0));
    for (_, p) in net.params.iter_mut() {
        p.value.data_mut().fill(0.0);
    }
    let m = gen_material(&net, &latent(1)).unwrap();
    assert_eq!(m.len(), 16 * 16 * 16);
    assert!(m.iter().all(|&v| v == MU_MAX / 2.0));
}

#[test]
fn material_output_extent_and_range() {
    let net = MaterialNet::new([256, 128], &mut stream(2, "g_m", 0));
    let mut tape = Tape::inference();
    let bound = net.params.bind(&mut tape);
    let zv = tape.leaf(Tensor::from_vec(latent(2)));
    let m = net.forward(&mut tape, &bound, zv).unwrap();
    assert_eq!(tape.value(m).shape(), &[16, 16, 16]);
    assert!(tape.value(m).data().iter().all(|&v| (0.0..=MU_MAX).contains(&v)));
}

fn material_gradient_check(widths: [usize; 2]) {
    let net = MaterialNet::new(widths, &mut stream(7, "g_m", 0));
    let z = latent(8);
    let mut rng = stream(9, "pick", 0);
    let proj: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let bound = net.params.bind(&mut tape);
    let zv = tape.leaf(Tensor::from_vec(z.clone()));
    let m = net.forward(&mut tape, &bound, zv).unwrap();
    let loss = tape.weighted_sum(m, proj.clone()).unwrap();
    let grads = tape.backward(loss).unwrap();
    for name in ["conv1.w", "conv2.w", "conv3.w", "bn1.gamma", "conv3.b"] {
        let g = grads.get(bound.var(net.params.index_of(name).unwrap())).unwrap();
        let i = rng.random_range(0..g.len());
        let base = net.params.value(name).data().to_vec();
        let mut f = |x: &[f64]| {
            let mut n = net.clone();
            n.params.get_mut(name).unwrap().value.data_mut().copy_from_slice(x);
            n.infer(&z).unwrap().iter().zip(&proj).map(|(a, b)| a * b).sum()
        };
        let fd = central_diff(&mut f, &base, i, 1e-5);
        let err = rel_err(g.data()[i], fd, 1e-6);
        assert!(err < 1e-4, "{widths:?} {name}[{i}]: {} vs {fd}", g.data()[i]);
    }
    let gz = grads.get(zv).unwrap();
    let mut f = |x: &[f64]| net.infer(x).unwrap().iter().zip(&proj).map(|(a, b)| a * b).sum();
    let fd = central_diff(&mut f, &z, 3, 1e-5);
    assert!(rel_err(gz.data()[3], fd, 1e-6) < 1e-4);
}

#[test]
fn material_gradients_small_widths() {
    material_gradient_check([8, 4]);
}

#[test]
fn material_gradients_full_widths() {
    material_gradient_check([256, 128]);
}

fn smooth_slice(h: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "slice", 0);
    let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    (0..h * h)
        .map(|i| {
            let (y, x) = ((i / h) as f64 / h as f64, (i % h) as f64 / h as f64);
            0.02 * (1.0 + (6.0 * x * a + 4.0 * y * b).sin() * c)
        })
        .collect()
}

#[test]
fn identity_enhancer_passes_coarse_slice() {
    let enh = Enhancer::identity(32, &mut stream(0, "enh", 0));
    let h = 16;
    let coarse: Vec<f64> = smooth_slice(h, 1).iter().map(|v| v - 0.02).collect();
    let labels: Vec<f64> = (0..h * h).map(|i| (i % 3) as f64 / 2.0).collect();
    let out = enh.enhance_slice(&coarse, &labels, 5, h).unwrap();
    for (o, c) in out.iter().zip(&coarse) {
        assert!((o - c).abs() <= 1e-12 * c.abs().max(1e-3), "{o} vs {c}");
    }
    assert!(enh.enhance_slice(&coarse, &labels, h, h).is_err());
}

#[test]
fn slice_index_only_changes_constant_plane() {
    let h = 8;
    let coarse = smooth_slice(h, 2);
    let labels = vec![1.0; h * h];
    let a = enhancer_input(&coarse, &labels, 2, h).unwrap();
    let b = enhancer_input(&coarse, &labels, 6, h).unwrap();
    assert_eq!(a.data()[..2 * h * h], b.data()[..2 * h * h]);
    assert!(a.data()[2 * h * h..].iter().all(|&v| v == 0.25));
    assert!(b.data()[2 * h * h..].iter().all(|&v| v == 0.75));
}

#[test]
fn enhancer_gradients_match_differences() {
    let mut enh = Enhancer::identity(6, &mut stream(3, "enh", 0));
    // Move off the identity point so every layer carries signal.
    let mut rng = stream(4, "perturb", 0);
    for (_, p) in enh.params.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let h = 6;
    let input = enhancer_input(&smooth_slice(h, 5), &vec![0.5; h * h], 1, h).unwrap();
    let proj: Vec<f64> = (0..h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eval = |e: &Enhancer| {
        let mut tape = Tape::inference();
        let b = e.params.bind(&mut tape);
        let x = tape.leaf(input.clone());
        let y = e.forward(&mut tape, &b, x).unwrap();
        tape.value(y).data().iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut tape = Tape::new();
    let bound = enh.params.bind(&mut tape);
    let x = tape.leaf(input.clone());
    let y = enh.forward(&mut tape, &bound, x).unwrap();
    let loss = tape.weighted_sum(y, proj.clone()).unwrap();
    let grads = tape.backward(loss).unwrap();
    for name in ["conv1.w", "conv2.b", "conv3.w", "conv4.w", "conv4.b"] {
        let g = grads.get(bound.var(enh.params.index_of(name).unwrap())).unwrap();
        let i = rng.random_range(0..g.len());
        let base = enh.params.value(name).data().to_vec();
        let mut f = |xv: &[f64]| {
            let mut e = enh.clone();
            e.params.get_mut(name).unwrap().value.data_mut().copy_from_slice(xv);
            eval(&e)
        };
        let fd = central_diff(&mut f, &base, i, 1e-6);
        assert!(rel_err(g.data()[i], fd, 1e-6) < 1e-4, "{name}[{i}]: {} vs {fd}", g.data()[i]);
    }
}

#[test]
fn enhancer_overfits_one_slice() {
    let mut enh = Enhancer::identity(16, &mut stream(5, "enh", 0));
    let h = 16;
    let coarse = smooth_slice(h, 6);
    let labels: Vec<f64> = coarse.iter().map(|&v| (v > 0.02) as u8 as f64).collect();
    let target: Vec<f64> = coarse.iter().zip(&labels).map(|(c, l)| 1.5 * c + 0.01 * l + 0.005).collect();
    let input = enhancer_input(&coarse, &labels, 3, h).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    let mut first = None;
    let mut last = f64::INFINITY;
    for _ in 0..2000 {
        let mut tape = Tape::new();
        let bound = enh.params.bind(&mut tape);
        let x = tape.leaf(input.clone());
        let y = enh.forward(&mut tape, &bound, x).unwrap();
        let t = tape.leaf(Tensor::new(vec![1, h, h], target.clone()).unwrap());
        let d = tape.sub(y, t).unwrap();
        let loss = tape.sum_squares(d);
        let mse = tape.value(loss).item() / (h * h) as f64;
        first.get_or_insert(mse);
        last = mse;
        if mse < 1e-3 * first.unwrap() {
            break;
        }
        let grads = tape.backward(loss).unwrap();
        enh.params.zero_grad();
        enh.params.accumulate(&bound, &grads);
        adam.step(ENH_PREFIX, &mut enh.params, 1e-3);
    }
    assert!(last < 1e-3 * first.unwrap(), "mse {last} from {}", first.unwrap());
}

#[test]
fn checkpoints_round_trip() {
    let s = ShapeNet::new(21, &mut stream(1, "g_s", 0));
    let m = MaterialNet::new([8, 4], &mut stream(1, "g_m", 0));
    let e = Enhancer::identity(8, &mut stream(1, "enh", 0));
    let mut c = Container::new();
    s.params.export(G_S_PREFIX, &mut c);
    m.params.export(G_M_PREFIX, &mut c);
    e.params.export(ENH_PREFIX, &mut c);
    assert!(c.names().any(|n| n == "g_s.w1"));
    assert!(c.names().any(|n| n == "g_m.conv1.w"));
    assert!(c.names().any(|n| n == "enh.conv1.w"));
    let c = Container::from_bytes(&c.to_bytes()).unwrap();
    let mut s2 = ShapeNet::zeros(21);
    let mut m2 = MaterialNet::new([8, 4], &mut stream(9, "g_m", 0));
    let mut e2 = Enhancer::identity(8, &mut stream(9, "enh", 0));
    s2.params.import(G_S_PREFIX, &c).unwrap();
    m2.params.import(G_M_PREFIX, &c).unwrap();
    e2.params.import(ENH_PREFIX, &c).unwrap();
    assert_eq!(s2, s);
    assert_eq!(m2, m);
    assert_eq!(e2, e);
}
