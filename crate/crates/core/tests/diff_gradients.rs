use fedsim::diff::check::{central_diff, rel_err};
use fedsim::diff::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks d/d(input k) of `Σ w ⊙ op(inputs)` against central differences.
fn check_op(
    inputs: Vec<Tensor>,
    op: impl Fn(&mut Tape, &[Var]) -> Var,
    tol: f64,
    seed: u64,
) -> f64 {
    let n = inputs.len();
    check_inputs(inputs, op, tol, seed, n)
}

fn check_inputs(
    inputs: Vec<Tensor>,
    op: impl Fn(&mut Tape, &[Var]) -> Var,
    tol: f64,
    seed: u64,
    n_checked: usize,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
        let y = op(&mut t, &vars);
        t.value(y).len()
    };
    let weights: Vec<f64> = (0..probe).map(|_| rng.random_range(-1.0..1.0)).collect();

    let eval = |xs: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let y = op(&mut t, &vars);
        let s = t.weighted_sum(y, weights.clone()).unwrap();
        let g = t.backward(s).unwrap();
        let grads = vars
            .iter()
            .zip(xs)
            .map(|(&v, x)| g.get_or_zeros(v, x.shape()))
            .collect();
        (t.value(s).item(), grads)
    };

    let (_, analytic) = eval(&inputs);
    let mut worst: f64 = 0.0;
    for k in 0..n_checked {
        let n = inputs[k].len();
        let coords: Vec<usize> = if n <= 12 {
            (0..n).collect()
        } else {
            (0..12).map(|_| rng.random_range(0..n)).collect()
        };
        for &i in &coords {
            let mut f = |x: &[f64]| {
                let mut xs = inputs.clone();
                xs[k] = Tensor::new(inputs[k].shape().to_vec(), x.to_vec()).unwrap();
                eval(&xs).0
            };
            let fd = central_diff(&mut f, inputs[k].data(), i, 1e-5);
            let e = rel_err(analytic[k].data()[i], fd, 1e-6);
            worst = worst.max(e);
        }
    }
    assert!(worst < tol, "max rel err {worst} >= {tol}");
    worst
}

#[test]
fn matmul_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[5, 4], &mut rng);
    let b = random(&[4, 3], &mut rng);
    check_op(vec![a, b], |t, v| t.matmul(v[0], v[1]).unwrap(), 1e-6, 11);
}

#[test]
fn row_bias_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 4], &mut rng);
    let b = random(&[4], &mut rng);
    check_op(vec![x, b], |t, v| t.add_row_bias(v[0], v[1]).unwrap(), 1e-6, 12);
}

#[test]
fn conv3d_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 4, 3], &mut rng);
    let w = random(&[2, 2, 3, 3, 3], &mut rng);
    let b = random(&[2], &mut rng);
    check_op(
        vec![x, w, b],
        |t, v| t.conv3d(v[0], v[1], Some(v[2])).unwrap(),
        1e-4,
        13,
    );
}

#[test]
fn conv2d_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[3, 5, 4], &mut rng);
    let w = random(&[2, 3, 3, 3], &mut rng);
    let b = random(&[2], &mut rng);
    check_op(
        vec![x, w, b],
        |t, v| t.conv2d(v[0], v[1], Some(v[2])).unwrap(),
        1e-4,
        14,
    );
}

#[test]
fn upsample_and_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 2, 1, 2], &mut rng);
    check_op(vec![x.clone()], |t, v| t.upsample_nn(v[0], 2).unwrap(), 1e-6, 15);
    check_op(vec![x], |t, v| t.upsample_nn(v[0], 4).unwrap(), 1e-6, 16);
    let y = random(&[2, 4, 2, 4], &mut rng);
    check_op(vec![y], |t, v| t.avg_pool(v[0], [2, 2, 2]).unwrap(), 1e-6, 17);
}

#[test]
fn activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // keep clear of the kinks at zero
    let x = random(&[3, 7], &mut rng).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    check_op(vec![x.clone()], |t, v| t.leaky_relu(v[0]), 1e-6, 18);
    check_op(vec![x.clone()], |t, v| t.relu(v[0]), 1e-6, 19);
    check_op(vec![x.clone()], |t, v| t.tanh(v[0]), 1e-6, 20);
    check_op(vec![x], |t, v| t.sigmoid(v[0]), 1e-6, 21);
}

#[test]
fn batchnorm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[3, 2, 2, 2], &mut rng);
    let g = random(&[3], &mut rng);
    let b = random(&[3], &mut rng);
    check_op(
        vec![x.clone(), g.clone(), b.clone()],
        |t, v| t.batchnorm(v[0], v[1], v[2], None).unwrap().0,
        1e-6,
        22,
    );
    let rm = [0.1, -0.2, 0.3];
    let rv = [1.5, 0.7, 2.0];
    check_op(
        vec![x, g, b],
        |t, v| t.batchnorm(v[0], v[1], v[2], Some((&rm, &rv))).unwrap().0,
        1e-6,
        23,
    );
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(&[4, 3], &mut rng);
    let b = random(&[4, 3], &mut rng);
    check_op(vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap(), 1e-6, 24);
    check_op(vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap(), 1e-6, 25);
    check_op(vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap(), 1e-6, 26);
    check_op(vec![a.clone()], |t, v| t.affine(v[0], -1.7, 0.3), 1e-6, 27);
    check_op(vec![a.clone()], |t, v| t.sum_squares(v[0]), 1e-6, 28);
    check_op(vec![a.clone()], |t, v| t.sum(v[0]), 1e-6, 29);
    check_op(
        vec![a.clone(), b],
        |t, v| t.concat(&[v[0], v[1]]).unwrap(),
        1e-6,
        30,
    );
    check_op(vec![a], |t, v| t.reshape(v[0], &[2, 6]).unwrap(), 1e-6, 31);
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random(&[20], &mut rng).map(|v| 0.5 + 0.45 * v);
    let y = Tensor::new(vec![20], (0..20).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
    check_inputs(vec![p, y.clone()], |t, v| t.soft_iou(v[0], v[1]).unwrap(), 1e-6, 32, 1);
    let l = random(&[20], &mut rng).map(|v| 3.0 * v);
    check_inputs(vec![l, y], |t, v| t.bce_with_logits(v[0], v[1]).unwrap(), 1e-6, 33, 1);
}

#[test]
fn chain_matches_jacobian_product() {
    // y = tanh(A x), z = Σ y² for a 2×2 example, Jacobian written out by hand.
    let a = [0.5, -1.0, 0.25, 2.0];
    let x = [0.3, -0.4];
    let mut t = Tape::new();
    let av = t.leaf(Tensor::new(vec![2, 2], a.to_vec()).unwrap());
    let xv = t.leaf(Tensor::new(vec![2, 1], x.to_vec()).unwrap());
    let u = t.matmul(av, xv).unwrap();
    let y = t.tanh(u);
    let z = t.sum_squares(y);
    let g = t.backward(z).unwrap();
    assert_eq!(g.visited(), t.num_records());
    assert_eq!(t.num_records(), 3);

    let u0 = a[0] * x[0] + a[1] * x[1];
    let u1 = a[2] * x[0] + a[3] * x[1];
    let (y0, y1) = (u0.tanh(), u1.tanh());
    // dz/dy = 2y, dy/du = 1 − y², du/dx = A
    let dz_du = [2.0 * y0 * (1.0 - y0 * y0), 2.0 * y1 * (1.0 - y1 * y1)];
    let dz_dx = [
        dz_du[0] * a[0] + dz_du[1] * a[2],
        dz_du[0] * a[1] + dz_du[1] * a[3],
    ];
    let got = g.get(xv).unwrap().data();
    assert!((got[0] - dz_dx[0]).abs() < 1e-14);
    assert!((got[1] - dz_dx[1]).abs() < 1e-14);
}

#[test]
fn inference_tape_records_nothing_and_clear_frees() {
    let mut t = Tape::inference();
    let a = t.leaf(Tensor::filled(&[2, 2], 1.0));
    let b = t.tanh(a);
    let _ = t.sum(b);
    assert_eq!(t.num_records(), 0);

    let mut t = Tape::new();
    let a = t.leaf(Tensor::filled(&[2, 2], 1.0));
    let _ = t.relu(a);
    assert_eq!(t.num_records(), 1);
    t.clear();
    assert_eq!(t.num_records(), 0);
    assert_eq!(t.num_values(), 0);
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&[3, 6, 6, 6], &mut rng);
    let w = random(&[4, 3, 3, 3, 3], &mut rng);
    let run = || {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let wv = t.leaf(w.clone());
        let y = t.conv3d(xv, wv, None).unwrap();
        t.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
    fedsim::par::set_enabled(false);
    let seq = run();
    fedsim::par::set_enabled(true);
    assert_eq!(seq, run());
}
