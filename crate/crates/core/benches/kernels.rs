//! Hot kernels on the rayon pool and as plain loops. Both paths produce
//! identical output; only wall time differs. Build with
//! `--no-default-features` to drop rayon entirely.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedsim::ct::{fbp_reconstruct, Geometry, Projector, Sinogram, Window};
use fedsim::diff::{ops, Tensor};
use fedsim::par;
use fedsim::phantom::{generate_family, PhantomFamily, RenderSpec};
use fedsim::rng::stream;
use rand::Rng;

fn uniform(n: usize, label: &str) -> Vec<f64> {
    let mut rng = stream(0, label, 0);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

const MODES: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn projector(c: &mut Criterion) {
    let p = Projector::new(Geometry::cone_beam(32, 1.0, 32)).expect("geometry");
    let x = uniform(32 * 32 * 32, "bench/vol");
    let y = p.forward(&x);
    let mut g = c.benchmark_group("cone32");
    for (name, on) in MODES {
        par::set_enabled(on);
        g.bench_function(BenchmarkId::new("forward", name), |b| b.iter(|| p.forward(black_box(&x))));
        g.bench_function(BenchmarkId::new("adjoint", name), |b| b.iter(|| p.adjoint(black_box(&y))));
    }
    g.finish();
    par::set_enabled(true);
}

fn fbp(c: &mut Criterion) {
    let geom = Geometry::parallel2d(128, 1.0, 180);
    let mut sino = Sinogram::zeros(geom.sinogram_shape());
    sino.data = uniform(geom.num_rays(), "bench/sino");
    let mut g = c.benchmark_group("fbp128");
    for (name, on) in MODES {
        par::set_enabled(on);
        g.bench_function(name, |b| b.iter(|| fbp_reconstruct(black_box(&sino), &geom, Window::RamLak).expect("fbp")));
    }
    g.finish();
    par::set_enabled(true);
}

fn conv(c: &mut Criterion) {
    let x = Tensor::new(vec![8, 16, 16, 16], uniform(8 * 4096, "bench/x")).expect("shape");
    let w = Tensor::new(vec![16, 8, 3, 3, 3], uniform(16 * 8 * 27, "bench/w")).expect("shape");
    let mut g = c.benchmark_group("conv3d_8to16_16cubed");
    for (name, on) in MODES {
        par::set_enabled(on);
        g.bench_function(name, |b| b.iter(|| ops::conv3d(black_box(&x), &w, None).expect("conv")));
    }
    g.finish();
    par::set_enabled(true);
}

fn phantoms(c: &mut Criterion) {
    let f = PhantomFamily::preset("siteA", 7).expect("preset");
    let dir = tempfile::tempdir().expect("tempdir");
    let mut g = c.benchmark_group("phantoms_4x16");
    g.sample_size(10);
    for (name, on) in MODES {
        par::set_enabled(on);
        g.bench_function(name, |b| b.iter(|| generate_family(&f, 4, RenderSpec::new(16), 1, dir.path()).expect("generate")));
    }
    g.finish();
    par::set_enabled(true);
}

criterion_group!(benches, projector, fbp, conv, phantoms);
criterion_main!(benches);
