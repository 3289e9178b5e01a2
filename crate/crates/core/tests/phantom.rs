use std::collections::BTreeSet;
use std::time::Instant;

use fedsim::phantom::{
    draw_sample, generate_family, generate_sample, load_sample, split, Draw, Manifest, PhantomFamily, RenderSpec,
    Split,
};
use fedsim::rng::stream;
use fedsim::ssm::Surface;

fn small_spec() -> RenderSpec {
    RenderSpec::new(16)
}

#[test]
fn zero_variation_gives_base_geometry() {
    let f = PhantomFamily::preset("siteA", 7).unwrap().without_variation();
    let s = generate_sample(&f, small_spec(), 3, 0).unwrap();
    let base = Draw::base(&f);
    assert_eq!(s.draw, base);
    assert_eq!(s.points, base.points(f.grid));
    for r in 1..=7 {
        assert!(s.labels.count(r) > 0, "region {r} empty");
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let f = PhantomFamily::preset("siteB", 7).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_family(&f, 3, RenderSpec::new(24), 11, a.path()).unwrap();
    let mb = generate_family(&f, 3, RenderSpec::new(24), 11, b.path()).unwrap();
    assert_eq!(ma, mb);
    for e in &ma.entries {
        for name in [Some(&e.volume), e.labels.as_ref()].into_iter().flatten() {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name}");
        }
    }
    let text_a = std::fs::read(a.path().join("manifest.tsv")).unwrap();
    assert_eq!(text_a, std::fs::read(b.path().join("manifest.tsv")).unwrap());
}

#[test]
fn manifest_and_samples_round_trip() {
    let f = PhantomFamily::preset("siteC", 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = generate_family(&f, 2, small_spec(), 4, dir.path()).unwrap();
    let back = Manifest::read(&dir.path().join("manifest.tsv")).unwrap();
    assert_eq!(back, m);
    let direct = generate_sample(&f, small_spec(), 4, 1).unwrap();
    let loaded = load_sample(dir.path(), &m.entries[1]).unwrap();
    assert_eq!(loaded.volume, direct.volume);
    assert_eq!(loaded.labels.unwrap(), direct.labels);
    assert_eq!(loaded.points.unwrap(), direct.points);
}

fn fake_manifest(n: usize) -> Manifest {
    let text: String = (0..n)
        .map(|i| format!("s{i:02}\ts{i:02}.vol.fsct\ts{i:02}.lab.fsct\ttrain\t1\n"))
        .collect();
    Manifest::parse(&format!(
        "# fedsim manifest v1\nfamily\tsiteA\tseed\t1\tres\t32\tfov\t56\tregions\t7\nid\tvolume\tlabels\tsplit\tlabeled\n{text}"
    ))
    .unwrap()
}

#[test]
fn split_sizes_and_labels() {
    let m = fake_manifest(20);
    let s = split(&m, [12, 4, 4], 4, 9).unwrap();
    assert_eq!(s.in_split(Split::Train).count(), 12);
    assert_eq!(s.num_labeled(Split::Train), 4);
    assert_eq!(s.num_labeled(Split::Val), 4);
    assert_eq!(s.num_labeled(Split::Test), 4);
    let ids = |sp| s.in_split(sp).map(|e| e.id.clone()).collect::<BTreeSet<_>>();
    let (tr, va, te) = (ids(Split::Train), ids(Split::Val), ids(Split::Test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    assert_eq!(tr.len() + va.len() + te.len(), 20);

    let full = split(&m, [12, 4, 4], 12, 9).unwrap();
    assert_eq!(full.num_labeled(Split::Train), 12);
    // Same seed, same assignment.
    assert_eq!(split(&m, [12, 4, 4], 4, 9).unwrap(), s);
    assert_ne!(split(&m, [12, 4, 4], 4, 10).unwrap(), s);

    assert!(split(&m, [12, 5, 4], 4, 9).is_err());
    assert!(split(&m, [4, 4, 4], 5, 9).is_err());
    let round = Manifest::parse(&s.to_text()).unwrap();
    assert_eq!(round, s);
}

#[test]
fn manifest_rejects_unlabeled_test_entries() {
    let m = fake_manifest(3);
    let mut text = m.to_text();
    text = text.replace("s02.lab.fsct\ttrain\t1", "-\ttest\t0");
    assert!(Manifest::parse(&text).is_err());
}

fn mesh_volume(points: &[f64], surface: &Surface, region: u8) -> f64 {
    surface
        .faces
        .iter()
        .zip(&surface.face_region)
        .filter(|(_, &r)| r == region)
        .map(|(f, _)| {
            let p = |i: u32| &points[3 * i as usize..3 * i as usize + 3];
            let (a, b, c) = (p(f[0]), p(f[1]), p(f[2]));
            (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0]))
                / 6.0
        })
        .sum()
}

#[test]
fn region_fractions_follow_the_family() {
    // Reference: exclusive region volumes of 3000 accepted draws from the
    // closed-form mesh volume. Test: voxel fractions of 100 generated labels.
    let f = PhantomFamily::preset("siteA", 7).unwrap();
    let res = 40;
    let spacing = f.fov / res as f64;
    let surface = f.surface();
    let total = (f.fov / spacing).powi(3);
    let reference = |d: &Draw| -> Vec<f64> {
        let pts = d.points(f.grid);
        let v: Vec<f64> = (1..=7).map(|r| mesh_volume(&pts, &surface, r) / spacing.powi(3)).collect();
        (0..7).map(|r| (v[r] - v.get(r + 1).copied().unwrap_or(0.0)) / total).collect()
    };
    let mut rng = stream(1, "reference", 0);
    let mut refs = Vec::new();
    while refs.len() < 3000 {
        let d = Draw::random(&f, &mut rng);
        if d.is_valid(f.grid, f.fov, spacing) {
            refs.push(reference(&d));
        }
    }
    let mut rng = stream(2, "draws", 0);
    let fracs: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let (_, _, labels) = draw_sample(&f, res, &mut rng).unwrap();
            (1..=7u8).map(|r| labels.count(r) as f64 / labels.len() as f64).collect()
        })
        .collect();
    for r in 0..7 {
        let mu = refs.iter().map(|v| v[r]).sum::<f64>() / refs.len() as f64;
        let sd = (refs.iter().map(|v| (v[r] - mu).powi(2)).sum::<f64>() / (refs.len() - 1) as f64).sqrt();
        let got = fracs.iter().map(|v| v[r]).sum::<f64>() / fracs.len() as f64;
        let z = (got - mu) / (sd / (fracs.len() as f64).sqrt());
        println!("region {}: voxel fraction {got:.5}, expected {mu:.5} ± {sd:.5}, z = {z:.2}", r + 1);
        assert!(z.abs() < 3.0, "region {} fraction off by {z:.2}σ", r + 1);
    }
}

#[test]
fn twenty_samples_at_32_within_budget() {
    let f = PhantomFamily::preset("siteA", 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let m = generate_family(&f, 20, RenderSpec::new(32), 7, dir.path()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    println!("generated 20 samples at 32³ in {secs:.1} s");
    assert_eq!(m.entries.len(), 20);
    assert!(secs < 120.0);
}
