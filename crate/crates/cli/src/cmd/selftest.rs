use std::time::Duration;

use clap::Args;
use fedsim::ct::{CtSim, FbpOperator, Geometry, Projector, Volume, Window};
use fedsim::diff::check::{central_diff, rel_err};
use fedsim::diff::{Adam, AdamConfig, LinearOp};
use fedsim::eval::{SegNet, SegSample, Target};
use fedsim::federated::{run_federation, ClientPhase, ServerOptimizer, ServerState, Site, Transport};
use fedsim::glo::{GloConfig, TrainSample, TrainState};
use fedsim::nets::{G_M_PREFIX, G_S_PREFIX};
use fedsim::phantom::{generate_sample, shape_library, PhantomFamily, RenderSpec};
use fedsim::ssm::{build_ssm, LabelVolume};
use serde::Serialize;

use crate::fail::{Failure, Kind, Outcome};

/// Run the built-in numerical checks.
#[derive(Args, Debug, Serialize)]
pub struct Selftest {}

/// Deterministic values in [-1, 1).
fn noise(n: usize, salt: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 * 12.9898 + salt * 78.233).sin() * 43758.5453).fract()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `|⟨Ax, y⟩ − ⟨x, Aᵀy⟩| / (‖Ax‖‖y‖)`.
fn adjoint_gap(op: &dyn LinearOp) -> f64 {
    let x = noise(op.input_shape().iter().product(), 1.0);
    let y = noise(op.output_shape().iter().product(), 2.0);
    let ax = op.apply(&x);
    (dot(&ax, &y) - dot(&x, &op.adjoint(&y))).abs() / (norm(&ax) * norm(&y))
}

fn segnet_grad_error() -> fedsim::Result<f64> {
    let n = 4;
    let v = Volume::from_vec([n; 3], 1.0, noise(n * n * n, 3.0))?;
    let mut l = LabelVolume::zeros([n; 3]);
    for (d, x) in l.data.iter_mut().zip(noise(n * n * n, 4.0)) {
        *d = (x > 0.0) as u8;
    }
    let s = SegSample::new("st", v, &l, Target::Foreground)?;
    let net = SegNet::new(5);
    let (_, g) = net.loss_and_grad(&s)?;
    let x0 = net.params.values_flat();
    let mut f = |x: &[f64]| {
        let mut m = net.clone();
        let mut off = 0;
        for (_, p) in m.params.iter_mut() {
            let len = p.value.len();
            p.value.data_mut().copy_from_slice(&x[off..off + len]);
            off += len;
        }
        m.loss_and_grad(&s).map(|r| r.0).unwrap_or(f64::NAN)
    };
    let mut worst = 0.0f64;
    for i in (0..x0.len()).step_by(97) {
        worst = worst.max(rel_err(g[i], central_diff(&mut f, &x0, i, 1e-6), 1e-6));
    }
    Ok(worst)
}

/// A one-site, one-round federation against the same step taken locally;
/// returns the largest absolute parameter difference.
fn federation_gap() -> fedsim::Result<f64> {
    let res = 16;
    let family = PhantomFamily::preset("siteA", 7)?;
    let model = build_ssm(&shape_library(&family, 12, res, 99)?, 6, family.surface())?;
    let data: Vec<TrainSample> = (0..2)
        .map(|i| {
            let s = generate_sample(&family, RenderSpec::new(res), 7, i)?;
            TrainSample::new(s.id, s.volume, Some(s.labels))
        })
        .collect::<fedsim::Result<_>>()?;
    let mut cfg = GloConfig::new(res, family.fov);
    cfg.n_modes = 6;
    cfg.material_widths = [8, 4];
    cfg.enhancer_width = 4;
    let state = TrainState::new(cfg, model, &data)?;
    let mut twin = state.clone();
    let mut sites = vec![Site::new(1, state, data.clone(), ClientPhase::Pretrain)?];
    let lr = twin.config.lr_pretrain;
    let mut server = ServerState::new(
        twin.shape_net.params.clone(),
        twin.material_net.params.clone(),
        &[1],
        ServerOptimizer::Adam,
        lr.shape,
        lr.material,
    )?;
    run_federation(&mut server, &mut sites, 1, &Transport::Inproc, Duration::from_secs(60))?;

    let out = twin.labeled_grads(&data, sites[0].sample_for_round(0))?;
    let mut adam = Adam::new(AdamConfig::default());
    twin.shape_net.params.set_grads_flat(&out.grads.shape)?;
    twin.material_net.params.set_grads_flat(&out.grads.material)?;
    adam.step(G_S_PREFIX, &mut twin.shape_net.params, lr.shape);
    adam.step(G_M_PREFIX, &mut twin.material_net.params, lr.material);
    let a = [server.shape.values_flat(), server.material.values_flat()].concat();
    let b = [twin.shape_net.params.values_flat(), twin.material_net.params.values_flat()].concat();
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

struct Check {
    name: &'static str,
    tol: f64,
    run: fn() -> fedsim::Result<f64>,
}

const CHECKS: &[Check] = &[
    Check {
        name: "adjoint/parallel",
        tol: 1e-12,
        run: || Ok(adjoint_gap(&Projector::new(Geometry::parallel2d(12, 1.0, 9))?)),
    },
    Check {
        name: "adjoint/cone",
        tol: 1e-12,
        run: || Ok(adjoint_gap(&Projector::new(Geometry::cone_beam(8, 1.0, 6))?)),
    },
    Check {
        name: "adjoint/fbp",
        tol: 1e-12,
        run: || Ok(adjoint_gap(&FbpOperator::new(Geometry::parallel2d(12, 1.0, 9), Window::Hann)?)),
    },
    Check {
        name: "adjoint/ct-sim",
        tol: 1e-12,
        run: || Ok(adjoint_gap(&CtSim::new(8, 16, 56.0, 12, Window::RamLak)?)),
    },
    Check {
        name: "gradient/segnet",
        tol: 1e-4,
        run: segnet_grad_error,
    },
    Check {
        name: "federated/one-site",
        tol: 0.0,
        run: federation_gap,
    },
];

/// Prints one line per check; identical runs print identical text.
pub fn selftest(_: &Selftest) -> Outcome<()> {
    let mut failed = Vec::new();
    for c in CHECKS {
        let (ok, detail) = match (c.run)() {
            Ok(v) => (v <= c.tol, format!("{v:.3e} (tol {:.0e})", c.tol)),
            Err(e) => (false, format!("error: {e}")),
        };
        println!("{:<20} {} {detail}", c.name, if ok { "pass" } else { "FAIL" });
        if !ok {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(Kind::Selftest, format!("failed checks: {}", failed.join(", "))))
    }
}
