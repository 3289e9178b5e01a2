use crate::diff::{ops, Tape, Var};
use crate::error::{shape_err, Result};

/// Pool factors of the multi-scale material term: full, half and quarter
/// resolution.
pub const MATERIAL_SCALES: [usize; 3] = [1, 2, 4];

/// Pool factors of the multi-scale slice term.
pub const SLICE_SCALES: [usize; 2] = [2, 4];

/// Soft IoU loss `1 − Σ p·y / Σ (p + y − p·y)`; zero when both are empty.
pub fn loss_iou(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(shape_err!("iou operands have {} and {} voxels", pred.len(), target.len()));
    }
    Ok(ops::soft_iou_loss(pred, target))
}

/// `‖a − b‖² + Σ_s ‖pool_s(a − b)‖²` over the scales in
/// [`MATERIAL_SCALES`], for `m³` cubes.
pub fn loss_material(a: &[f64], b: &[f64], m: usize) -> Result<f64> {
    if a.len() != m * m * m || b.len() != a.len() {
        return Err(shape_err!("material operands have {} and {} values, expected {m}³", a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut total = sq(&d);
    for f in MATERIAL_SCALES {
        total += sq(&crate::ct::block_average(&d, m, f));
    }
    Ok(total)
}

/// Tape form of [`loss_material`]; `x` and `target` are `[m, m, m]`.
pub fn loss_material_var(tape: &mut Tape, x: Var, target: Var) -> Result<Var> {
    let d = tape.sub(x, target)?;
    let shape = tape.value(d).shape().to_vec();
    let d4 = tape.reshape(d, &[1, shape[0], shape[1], shape[2]])?;
    let mut total = tape.sum_squares(d4);
    for f in MATERIAL_SCALES {
        let p = if f == 1 { d4 } else { tape.avg_pool(d4, [f; 3])? };
        let s = tape.sum_squares(p);
        total = tape.add(total, s)?;
    }
    Ok(total)
}

/// Mean squared error between two `[1, H, W]` slices plus the mean squared
/// error of their block averages at the factors in [`SLICE_SCALES`] that
/// divide `H` and `W`.
pub fn loss_slice_var(tape: &mut Tape, x: Var, target: Var) -> Result<Var> {
    let d = tape.sub(x, target)?;
    let shape = tape.value(d).shape().to_vec();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let d4 = tape.reshape(d, &[1, 1, h, w])?;
    let ss = tape.sum_squares(d4);
    let mut total = tape.affine(ss, 1.0 / (h * w) as f64, 0.0);
    for f in SLICE_SCALES {
        if h % f != 0 || w % f != 0 {
            continue;
        }
        let p = tape.avg_pool(d4, [1, f, f])?;
        let s = tape.sum_squares(p);
        let m = tape.affine(s, (f * f) as f64 / (h * w) as f64, 0.0);
        total = tape.add(total, m)?;
    }
    Ok(total)
}

/// Mean squared error of a slice pair, the reported enhancer loss.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}
