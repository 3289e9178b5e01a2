use crate::error::{shape_err, Result};

fn counts(pred: &[bool], gt: &[bool]) -> Result<(usize, usize, usize)> {
    if pred.len() != gt.len() {
        return Err(shape_err!("masks differ in size: {} vs {}", pred.len(), gt.len()));
    }
    let inter = pred.iter().zip(gt).filter(|(p, g)| **p && **g).count();
    let np = pred.iter().filter(|p| **p).count();
    let ng = gt.iter().filter(|g| **g).count();
    Ok((inter, np, ng))
}

/// `2|P∩G| / (|P|+|G|)`; two empty masks score 1.
pub fn dice(pred: &[bool], gt: &[bool]) -> Result<f64> {
    let (i, p, g) = counts(pred, gt)?;
    Ok(if p + g == 0 { 1.0 } else { 2.0 * i as f64 / (p + g) as f64 })
}

/// `|P∩G| / |P∪G|`; two empty masks score 1.
pub fn iou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    let (i, p, g) = counts(pred, gt)?;
    let u = p + g - i;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Binary view of a 0/1 mask.
pub fn to_bool(mask: &[f64]) -> Vec<bool> {
    mask.iter().map(|&v| v > 0.5).collect()
}
