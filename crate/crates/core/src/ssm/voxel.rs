use super::Surface;
use crate::diff::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::fsct::Container;

/// Region ids per voxel, `0` is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    /// `[D, H, W]`
    pub extents: [usize; 3],
    pub data: Vec<u8>,
}

impl LabelVolume {
    pub fn zeros(extents: [usize; 3]) -> Self {
        LabelVolume {
            extents,
            data: vec![0; extents.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.extents[1] + y) * self.extents[2] + x
    }

    pub fn count(&self, region: u8) -> usize {
        self.data.iter().filter(|&&r| r == region).count()
    }

    /// `1.0` where the label is nonzero.
    pub fn foreground(&self) -> Vec<f64> {
        self.data.iter().map(|&r| (r > 0) as u8 as f64).collect()
    }

    /// `1.0` where the label equals `region`.
    pub fn mask(&self, region: u8) -> Vec<f64> {
        self.data.iter().map(|&r| (r == region) as u8 as f64).collect()
    }

    /// Axial slice `z` as a row-major `H × W` image.
    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.extents[1] * self.extents[2];
        &self.data[z * n..(z + 1) * n]
    }

    pub fn export(&self, name: &str, c: &mut Container) {
        c.push(
            name,
            Tensor::new(
                self.extents.to_vec(),
                self.data.iter().map(|&r| r as f64).collect(),
            )
            .expect("label extents match data"),
        );
    }

    pub fn import(name: &str, c: &Container) -> Result<Self> {
        let t = c.require(name)?;
        if t.rank() != 3 {
            return Err(shape_err!("{name}: expected rank 3, got {:?}", t.shape()));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(Error::Format(format!("{name}: invalid label {v}")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        let s = t.shape();
        Ok(LabelVolume {
            extents: [s[0], s[1], s[2]],
            data,
        })
    }
}

/// Per-region soft occupancies in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabels {
    pub extents: [usize; 3],
    /// `occupancy[r − 1]` holds region `r`.
    pub occupancy: Vec<Vec<f64>>,
}

impl SoftLabels {
    /// Occupancy of region `r` after higher regions take priority:
    /// `o_r · Π_{r' > r} (1 − o_r')`.
    pub fn exclusive(&self, region: u8) -> Vec<f64> {
        let r = region as usize;
        let mut out = self.occupancy[r - 1].clone();
        for higher in &self.occupancy[r..] {
            for (o, h) in out.iter_mut().zip(higher) {
                *o *= 1.0 - h;
            }
        }
        out
    }

    /// Labels of the voxels whose soft occupancy exceeds one half.
    pub fn harden(&self) -> LabelVolume {
        let mut out = LabelVolume::zeros(self.extents);
        for (r, occ) in self.occupancy.iter().enumerate() {
            for (l, &o) in out.data.iter_mut().zip(occ) {
                if o > 0.5 {
                    *l = r as u8 + 1;
                }
            }
        }
        out
    }
}

/// Crossings of the lines through voxel centres parallel to `axis`
/// (0 = x, 1 = y, 2 = z) with a closed triangle surface, in index units
/// along `axis`, sorted per line. Lines are indexed `c·n_b + b` over the two
/// remaining axes `b < c`.
///
/// Each triangle is projected onto the `(b, c)` plane and oriented
/// counter-clockwise; a sample on a shared edge belongs to exactly one
/// triangle by a top-left ownership rule, so lines through edges or vertices
/// are counted once.
struct Lines {
    n: [usize; 3],
    axis: usize,
    rows: Vec<Vec<f64>>,
}

impl Lines {
    fn new(idx: &[[f64; 3]], faces: &[[u32; 3]], n: [usize; 3], axis: usize) -> Self {
        let (b, c) = other_axes(axis);
        let mut rows = vec![Vec::new(); n[b] * n[c]];
        for f in faces {
            let mut p = [idx[f[0] as usize], idx[f[1] as usize], idx[f[2] as usize]];
            let area = cross2(p[0], p[1], p[2], b, c);
            if area == 0.0 {
                continue;
            }
            if area < 0.0 {
                p.swap(1, 2);
            }
            let area = area.abs();
            let lo_b = p.iter().map(|q| q[b]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let hi_b = p.iter().map(|q| q[b]).fold(f64::NEG_INFINITY, f64::max).floor();
            let lo_c = p.iter().map(|q| q[c]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let hi_c = p.iter().map(|q| q[c]).fold(f64::NEG_INFINITY, f64::max).floor();
            if hi_b < lo_b || hi_c < lo_c {
                continue;
            }
            let hi_b = hi_b.min(n[b] as f64 - 1.0);
            let hi_c = hi_c.min(n[c] as f64 - 1.0);
            let mut qc = lo_c;
            while qc <= hi_c {
                let mut qb = lo_b;
                while qb <= hi_b {
                    let w0 = edge(p[1], p[2], qb, qc, b, c);
                    let w1 = edge(p[2], p[0], qb, qc, b, c);
                    let w2 = edge(p[0], p[1], qb, qc, b, c);
                    if owns(w0, p[1], p[2], b, c) && owns(w1, p[2], p[0], b, c) && owns(w2, p[0], p[1], b, c) {
                        let t = (w0 * p[0][axis] + w1 * p[1][axis] + w2 * p[2][axis]) / area;
                        rows[qc as usize * n[b] + qb as usize].push(t);
                    }
                    qb += 1.0;
                }
                qc += 1.0;
            }
        }
        for r in &mut rows {
            r.sort_by(f64::total_cmp);
        }
        Lines { n, axis, rows }
    }

    /// Union of the inside intervals of several closed surfaces, as sorted
    /// boundary crossings.
    fn union(parts: &[Lines]) -> Lines {
        let first = &parts[0];
        let mut rows = Vec::with_capacity(first.rows.len());
        for i in 0..first.rows.len() {
            let mut iv: Vec<(f64, f64)> = parts
                .iter()
                .flat_map(|l| l.rows[i].chunks(2).filter(|c| c.len() == 2).map(|c| (c[0], c[1])))
                .collect();
            iv.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64)> = Vec::new();
            for (a, b) in iv {
                match merged.last_mut() {
                    Some(last) if a <= last.1 => last.1 = last.1.max(b),
                    _ => merged.push((a, b)),
                }
            }
            rows.push(merged.into_iter().flat_map(|(a, b)| [a, b]).collect());
        }
        Lines {
            n: first.n,
            axis: first.axis,
            rows,
        }
    }

    /// Visits every voxel with its signed distance (index units, positive
    /// inside) to the nearest crossing on its line; `None` when the line has
    /// no crossings.
    fn for_each(&self, mut f: impl FnMut(usize, Option<f64>)) {
        let (b, c) = other_axes(self.axis);
        let stride = [1, self.n[0], self.n[0] * self.n[1]];
        for ic in 0..self.n[c] {
            for ib in 0..self.n[b] {
                let row = &self.rows[ic * self.n[b] + ib];
                let base = ib * stride[b] + ic * stride[c];
                let mut k = 0;
                for ia in 0..self.n[self.axis] {
                    let x = ia as f64;
                    while k < row.len() && row[k] < x {
                        k += 1;
                    }
                    let v = if row.is_empty() {
                        None
                    } else {
                        let mut d = f64::INFINITY;
                        if k > 0 {
                            d = x - row[k - 1];
                        }
                        if k < row.len() {
                            d = d.min(row[k] - x);
                        }
                        Some(if k % 2 == 1 { d } else { -d })
                    };
                    f(base + ia * stride[self.axis], v);
                }
            }
        }
    }
}

fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

#[inline]
fn cross2(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3], b: usize, c: usize) -> f64 {
    (p1[b] - p0[b]) * (p2[c] - p0[c]) - (p1[c] - p0[c]) * (p2[b] - p0[b])
}

#[inline]
fn edge(a: [f64; 3], bp: [f64; 3], qb: f64, qc: f64, b: usize, c: usize) -> f64 {
    (bp[b] - a[b]) * (qc - a[c]) - (bp[c] - a[c]) * (qb - a[b])
}

/// Strictly inside, or exactly on an edge this triangle owns.
#[inline]
fn owns(w: f64, a: [f64; 3], bp: [f64; 3], b: usize, c: usize) -> bool {
    if w != 0.0 {
        return w > 0.0;
    }
    let (db, dc) = (bp[b] - a[b], bp[c] - a[c]);
    dc < 0.0 || (dc == 0.0 && db > 0.0)
}

/// World coordinates (mm, centred grid) to voxel index coordinates `(x, y, z)`.
fn to_index(points: &[f64], extents: [usize; 3], spacing: f64) -> Vec<[f64; 3]> {
    let off = [
        (extents[2] as f64 - 1.0) / 2.0,
        (extents[1] as f64 - 1.0) / 2.0,
        (extents[0] as f64 - 1.0) / 2.0,
    ];
    points
        .chunks(3)
        .map(|p| [p[0] / spacing + off[0], p[1] / spacing + off[1], p[2] / spacing + off[2]])
        .collect()
}

fn check_surface(points: &[f64], surface: &Surface, spacing: f64) -> Result<()> {
    if points.len() != 3 * surface.num_vertices() {
        return Err(Error::Degenerate(format!(
            "{} coordinates for a surface of {} vertices",
            points.len(),
            surface.num_vertices()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite vertex".into()));
    }
    if !(spacing > 0.0) {
        return Err(Error::Config(format!("voxel spacing must be positive, got {spacing}")));
    }
    let nv = surface.num_vertices() as u32;
    if surface.faces.iter().any(|f| f.iter().any(|&i| i >= nv)) {
        return Err(Error::Degenerate("face references a missing vertex".into()));
    }
    Ok(())
}

fn region_faces(surface: &Surface) -> Vec<Vec<[u32; 3]>> {
    let mut out = vec![Vec::new(); surface.n_regions];
    for (f, &r) in surface.faces.iter().zip(&surface.face_region) {
        out[r as usize - 1].push(*f);
    }
    out
}

fn xyz(extents: [usize; 3]) -> [usize; 3] {
    [extents[2], extents[1], extents[0]]
}

/// Hard multi-region labels by ray parity along x. Regions are painted in
/// increasing id order so higher ids win where surfaces overlap.
pub fn voxelize(points: &[f64], surface: &Surface, extents: [usize; 3], spacing: f64) -> Result<LabelVolume> {
    let mut out = LabelVolume::zeros(extents);
    if points.is_empty() {
        return Ok(out);
    }
    check_surface(points, surface, spacing)?;
    let idx = to_index(points, extents, spacing);
    for (r, faces) in region_faces(surface).iter().enumerate() {
        let lines = Lines::new(&idx, faces, xyz(extents), 0);
        lines.for_each(|i, sd| {
            if matches!(sd, Some(d) if d > 0.0) {
                out.data[i] = r as u8 + 1;
            }
        });
    }
    Ok(out)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Accumulates `sigmoid(sd / temperature) / 3` over the three line axes.
fn soft_from_lines(lines: &[Lines], occ: &mut [f64], temperature: f64) {
    for l in lines {
        l.for_each(|i, sd| {
            if let Some(d) = sd {
                occ[i] += sigmoid(d / temperature) / 3.0;
            }
        });
    }
}

/// Per-region occupancy: the sigmoid of the signed distance along each axis
/// line to the nearest surface crossing (temperature in voxels), averaged
/// over the x, y and z lines.
pub fn voxelize_soft(
    points: &[f64],
    surface: &Surface,
    extents: [usize; 3],
    spacing: f64,
    temperature: f64,
) -> Result<SoftLabels> {
    let n: usize = extents.iter().product();
    if points.is_empty() {
        return Ok(SoftLabels {
            extents,
            occupancy: vec![vec![0.0; n]; surface.n_regions],
        });
    }
    check_surface(points, surface, spacing)?;
    let idx = to_index(points, extents, spacing);
    let occupancy = region_faces(surface)
        .iter()
        .map(|faces| {
            let lines: Vec<Lines> = (0..3).map(|a| Lines::new(&idx, faces, xyz(extents), a)).collect();
            let mut occ = vec![0.0; n];
            soft_from_lines(&lines, &mut occ, temperature);
            occ
        })
        .collect();
    Ok(SoftLabels { extents, occupancy })
}

/// Soft occupancy of the union of all regions, using the boundary of the
/// union along each line.
pub fn soft_foreground(
    points: &[f64],
    surface: &Surface,
    extents: [usize; 3],
    spacing: f64,
    temperature: f64,
) -> Result<Vec<f64>> {
    let n: usize = extents.iter().product();
    let mut occ = vec![0.0; n];
    if points.is_empty() {
        return Ok(occ);
    }
    check_surface(points, surface, spacing)?;
    let idx = to_index(points, extents, spacing);
    let per_region = region_faces(surface);
    let lines: Vec<Lines> = (0..3)
        .map(|a| {
            let parts: Vec<Lines> = per_region.iter().map(|f| Lines::new(&idx, f, xyz(extents), a)).collect();
            Lines::union(&parts)
        })
        .collect();
    soft_from_lines(&lines, &mut occ, temperature);
    Ok(occ)
}
