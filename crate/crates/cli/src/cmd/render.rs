use std::path::PathBuf;

use clap::Args;
use fedsim::ct::{fbp_reconstruct, forward_project, Geometry, Volume, Window};
use fedsim::fsct::Container;
use fedsim::ssm::LabelVolume;
use serde::Serialize;

use crate::config::canonical;
use crate::fail::{Context, Failure, Outcome};
use crate::output::{pgm, RunInfo, Stage, RUN_INFO};

/// Write slice previews of a volume or label file, optionally through a
/// parallel-beam scan and reconstruction.
#[derive(Args, Debug, Serialize)]
pub struct Render {
    /// A `.vol.fsct` or `.lab.fsct` file.
    #[arg(long)]
    pub input: PathBuf,
    /// Axial slice; defaults to the middle one.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice: Option<usize>,
    /// Project the slice and reconstruct it with filtered back-projection.
    #[arg(long)]
    pub simulate: bool,
    /// Projection count for `--simulate` (default: twice the extent).
    #[arg(long, requires = "simulate")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub views: Option<usize>,
    /// `ramlak` or `hann`.
    #[arg(long, default_value = "ramlak")]
    pub window: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn render(a: &Render) -> Outcome<()> {
    let c = Container::read_file(&a.input).context(a.input.display())?;
    let window: Window = a.window.parse()?;
    let vol = if c.get("volume").is_some() {
        Volume::import("volume", &c)?
    } else if c.get("labels").is_some() {
        let l = LabelVolume::import("labels", &c)?;
        Volume::from_vec(l.extents, 1.0, l.data.iter().map(|&v| v as f64).collect())?
    } else {
        return Err(Failure::config(format!("{}: neither a volume nor a label file", a.input.display())));
    };
    let [d, h, w] = vol.extents;
    let k = a.slice.unwrap_or(d / 2);
    if k >= d {
        return Err(Failure::config(format!("slice {k} outside 0..{d}")));
    }
    let stage = Stage::new(&a.out)?;
    stage.write("slice.pgm", pgm(w, h, vol.slice(k)))?;
    if a.simulate {
        if h != w {
            return Err(Failure::config(format!("--simulate needs square slices, got {h}×{w}")));
        }
        let views = a.views.unwrap_or(2 * w);
        let geom = Geometry::parallel2d(w, vol.spacing, views);
        let slice = Volume::from_vec([1, h, w], vol.spacing, vol.slice(k).to_vec())?;
        let sino = forward_project(&slice, &geom)?;
        let recon = fbp_reconstruct(&sino, &geom, window)?;
        stage.write("sinogram.pgm", pgm(sino.shape[2], views, &sino.data))?;
        stage.write("recon.pgm", pgm(w, h, &recon.data))?;
        let rmse = (slice.data.iter().zip(&recon.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / slice.data.len() as f64).sqrt();
        println!("slice {k}: {views} views, reconstruction rmse {rmse:.4e}");
    }
    stage.write(RUN_INFO, RunInfo::new("render", 0, canonical(a)).to_toml())?;
    stage.commit()
}
