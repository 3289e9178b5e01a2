//! Staged outputs, run records and image previews.
//!
//! Commands write into a hidden sibling directory and move the files into
//! place only after everything succeeded, so a failed run leaves no partial
//! artifacts behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::fail::{Context, Outcome};

pub const RUN_INFO: &str = "run-info.toml";

fn sibling(target: &Path, tag: &str) -> PathBuf {
    let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parent.join(format!(".{name}.{tag}-{}", std::process::id()))
}

/// A staging directory for the output directory `target`.
pub struct Stage {
    target: PathBuf,
    dir: PathBuf,
    done: bool,
}

impl Stage {
    pub fn new(target: &Path) -> Outcome<Self> {
        let dir = sibling(target, "stage");
        if dir.exists() {
            fs::remove_dir_all(&dir).context(dir.display())?;
        }
        fs::create_dir_all(&dir).context(dir.display())?;
        Ok(Stage {
            target: target.to_path_buf(),
            dir,
            done: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Outcome<()> {
        let p = self.join(name);
        fs::write(&p, bytes).context(p.display())
    }

    /// Moves every staged entry into the target, replacing same-named
    /// entries and leaving others alone.
    pub fn commit(mut self) -> Outcome<()> {
        fs::create_dir_all(&self.target).context(self.target.display())?;
        let mut entries: Vec<_> = fs::read_dir(&self.dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let dst = self.target.join(e.file_name());
            if dst.is_dir() {
                fs::remove_dir_all(&dst).context(dst.display())?;
            }
            fs::rename(e.path(), &dst).context(dst.display())?;
        }
        fs::remove_dir(&self.dir)?;
        self.done = true;
        Ok(())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

/// Writes every file next to its destination first, then renames them all.
pub fn write_files(files: &[(PathBuf, Vec<u8>)]) -> Outcome<()> {
    let mut temps = Vec::with_capacity(files.len());
    let cleanup = |temps: &[PathBuf]| temps.iter().for_each(|t| drop(fs::remove_file(t)));
    for (path, bytes) in files {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).context(parent.display())?;
        }
        let tmp = sibling(path, "tmp");
        if let Err(e) = fs::write(&tmp, bytes) {
            cleanup(&temps);
            return Err(e).context(path.display());
        }
        temps.push(tmp);
    }
    for ((path, _), tmp) in files.iter().zip(&temps) {
        fs::rename(tmp, path).context(path.display())?;
    }
    Ok(())
}

/// `<file>.run-info.toml` for commands whose output is a single file.
pub fn run_info_path(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(RUN_INFO);
    file.with_file_name(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// What produced an output: the command line, the full canonical config
/// (every default spelled out) and its digest.
#[derive(Clone, Debug, Serialize)]
pub struct RunInfo {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub config_sha256: String,
    pub config: String,
}

impl RunInfo {
    pub fn new(command: &str, seed: u64, canonical_config: String) -> Self {
        RunInfo {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            argv: std::env::args().collect(),
            seed,
            threads: fedsim::par::current_threads(),
            config_sha256: sha256_hex(canonical_config.as_bytes()),
            config: canonical_config,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run info serializes")
    }
}

/// Binary 8-bit PGM of a `w × h` image, min-max scaled; a constant image is
/// black.
pub fn pgm(w: usize, h: usize, data: &[f64]) -> Vec<u8> {
    assert_eq!(data.len(), w * h, "image size");
    let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(data.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}
