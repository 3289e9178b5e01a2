use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream;

const HEADER: &str = "# fedsim manifest v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths relative to the manifest directory.
    pub volume: String,
    pub labels: Option<String>,
    pub split: Split,
    pub labeled: bool,
}

/// Tab-separated dataset index. Layout:
///
/// ```text
/// # fedsim manifest v1
/// family <name> seed <u64> res <n> fov <mm> regions <R>
/// id volume labels split labeled
/// <id> <path> <path or -> <train|val|test> <0|1>
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub family: String,
    pub seed: u64,
    pub res: usize,
    pub fov: f64,
    pub n_regions: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn spacing(&self) -> f64 {
        self.fov / self.res as f64
    }

    pub fn in_split(&self, s: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == s)
    }

    pub fn num_labeled(&self, s: Split) -> usize {
        self.in_split(s).filter(|e| e.labeled).count()
    }

    /// Ids unique; validation and test entries labeled; labeled entries
    /// have a label path.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.id) {
                return Err(Error::Data(format!("duplicate sample id {}", e.id)));
            }
            if e.split != Split::Train && !e.labeled {
                return Err(Error::Data(format!("{} is in {} but unlabeled", e.id, e.split)));
            }
            if e.labeled && e.labels.is_none() {
                return Err(Error::Data(format!("{} is labeled but has no label file", e.id)));
            }
            if e.id.contains(['\t', '\n']) {
                return Err(Error::Data(format!("sample id {:?} contains a separator", e.id)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{HEADER}\nfamily\t{}\tseed\t{}\tres\t{}\tfov\t{}\tregions\t{}\nid\tvolume\tlabels\tsplit\tlabeled\n",
            self.family, self.seed, self.res, self.fov, self.n_regions
        );
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.volume,
                e.labels.as_deref().unwrap_or("-"),
                e.split,
                e.labeled as u8
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format(format!("manifest line {}: {msg}", line + 1));
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&HEADER) {
            return Err(bad(0, "missing header"));
        }
        let meta: Vec<&str> = lines.get(1).ok_or_else(|| bad(1, "missing metadata"))?.split('\t').collect();
        if meta.len() != 10 || meta[0] != "family" || meta[2] != "seed" || meta[4] != "res" || meta[6] != "fov" || meta[8] != "regions" {
            return Err(bad(1, "malformed metadata"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(1, "malformed number"));
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad(1, "malformed integer"));
        if lines.get(2) != Some(&"id\tvolume\tlabels\tsplit\tlabeled") {
            return Err(bad(2, "missing column header"));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(3) {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(i, "expected 5 columns"));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                volume: f[1].to_string(),
                labels: (f[2] != "-").then(|| f[2].to_string()),
                split: f[3].parse().map_err(|_| bad(i, "unknown split"))?,
                labeled: match f[4] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad(i, "labeled flag must be 0 or 1")),
                },
            });
        }
        let m = Manifest {
            family: meta[1].to_string(),
            seed: int(meta[3])?,
            res: int(meta[5])? as usize,
            fov: num(meta[7])?,
            n_regions: int(meta[9])? as usize,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Manifest::parse(&std::fs::read_to_string(path)?)
    }
}

/// Seeded shuffle into train/val/test; the first `labeled` shuffled training
/// entries keep their labels, validation and test are always labeled, and
/// entries beyond the requested sizes are dropped.
pub fn split(m: &Manifest, sizes: [usize; 3], labeled: usize, seed: u64) -> Result<Manifest> {
    let [n_train, n_val, n_test] = sizes;
    let n = m.entries.len();
    if n_train + n_val + n_test > n {
        return Err(Error::Config(format!(
            "split sizes {n_train}/{n_val}/{n_test} exceed {n} samples"
        )));
    }
    if labeled > n_train {
        return Err(Error::Config(format!(
            "{labeled} labeled samples requested from {n_train} training samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m.entries[a].id.cmp(&m.entries[b].id));
    order.shuffle(&mut stream(seed, "split", 0));
    let mut entries = Vec::with_capacity(n_train + n_val + n_test);
    for (rank, &i) in order.iter().take(n_train + n_val + n_test).enumerate() {
        let mut e = m.entries[i].clone();
        let (split, lab) = if rank < n_train {
            (Split::Train, rank < labeled)
        } else if rank < n_train + n_val {
            (Split::Val, true)
        } else {
            (Split::Test, true)
        };
        if lab && e.labels.is_none() {
            return Err(Error::Data(format!("{} has no label file", e.id)));
        }
        e.split = split;
        e.labeled = lab;
        entries.push(e);
    }
    entries.sort_by(|a, b| (a.split, &a.id).cmp(&(b.split, &b.id)));
    let out = Manifest {
        entries,
        ..m.clone()
    };
    out.validate()?;
    Ok(out)
}
