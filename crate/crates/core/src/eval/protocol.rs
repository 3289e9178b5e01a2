use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use super::metrics::{dice, to_bool};
use super::segnet::{train_segmenter, SegSample, SegTrainConfig};
use crate::error::{Error, Result};
use crate::par;

/// Training arms, in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    /// Only the few labeled real samples.
    LowerBound,
    /// Pretrain on generated samples, fine-tune on the labeled real ones.
    SyntheticFinetune,
    /// Every training sample with its label.
    UpperBound,
}

pub const ARMS: [Arm; 3] = [Arm::LowerBound, Arm::SyntheticFinetune, Arm::UpperBound];

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::LowerBound => "LowerBound",
            Arm::SyntheticFinetune => "Synthetic+Finetune",
            Arm::UpperBound => "UpperBound",
        })
    }
}

/// One site's splits. `labeled` must be a strict subset of `train_full` by
/// id, and `test` disjoint from both.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteSplits {
    pub site: String,
    pub labeled: Vec<SegSample>,
    pub train_full: Vec<SegSample>,
    pub synthetic: Vec<SegSample>,
    pub test: Vec<SegSample>,
}

/// Segmenter budget and the seeds every arm is repeated over.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub train: SegTrainConfig,
    pub seeds: Vec<u64>,
}

/// One row of the report: an arm at a site, aggregated over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmReport {
    pub site: String,
    pub arm: Arm,
    pub real_labels: usize,
    pub synthetic: usize,
    pub test_ids: Vec<String>,
    pub dice_per_seed: Vec<f64>,
}

impl ArmReport {
    pub fn mean_dice(&self) -> f64 {
        self.dice_per_seed.iter().sum::<f64>() / self.dice_per_seed.len() as f64
    }

    /// Population standard deviation over seeds.
    pub fn std_dice(&self) -> f64 {
        let m = self.mean_dice();
        let n = self.dice_per_seed.len() as f64;
        (self.dice_per_seed.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / n).sqrt()
    }
}

pub const REPORT_HEADER: &str = "site,arm,real_labels,synthetic_samples,test_samples,mean_dice,std_dice,dice_per_seed,test_ids";

pub fn report_csv(rows: &[ArmReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let per_seed: Vec<String> = r.dice_per_seed.iter().map(|d| format!("{d:.6}")).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{},{}\n",
            r.site,
            r.arm,
            r.real_labels,
            r.synthetic,
            r.test_ids.len(),
            r.mean_dice(),
            r.std_dice(),
            per_seed.join(";"),
            r.test_ids.join(";")
        ));
    }
    out
}

/// Fails with every missing path in one message.
pub fn require_paths<P: AsRef<Path>>(paths: &[P]) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.as_ref().exists())
        .map(|p| p.as_ref().display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing artifacts: {}", missing.join(", ")),
        )))
    }
}

fn ids(set: &[SegSample]) -> BTreeSet<&str> {
    set.iter().map(|s| s.id.as_str()).collect()
}

fn validate(s: &SiteSplits) -> Result<()> {
    let (lab, full, test) = (ids(&s.labeled), ids(&s.train_full), ids(&s.test));
    let bad = |m: &str| Err(Error::Data(format!("site {}: {m}", s.site)));
    if s.labeled.is_empty() || s.test.is_empty() {
        return bad("needs labeled and test samples");
    }
    if !lab.is_subset(&full) || lab.len() >= full.len() {
        return bad("labeled samples must be a strict subset of the training set");
    }
    if !test.is_disjoint(&full) {
        return bad("test samples overlap the training set");
    }
    if s.synthetic.is_empty() {
        return bad("no generated samples for the synthetic arm");
    }
    Ok(())
}

fn run_arm(s: &SiteSplits, arm: Arm, cfg: SegTrainConfig) -> Result<f64> {
    let net = match arm {
        Arm::LowerBound => train_segmenter(&[], &s.labeled, cfg)?,
        Arm::SyntheticFinetune => train_segmenter(&s.synthetic, &s.labeled, cfg)?,
        Arm::UpperBound => train_segmenter(&[], &s.train_full, cfg)?,
    };
    let mut total = 0.0;
    for t in &s.test {
        total += dice(&net.segment(&t.volume)?, &to_bool(&t.mask))?;
    }
    Ok(total / s.test.len() as f64)
}

/// Every arm at every site for every seed, run concurrently. Rows are
/// ordered by site, then arm.
pub fn evaluate_protocol(sites: &[SiteSplits], cfg: &ProtocolConfig) -> Result<Vec<ArmReport>> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("protocol needs at least one seed".into()));
    }
    for s in sites {
        validate(s)?;
    }
    let (na, ns) = (ARMS.len(), cfg.seeds.len());
    let scores = par::map_range(sites.len() * na * ns, |j| {
        let (site, arm, seed) = (j / (na * ns), (j / ns) % na, j % ns);
        let train = SegTrainConfig {
            seed: cfg.seeds[seed],
            ..cfg.train
        };
        run_arm(&sites[site], ARMS[arm], train)
    });
    let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
    let mut rows = Vec::with_capacity(sites.len() * na);
    for (si, s) in sites.iter().enumerate() {
        for (ai, &arm) in ARMS.iter().enumerate() {
            let base = (si * na + ai) * ns;
            rows.push(ArmReport {
                site: s.site.clone(),
                arm,
                real_labels: match arm {
                    Arm::UpperBound => s.train_full.len(),
                    _ => s.labeled.len(),
                },
                synthetic: if arm == Arm::SyntheticFinetune { s.synthetic.len() } else { 0 },
                test_ids: s.test.iter().map(|t| t.id.clone()).collect(),
                dice_per_seed: scores[base..base + ns].to_vec(),
            });
        }
    }
    Ok(rows)
}
