//! Run summaries: label distribution and reward alignment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::read_metrics_csv;
use crate::trajectory::PreferenceLabel;

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 points".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::InvalidArgument("correlation undefined for a constant series".into()))
}

/// Fractions of fused labels against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub correct: f64,
    pub incorrect: f64,
    pub indecision: f64,
}

impl LabelDistribution {
    /// `(fused, truth)` pairs; a fused indecision is never counted as correct.
    pub fn from_labels(pairs: &[(PreferenceLabel, PreferenceLabel)]) -> Self {
        if pairs.is_empty() {
            return Self::default();
        }
        let n = pairs.len() as f64;
        let count = |f: &dyn Fn(&(PreferenceLabel, PreferenceLabel)) -> bool| pairs.iter().filter(|p| f(p)).count();
        let indecision = count(&|p| !p.0.is_clear());
        let correct = count(&|p| p.0.is_clear() && p.0 == p.1);
        let incorrect = pairs.len() - indecision - correct;
        Self {
            correct: correct as f64 / n,
            incorrect: incorrect as f64 / n,
            indecision: indecision as f64 / n,
        }
    }
}

/// One line of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub queries: usize,
    pub correct: f64,
    pub incorrect: f64,
    pub indecision: f64,
    pub counterfactuals: usize,
    pub spearman: f64,
}

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LABEL_DISTRIBUTION_FILE: &str = "label_distribution.csv";
pub const REWARD_ALIGNMENT_FILE: &str = "reward_alignment.csv";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Metrics {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

pub fn write_rounds_csv(path: impl AsRef<Path>, rows: &[RoundRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rounds_csv(path: impl AsRef<Path>) -> Result<Vec<RoundRow>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "metrics file not found"),
        ));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Files written by [`report`] and the printed summary.
#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub summary: String,
    pub rounds: Vec<RoundRow>,
    pub label_distribution: PathBuf,
    pub reward_alignment: PathBuf,
}

/// Summarizes a run directory (or a `rounds.csv` path) and writes
/// `label_distribution.csv` and `reward_alignment.csv` into `out_dir`,
/// defaulting to the run directory.
pub fn report(metrics: impl AsRef<Path>, out_dir: Option<&Path>) -> Result<ReportOutput> {
    let metrics = metrics.as_ref();
    let (dir, rounds_path) = if metrics.is_dir() {
        (metrics.to_path_buf(), metrics.join(ROUNDS_FILE))
    } else {
        (
            metrics.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
            metrics.to_path_buf(),
        )
    };
    let rounds = read_rounds_csv(&rounds_path)?;
    let train_path = dir.join(METRICS_FILE);
    let train = if train_path.is_file() { read_metrics_csv(&train_path)? } else { Vec::new() };
    let out = out_dir.map_or_else(|| dir.clone(), Path::to_path_buf);
    let ld_path = out.join(LABEL_DISTRIBUTION_FILE);
    let ra_path = out.join(REWARD_ALIGNMENT_FILE);

    let mut ld = csv::Writer::from_path(&ld_path).map_err(|e| csv_err(&ld_path, e))?;
    ld.write_record(["round", "correct", "incorrect", "indecision"]).map_err(|e| csv_err(&ld_path, e))?;
    let mut ra = csv::Writer::from_path(&ra_path).map_err(|e| csv_err(&ra_path, e))?;
    ra.write_record(["round", "spearman", "counterfactuals"]).map_err(|e| csv_err(&ra_path, e))?;
    for r in &rounds {
        ld.serialize((r.round, r.correct, r.incorrect, r.indecision))
            .map_err(|e| csv_err(&ld_path, e))?;
        ra.serialize((r.round, r.spearman, r.counterfactuals)).map_err(|e| csv_err(&ra_path, e))?;
    }
    ld.flush().map_err(|e| Error::io(&ld_path, e))?;
    ra.flush().map_err(|e| Error::io(&ra_path, e))?;

    let mut summary = String::new();
    if rounds.is_empty() {
        summary.push_str("no rounds recorded\n");
    } else {
        let _ = writeln!(
            summary,
            "{:>5} {:>7} {:>8} {:>9} {:>10} {:>4} {:>8}",
            "round", "queries", "correct", "incorrect", "indecision", "cf", "spearman"
        );
        for r in &rounds {
            let _ = writeln!(
                summary,
                "{:>5} {:>7} {:>8.3} {:>9.3} {:>10.3} {:>4} {:>8.3}",
                r.round, r.queries, r.correct, r.incorrect, r.indecision, r.counterfactuals, r.spearman
            );
        }
        if let Some(last) = train.last() {
            let _ = writeln!(
                summary,
                "final epoch: pref_loss {:.4}, aux_loss {:.4}, lambda_cf {:.4}, label_accuracy {:.3}",
                last.pref_loss, last.aux_loss, last.lambda_cf, last.label_accuracy
            );
        }
    }
    Ok(ReportOutput {
        summary,
        rounds,
        label_distribution: ld_path,
        reward_alignment: ra_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use PreferenceLabel::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_fixtures() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn distribution_sums_to_one() {
        let d = LabelDistribution::from_labels(&[
            (APreferred, APreferred),
            (BPreferred, APreferred),
            (Indecision, BPreferred),
            (Indecision, Indecision),
        ]);
        assert_eq!((d.correct, d.incorrect, d.indecision), (0.25, 0.25, 0.5));
    }

    #[test]
    fn empty_and_corrupt_runs() {
        let dir = tempfile::tempdir().unwrap();
        write_rounds_csv(dir.path().join(ROUNDS_FILE), &[]).unwrap();
        std::fs::write(dir.path().join(ROUNDS_FILE), "round,queries,correct,incorrect,indecision,counterfactuals,spearman\n").unwrap();
        let out = report(dir.path(), None).unwrap();
        assert_eq!(out.summary, "no rounds recorded\n");
        std::fs::write(
            dir.path().join(ROUNDS_FILE),
            "round,queries,correct,incorrect,indecision,counterfactuals,spearman\n1,5,0.8,0.2,0,3,0.9\n2,oops,0.8,0.2,0,3,0.9\n",
        )
        .unwrap();
        match report(dir.path(), None) {
            Err(Error::Metrics { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(report(dir.path().join("missing.csv"), None).is_err());
    }
}
