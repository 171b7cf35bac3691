//! CSV and JSON summaries of experiment results.
//!
//! `results.csv` has one row per (seed, perturbation) with columns
//! `seed,gamma,noise_std,patch_radius,aepe_identity,aepe_learned,fl_identity,fl_learned,steps`,
//! sorted by perturbation then seed. `summary.json` holds, per perturbation,
//! the count and the median, quartiles and interquartile range of each
//! metric (linear-interpolation quantiles).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LcvError, Result};
use crate::harness::experiment::ExperimentResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub gamma: f64,
    pub noise_std: f64,
    pub patch_radius: usize,
    pub count: usize,
    pub aepe_identity: Spread,
    pub aepe_learned: Spread,
    pub fl_identity: Spread,
    pub fl_learned: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub groups: Vec<GroupSummary>,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn spread(values: &[f64]) -> Spread {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
    Spread {
        median: quantile(&v, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
    }
}

fn sorted(results: &[ExperimentResult]) -> Vec<ExperimentResult> {
    let mut rows = results.to_vec();
    rows.sort_by(|a, b| {
        a.gamma
            .total_cmp(&b.gamma)
            .then(a.noise_std.total_cmp(&b.noise_std))
            .then(a.patch_radius.cmp(&b.patch_radius))
            .then(a.seed.cmp(&b.seed))
    });
    rows
}

pub fn summarize(results: &[ExperimentResult]) -> Result<Summary> {
    if results.is_empty() {
        return Err(LcvError::InvalidArgument("no results to summarize".into()));
    }
    let rows = sorted(results);
    let mut groups = Vec::new();
    let same = |a: &ExperimentResult, b: &ExperimentResult| {
        a.gamma == b.gamma && a.noise_std == b.noise_std && a.patch_radius == b.patch_radius
    };
    for chunk in rows.chunk_by(|a, b| same(a, b)) {
        let metric =
            |f: fn(&ExperimentResult) -> f64| spread(&chunk.iter().map(f).collect::<Vec<_>>());
        groups.push(GroupSummary {
            gamma: chunk[0].gamma,
            noise_std: chunk[0].noise_std,
            patch_radius: chunk[0].patch_radius,
            count: chunk.len(),
            aepe_identity: metric(|r| r.aepe_identity),
            aepe_learned: metric(|r| r.aepe_learned),
            fl_identity: metric(|r| r.fl_identity),
            fl_learned: metric(|r| r.fl_learned),
        });
    }
    Ok(Summary {
        count: rows.len(),
        groups,
    })
}

/// Writes `results.csv` and `summary.json` into `dir` and returns their
/// paths. Nothing is written for an empty list.
pub fn report(results: &[ExperimentResult], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let summary = summarize(results)?;
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    let json_path = dir.join("summary.json");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in sorted(results) {
        w.serialize(row)?;
    }
    w.flush()?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok((csv_path, json_path))
}
