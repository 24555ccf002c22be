//! Per-seed metric rows, checks re-evaluated from those rows, and the
//! on-disk layout of a run.
//!
//! ```text
//! <out>/report.json        Report (below)
//! <out>/metrics.csv        experiment_id,config_hash,seed,variant,metric,value
//! <out>/trajectories/*.csv one Euler path each (flowlab::Trajectory::write_csv)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use flowlab::Trajectory;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::ExperimentError;

/// Opening statement of every report.
pub const PREAMBLE: &str = "Property-based checks on synthetic fields only. Benchmark numbers from \
large 3D backbones (Point-FID, CLIP scores) cannot be reproduced at this scale and are never produced \
here; nothing in this report is comparable to them.";

/// One measured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub seed: u64,
    pub variant: String,
    pub metric: String,
    pub value: f64,
}

impl Row {
    pub fn new(seed: u64, variant: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        Self {
            seed,
            variant: variant.into(),
            metric: metric.into(),
            value,
        }
    }
}

/// A `(variant, metric)` column of the row table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Series {
    pub variant: String,
    pub metric: String,
}

impl Series {
    pub fn new(variant: impl Into<String>, metric: impl Into<String>) -> Self {
        Self {
            variant: variant.into(),
            metric: metric.into(),
        }
    }

    /// Values by seed; a repeated seed keeps its last value.
    pub fn by_seed(&self, rows: &[Row]) -> BTreeMap<u64, f64> {
        rows.iter()
            .filter(|r| r.variant == self.variant && r.metric == self.metric)
            .map(|r| (r.seed, r.value))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Relation {
    /// `lhs < rhs`
    Less,
    /// `lhs <= rhs + slack`
    AtMost { slack: f64 },
    /// `lhs >= rhs - slack`
    AtLeast { slack: f64 },
    /// `|lhs - rhs| <= tol`
    Close { tol: f64 },
}

impl Relation {
    pub fn holds(&self, lhs: f64, rhs: f64) -> bool {
        match *self {
            Relation::Less => lhs < rhs,
            Relation::AtMost { slack } => lhs <= rhs + slack,
            Relation::AtLeast { slack } => lhs >= rhs - slack,
            Relation::Close { tol } => (lhs - rhs).abs() <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Rule {
    /// Per seed, `lhs relation rhs`; seeds missing either side count as failures.
    Paired { lhs: Series, rhs: Series, relation: Relation },
    /// Per seed, `value relation bound`.
    Bound { series: Series, relation: Relation, bound: f64 },
    /// `median(lhs) < factor * median(rhs)`, evaluated once over all seeds.
    MedianBelow { lhs: Series, rhs: Series, factor: f64 },
    /// `median(series) < bound`, evaluated once over all seeds.
    MedianUnder { series: Series, bound: f64 },
}

/// A named property with the number of seeds that must satisfy it.
/// Median rules count as one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub rule: Rule,
    pub required: usize,
}

impl Check {
    pub fn paired(name: impl Into<String>, lhs: Series, rhs: Series, relation: Relation, required: usize) -> Self {
        Self {
            name: name.into(),
            rule: Rule::Paired { lhs, rhs, relation },
            required,
        }
    }

    pub fn bound(name: impl Into<String>, series: Series, relation: Relation, bound: f64, required: usize) -> Self {
        Self {
            name: name.into(),
            rule: Rule::Bound {
                series,
                relation,
                bound,
            },
            required,
        }
    }

    pub fn median_below(name: impl Into<String>, lhs: Series, rhs: Series, factor: f64) -> Self {
        Self {
            name: name.into(),
            rule: Rule::MedianBelow { lhs, rhs, factor },
            required: 1,
        }
    }

    pub fn median_under(name: impl Into<String>, series: Series, bound: f64) -> Self {
        Self {
            name: name.into(),
            rule: Rule::MedianUnder { series, bound },
            required: 1,
        }
    }

    /// Outcome of this check on `rows`.
    pub fn evaluate(&self, rows: &[Row]) -> Verdict {
        let (satisfied, total, failing_seeds) = match &self.rule {
            Rule::Paired { lhs, rhs, relation } => {
                let (l, r) = (lhs.by_seed(rows), rhs.by_seed(rows));
                let seeds: BTreeSet<u64> = l.keys().chain(r.keys()).copied().collect();
                let failing: Vec<u64> = seeds
                    .iter()
                    .copied()
                    .filter(|s| !matches!((l.get(s), r.get(s)), (Some(a), Some(b)) if relation.holds(*a, *b)))
                    .collect();
                (seeds.len() - failing.len(), seeds.len(), failing)
            }
            Rule::Bound {
                series,
                relation,
                bound,
            } => {
                let values = series.by_seed(rows);
                let failing: Vec<u64> =
                    values.iter().filter(|(_, v)| !relation.holds(**v, *bound)).map(|(s, _)| *s).collect();
                (values.len() - failing.len(), values.len(), failing)
            }
            Rule::MedianBelow { lhs, rhs, factor } => {
                let ok = match (median(lhs.by_seed(rows).values()), median(rhs.by_seed(rows).values())) {
                    (Some(a), Some(b)) => a < factor * b,
                    _ => false,
                };
                (ok as usize, 1, Vec::new())
            }
            Rule::MedianUnder { series, bound } => {
                let ok = median(series.by_seed(rows).values()).is_some_and(|m| m < *bound);
                (ok as usize, 1, Vec::new())
            }
        };
        Verdict {
            name: self.name.clone(),
            satisfied,
            total,
            required: self.required,
            failing_seeds,
            passed: total > 0 && satisfied >= self.required,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub satisfied: usize,
    pub total: usize,
    pub required: usize,
    pub failing_seeds: Vec<u64>,
    pub passed: bool,
}

fn median<'a>(values: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: String,
    pub metric: String,
    pub count: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Median, min and max of every series, sorted by variant then metric.
pub fn aggregate(rows: &[Row]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.variant.clone(), r.metric.clone())).or_default().push(r.value);
    }
    groups
        .into_iter()
        .map(|((variant, metric), values)| Aggregate {
            variant,
            metric,
            count: values.len(),
            median: median(values.iter()).expect("group is non-empty"),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

/// What a scenario hands back before anything is written.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    /// File stem (no extension) and trajectory.
    pub trajectories: Vec<(String, Trajectory)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub preamble: String,
    pub experiment_id: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub checks: Vec<Check>,
    pub verdicts: Vec<Verdict>,
    /// Relative path to SHA-256 of every other file written.
    pub artifacts: BTreeMap<String, String>,
    pub passed: bool,
}

impl Report {
    pub fn new(config: &ExperimentConfig, outcome: &Outcome) -> Self {
        let config_hash = config.hash();
        let verdicts: Vec<Verdict> = outcome.checks.iter().map(|c| c.evaluate(&outcome.rows)).collect();
        Self {
            preamble: PREAMBLE.to_string(),
            experiment_id: format!("{}-{}", config.scenario, &config_hash[..12]),
            config_hash,
            config: config.clone(),
            rows: outcome.rows.clone(),
            aggregates: aggregate(&outcome.rows),
            checks: outcome.checks.clone(),
            passed: !verdicts.is_empty() && verdicts.iter().all(|v| v.passed),
            verdicts,
            artifacts: BTreeMap::new(),
        }
    }

    /// Re-derives every verdict from the stored rows.
    pub fn recompute(&self) -> Vec<Verdict> {
        self.checks.iter().map(|c| c.evaluate(&self.rows)).collect()
    }

    /// The `metrics.csv` body.
    pub fn metrics_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["experiment_id", "config_hash", "seed", "variant", "metric", "value"])?;
        for r in &self.rows {
            w.write_record([
                self.experiment_id.as_str(),
                self.config_hash.as_str(),
                &r.seed.to_string(),
                &r.variant,
                &r.metric,
                &r.value.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::io(path, std::io::Error::other(e)))
    }
}

fn write_file(dir: &Path, rel: &str, bytes: &[u8], hashes: &mut BTreeMap<String, String>) -> Result<(), ExperimentError> {
    let path = dir.join(rel);
    fs::write(&path, bytes).map_err(|e| ExperimentError::io(&path, e))?;
    hashes.insert(rel.to_string(), hex::encode(Sha256::digest(bytes)));
    Ok(())
}

/// Writes `metrics.csv`, `trajectories/*.csv` and finally `report.json`
/// (which records the hashes of the others) under `dir`.
pub fn write_outputs(dir: &Path, report: &mut Report, outcome: &Outcome) -> Result<PathBuf, ExperimentError> {
    let traj_dir = dir.join("trajectories");
    fs::create_dir_all(&traj_dir).map_err(|e| ExperimentError::io(&traj_dir, e))?;
    let mut hashes = BTreeMap::new();
    let metrics = report.metrics_csv().map_err(|e| ExperimentError::io(dir, std::io::Error::other(e)))?;
    write_file(dir, "metrics.csv", &metrics, &mut hashes)?;
    for (stem, traj) in &outcome.trajectories {
        let mut bytes = Vec::new();
        traj.write_csv(&mut bytes)
            .map_err(|e| ExperimentError::runtime("sampler", "Trajectory::write_csv", e))?;
        write_file(dir, &format!("trajectories/{stem}.csv"), &bytes, &mut hashes)?;
    }
    report.artifacts = hashes;
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&path, json + "\n").map_err(|e| ExperimentError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<Row> {
        let mut rows = Vec::new();
        for s in 0..5u64 {
            rows.push(Row::new(s, "a", "err", s as f64));
            rows.push(Row::new(s, "b", "err", 2.5));
        }
        rows
    }

    #[test]
    fn paired_counts_seeds() {
        let c = Check::paired("a<b", Series::new("a", "err"), Series::new("b", "err"), Relation::Less, 3);
        let v = c.evaluate(&rows());
        assert_eq!((v.satisfied, v.total, v.passed), (3, 5, true));
        assert_eq!(v.failing_seeds, vec![3, 4]);
        let strict = Check::paired("a<b", Series::new("a", "err"), Series::new("b", "err"), Relation::Less, 5);
        assert!(!strict.evaluate(&rows()).passed);
    }

    #[test]
    fn missing_sides_fail() {
        let mut r = rows();
        r.retain(|x| !(x.variant == "b" && x.seed == 0));
        let c = Check::paired("a<b", Series::new("a", "err"), Series::new("b", "err"), Relation::Less, 3);
        let v = c.evaluate(&r);
        assert_eq!(v.failing_seeds, vec![0, 3, 4]);
        assert!(!v.passed);
    }

    #[test]
    fn medians_and_bounds() {
        let r = rows();
        assert!(Check::median_under("m", Series::new("a", "err"), 2.5).evaluate(&r).passed);
        assert!(!Check::median_under("m", Series::new("a", "err"), 2.0).evaluate(&r).passed);
        assert!(Check::median_below("m", Series::new("a", "err"), Series::new("b", "err"), 1.0).evaluate(&r).passed);
        let b = Check::bound("b", Series::new("a", "err"), Relation::AtMost { slack: 0.0 }, 3.0, 5);
        assert_eq!(b.evaluate(&r).failing_seeds, vec![4]);
        assert!(!Check::median_under("none", Series::new("z", "err"), 1.0).evaluate(&r).passed);
    }

    #[test]
    fn aggregates_per_series() {
        let a = aggregate(&rows());
        assert_eq!(a.len(), 2);
        assert_eq!((a[0].median, a[0].min, a[0].max, a[0].count), (2.0, 0.0, 4.0, 5));
    }
}
