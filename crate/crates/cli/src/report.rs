//! Per-episode summary files and the aggregated results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One row of `summary.csv`: a single policy on a single day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub config_hash: String,
    pub seed: u64,
    pub policy: String,
    pub split: String,
    pub day: String,
    pub fines: usize,
    pub violations: usize,
    pub fine_ratio: f64,
    pub decisions: usize,
}

pub fn write_summary(path: &Path, rows: &[EpisodeRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> CliResult<Vec<EpisodeRow>> {
    if !path.exists() {
        return Err(CliError::Data(format!("missing summary file {}", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<EpisodeRow>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub split: String,
    pub mean_fines_per_day: f64,
    /// Sample standard deviation; 0 for a single episode.
    pub std: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    /// Group by (policy, split), ordered by policy then split.
    pub fn from_episodes(episodes: &[EpisodeRow]) -> ResultsTable {
        let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for e in episodes {
            groups
                .entry((e.policy.clone(), e.split.clone()))
                .or_default()
                .push(e.fines as f64);
        }
        let rows = groups
            .into_iter()
            .map(|((policy, split), v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let std = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                ResultRow {
                    policy,
                    split,
                    mean_fines_per_day: mean,
                    std,
                    episodes: v.len(),
                }
            })
            .collect();
        ResultsTable { rows }
    }

    pub fn to_csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["policy", "split", "mean_fines_per_day", "std", "episodes"])?;
        for r in &self.rows {
            w.write_record(self.cells(r))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    fn cells(&self, r: &ResultRow) -> [String; 5] {
        [
            r.policy.clone(),
            r.split.clone(),
            format!("{:.4}", r.mean_fines_per_day),
            format!("{:.4}", r.std),
            r.episodes.to_string(),
        ]
    }

    /// Aligned text with the same cells as the CSV.
    pub fn to_text(&self) -> String {
        let header = ["policy", "split", "mean_fines_per_day", "std", "episodes"];
        let cells: Vec<[String; 5]> = self.rows.iter().map(|r| self.cells(r)).collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[&str]| {
            for (i, (c, w)) in row.iter().zip(widths).enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                if i < 2 {
                    let _ = write!(out, "{c:<w$}");
                } else {
                    let _ = write!(out, "{c:>w$}");
                }
            }
            out.push('\n');
        };
        line(&mut out, &header);
        for row in &cells {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(policy: &str, fines: usize) -> EpisodeRow {
        EpisodeRow {
            config_hash: "h".into(),
            seed: 0,
            policy: policy.into(),
            split: "test".into(),
            day: "2019-01-01".into(),
            fines,
            violations: 10,
            fine_ratio: fines as f64 / 10.0,
            decisions: 3,
        }
    }

    #[test]
    fn groups_and_statistics() {
        let t = ResultsTable::from_episodes(&[ep("random", 2), ep("greedy", 5), ep("random", 4)]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].policy, "greedy");
        assert_eq!(t.rows[1].mean_fines_per_day, 3.0);
        assert!((t.rows[1].std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(t.rows[0].std, 0.0);
    }

    #[test]
    fn text_and_csv_agree() {
        let t = ResultsTable::from_episodes(&[ep("random", 2), ep("random", 3)]);
        let csv = t.to_csv().unwrap();
        assert!(csv.contains("random,test,2.5000,0.7071,2"));
        assert!(t.to_text().contains("2.5000  0.7071"));
        assert!(t.to_text().lines().nth(1).unwrap().ends_with('2'));
    }
}
