use std::path::Path;

use super::run::{read_record, RunRecord, RECORD_JSON};
use crate::error::{Error, Result};

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One table cell: runs that differ only in their seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub acquirer: String,
    pub fake: String,
    pub shifted: bool,
    pub seeds: Vec<u64>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub cost_mean: f64,
    pub hit_rate_mean: f64,
}

impl CellSummary {
    pub fn cell(&self) -> String {
        format!("{:.4} ± {:.4}", self.accuracy_mean, self.accuracy_std)
    }
}

pub fn aggregate_seeds(records: &[RunRecord]) -> Result<CellSummary> {
    if records.len() < 2 {
        return Err(Error::invalid(format!(
            "aggregation needs at least 2 runs, got {}",
            records.len()
        )));
    }
    let first = &records[0];
    if let Some(other) = records.iter().find(|r| r.cell_hash != first.cell_hash) {
        return Err(Error::invalid(format!(
            "runs differ in more than the seed (cell {} vs {})",
            first.cell_hash, other.cell_hash
        )));
    }
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("aggregation got the same seed twice"));
    }
    let acc: Vec<f64> = records.iter().map(|r| r.test_accuracy).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&acc);
    let cost: Vec<f64> = records.iter().map(|r| r.test_cost).collect();
    let hit: Vec<f64> = records.iter().map(|r| r.test_real_hit_rate).collect();
    Ok(CellSummary {
        acquirer: first.acquirer.clone(),
        fake: first.fake.clone(),
        shifted: first.shifted,
        seeds,
        accuracy_mean,
        accuracy_std,
        cost_mean: mean_std(&cost).0,
        hit_rate_mean: mean_std(&hit).0,
    })
}

/// Every `record.json` below `dir`, in path order.
pub fn collect_records(dir: &Path) -> Result<Vec<RunRecord>> {
    fn walk(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == RECORD_JSON) {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::invalid(format!("no run records under {}", dir.display())));
    }
    paths.iter().map(|p| read_record(p)).collect()
}

fn label(acquirer: &str) -> &str {
    match acquirer {
        "random" => "Random",
        "static" => "Static (RF)",
        "learned" => "Learned",
        "complete" => "Complete",
        other => other,
    }
}

const FAKE_ORDER: [&str; 4] = ["none", "zeros", "noise", "gp"];

/// Accuracy grid (acquirer rows, one column per fake kind, or a single
/// `shifted` column) as CSV with `mean ± std` cells.
pub fn comparison_table(records: &[RunRecord], acquirers: &[&str]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::invalid("no runs to compare"));
    }
    let shifted = records.iter().any(|r| r.shifted);
    if records.iter().any(|r| r.shifted != shifted) {
        return Err(Error::invalid("cannot mix shifted and unshifted runs in one table"));
    }
    let columns: Vec<&str> = if shifted {
        let kinds: Vec<&str> = FAKE_ORDER
            .iter()
            .copied()
            .filter(|k| records.iter().any(|r| r.fake == *k))
            .collect();
        if kinds.len() != 1 {
            return Err(Error::invalid("shifted runs must share one fake kind"));
        }
        kinds
    } else {
        FAKE_ORDER
            .iter()
            .copied()
            .filter(|k| records.iter().any(|r| r.fake == *k))
            .collect()
    };
    let mut out = String::from("acquirer");
    for c in &columns {
        out.push(',');
        out.push_str(if shifted { "shifted" } else { c });
    }
    out.push('\n');
    for acq in acquirers {
        out.push_str(label(acq));
        for fake in &columns {
            let cell: Vec<RunRecord> = records
                .iter()
                .filter(|r| r.acquirer == *acq && r.fake == *fake)
                .cloned()
                .collect();
            if cell.is_empty() {
                return Err(Error::invalid(format!("missing runs for cell ({acq}, {fake})")));
            }
            out.push(',');
            out.push_str(&aggregate_seeds(&cell)?.cell());
        }
        out.push('\n');
    }
    Ok(out)
}
