use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::RankId;

/// Per-rank execution summary. Serializes to a one-line JSON record with
/// `rank`, `ops_run`, `bytes_copied` and `wall_ms`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecReport {
    pub rank: RankId,
    pub ops_run: usize,
    pub bytes_copied: u64,
    pub wall_ms: f64,
    #[serde(skip)]
    pub copies: usize,
    #[serde(skip)]
    pub per_worker: Vec<usize>,
    #[serde(skip)]
    pub peak_ready: usize,
    #[serde(skip)]
    pub messages_sent: usize,
    #[serde(skip)]
    pub bytes_sent: u64,
    #[serde(skip)]
    pub epochs: u64,
    #[serde(skip)]
    pub recording_ms: f64,
    #[serde(skip)]
    pub fingerprint: u64,
}

impl ExecReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub workload: String,
    pub ranks: usize,
    pub workers: usize,
    pub wall_ms: f64,
}

/// Fixed-width table. The speedup column is relative to the P=1, W=1 row
/// of the same workload and is left out unless every workload has one.
pub fn emit_timing_table(rows: &[TimingRow]) -> String {
    let baseline = |w: &str| {
        rows.iter()
            .find(|r| r.workload == w && r.ranks == 1 && r.workers == 1)
            .map(|r| r.wall_ms)
    };
    let with_speedup = rows.iter().all(|r| baseline(&r.workload).is_some());
    let mut out = format!("{:<10} {:>4} {:>4} {:>12}", "workload", "P", "W", "wall_ms");
    if with_speedup {
        out.push_str(&format!(" {:>8}", "speedup"));
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<10} {:>4} {:>4} {:>12.3}", r.workload, r.ranks, r.workers, r.wall_ms);
        if with_speedup {
            let base = baseline(&r.workload).unwrap();
            let _ = write!(out, " {:>8.2}", base / r.wall_ms);
        }
        out.push('\n');
    }
    out
}
