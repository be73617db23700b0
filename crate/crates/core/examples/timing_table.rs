//! Times the bundled workloads on a few rank and worker counts and prints
//! the comparison table.

use dagflow::workloads::{run_simulated, RunSpec, Workload};
use dagflow::{emit_timing_table, TimingRow};

fn main() -> dagflow::Result<()> {
    let mut rows = Vec::new();
    for w in Workload::ALL {
        for (ranks, workers) in [(1, 1), (1, 4), (2, 2)] {
            let mut spec = RunSpec::new(w);
            if w == Workload::Sort {
                spec.n = 200_000;
            }
            spec.ranks = ranks;
            spec.workers = workers;
            let run = run_simulated(&spec)?;
            rows.push(TimingRow {
                workload: w.to_string(),
                ranks,
                workers,
                wall_ms: run.wall_ms(),
            });
        }
    }
    print!("{}", emit_timing_table(&rows));
    Ok(())
}
