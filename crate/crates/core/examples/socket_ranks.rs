//! The same program over real TCP connections on loopback, one thread per
//! rank, compared with the in-process fabric.

use dagflow::workloads::{run_loopback, run_simulated, RunSpec, Workload};

fn main() -> dagflow::Result<()> {
    let mut spec = RunSpec::new(Workload::Gemm);
    spec.n = 96;
    spec.ib = 32;
    spec.ranks = 3;
    spec.np = 3;
    spec.verify = true;
    let tcp = run_loopback(&spec)?;
    let sim = run_simulated(&spec)?;
    println!("verified over tcp: {:?}", tcp.verified());
    println!("digests equal: {}", tcp.digest() == sim.digest());
    for r in &tcp.reports {
        println!("{}", r.to_json_line());
    }
    Ok(())
}
