use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Command, ExitCode, Stdio};
use std::time::Duration;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dagflow::runtime::Runtime;
use dagflow::transport::SocketConfig;
use dagflow::workloads::{self, RankOutcome, RunSpec, Workload};
use dagflow::{emit_timing_table, Error, ExecReport, TimingRow};

#[derive(Parser)]
#[command(name = "dagflow", version, about = "Run, verify, trace and time the bundled task-graph workloads")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one workload and print one JSON report per rank.
    Run(RunArgs),
    /// Time a workload over several rank and worker counts.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WorkloadArg {
    Gemm,
    Strassen,
    Sort,
    Fig1,
}

impl From<WorkloadArg> for Workload {
    fn from(w: WorkloadArg) -> Self {
        match w {
            WorkloadArg::Gemm => Workload::Gemm,
            WorkloadArg::Strassen => Workload::Strassen,
            WorkloadArg::Sort => Workload::Sort,
            WorkloadArg::Fig1 => Workload::Fig1,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Simulated,
    Sockets,
}

#[derive(Args, Clone)]
struct SizeArgs {
    /// Matrix edge, or number of integers for sort.
    #[arg(long)]
    n: Option<usize>,
    /// Tile edge.
    #[arg(long)]
    ib: Option<usize>,
    #[arg(long, default_value_t = 1)]
    np: usize,
    #[arg(long, default_value_t = 1)]
    nq: usize,
    #[arg(long, default_value_t = 8)]
    log_bins: u32,
    /// Integers per input document for sort.
    #[arg(long, default_value_t = 4096)]
    chunk: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Integer-valued matrix entries.
    #[arg(long)]
    integer: bool,
    /// Simulated delay per payload message.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// Count DAG recording time in wall_ms.
    #[arg(long)]
    include_recording: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(value_enum)]
    workload: WorkloadArg,
    #[command(flatten)]
    size: SizeArgs,
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = Mode::Simulated)]
    mode: Mode,
    /// Compare against the sequential oracle; exit 1 on mismatch.
    #[arg(long)]
    verify: bool,
    /// Write the DAG and transfer plans in DOT format.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Sockets mode: run only this rank.
    #[arg(long, requires = "peers")]
    rank_id: Option<usize>,
    /// Sockets mode: comma-separated host:port of every rank.
    #[arg(long, value_delimiter = ',')]
    peers: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    workload: WorkloadArg,
    #[command(flatten)]
    size: SizeArgs,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    workers: Vec<usize>,
    /// Best of this many runs per configuration.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
}

fn spec_from(workload: WorkloadArg, s: &SizeArgs, ranks: usize, workers: usize) -> RunSpec {
    let mut spec = RunSpec::new(workload.into());
    if let Some(n) = s.n {
        spec.n = n;
    }
    if let Some(ib) = s.ib {
        spec.ib = ib;
    } else if spec.workload == Workload::Fig1 {
        spec.ib = spec.n;
    }
    spec.np = s.np;
    spec.nq = s.nq;
    spec.log_bins = s.log_bins;
    spec.chunk = s.chunk;
    spec.seed = s.seed;
    spec.integer_payload = s.integer;
    spec.latency = Duration::from_millis(s.latency_ms);
    spec.include_recording = s.include_recording;
    spec.ranks = ranks;
    spec.workers = workers;
    spec
}

/// Exit status for a runtime failure.
fn failure(e: &Error) -> u8 {
    match e {
        Error::Shape(_) | Error::Domain(_) | Error::BadRank { .. } => 2,
        _ => 1,
    }
}

fn report_outcome(spec: &RunSpec, outcome: &RankOutcome, dot_path: Option<&PathBuf>) -> Result<bool> {
    if let (Some(path), Some(dot)) = (dot_path, &outcome.dot) {
        std::fs::write(path, dot).with_context(|| format!("writing {}", path.display()))?;
    }
    match (outcome.verified, outcome.max_rel_err) {
        (Some(ok), Some(err)) => {
            eprintln!(
                "verify {}: {} (max relative error {err:.3e}, tolerance {:.0e})",
                spec.workload,
                if ok { "ok" } else { "FAILED" },
                spec.workload.tolerance()
            );
            Ok(ok)
        }
        _ => Ok(true),
    }
}

fn run(args: RunArgs) -> Result<u8> {
    let mut spec = spec_from(args.workload, &args.size, args.ranks, args.workers);
    spec.verify = args.verify;
    spec.want_dot = args.dot.is_some();
    if let Err(e) = spec.validate() {
        eprintln!("error: {e}");
        return Ok(2);
    }
    match (args.mode, args.rank_id) {
        (Mode::Simulated, _) => match workloads::run_simulated(&spec) {
            Ok(run) => {
                for r in &run.reports {
                    println!("{}", r.to_json_line());
                }
                let mut ok = true;
                for o in &run.outcomes {
                    ok &= report_outcome(&spec, o, args.dot.as_ref())?;
                }
                Ok(if ok { 0 } else { 1 })
            }
            Err(e) => {
                eprintln!("error: {e}");
                Ok(failure(&e))
            }
        },
        (Mode::Sockets, Some(rank)) => {
            if args.peers.len() != spec.ranks {
                eprintln!("error: {} peers given for {} ranks", args.peers.len(), spec.ranks);
                return Ok(2);
            }
            let cfg = SocketConfig::new(rank, args.peers.clone());
            let rt = Runtime::simulated(spec.ranks)
                .workers(spec.workers)
                .include_recording(spec.include_recording);
            match rt.run_socket_rank(cfg, &|ctx| workloads::program(&spec, ctx)) {
                Ok((outcome, report)) => {
                    println!("{}", report.to_json_line());
                    Ok(if report_outcome(&spec, &outcome, args.dot.as_ref())? { 0 } else { 1 })
                }
                Err(e) => {
                    eprintln!("error: rank {rank}: {e}");
                    Ok(failure(&e))
                }
            }
        }
        (Mode::Sockets, None) => launch_local(&spec),
    }
}

/// Starts one child process per rank on localhost and relays their output.
fn launch_local(spec: &RunSpec) -> Result<u8> {
    let mut peers = Vec::with_capacity(spec.ranks);
    for _ in 0..spec.ranks {
        let l = TcpListener::bind("127.0.0.1:0")?;
        peers.push(l.local_addr()?.to_string());
    }
    let exe = std::env::current_exe()?;
    let forwarded: Vec<String> = std::env::args().skip(1).collect();
    let mut children = Vec::new();
    for rank in 0..spec.ranks {
        let child = Command::new(&exe)
            .args(&forwarded)
            .arg("--rank-id")
            .arg(rank.to_string())
            .arg("--peers")
            .arg(peers.join(","))
            .stdout(Stdio::piped())
            .spawn()
            .with_context(|| format!("spawning rank {rank}"))?;
        children.push(child);
    }
    let mut code = 0u8;
    let mut lines = Vec::new();
    for (rank, child) in children.into_iter().enumerate() {
        let out = child.wait_with_output()?;
        let stdout = String::from_utf8_lossy(&out.stdout);
        for line in stdout.lines() {
            if ExecReport::from_json_line(line).is_err() {
                bail!("rank {rank} printed a malformed report: {line}");
            }
            lines.push(line.to_string());
        }
        let c = out.status.code().unwrap_or(1) as u8;
        code = code.max(c);
    }
    for l in lines {
        println!("{l}");
    }
    Ok(code)
}

fn bench(args: BenchArgs) -> Result<u8> {
    let mut rows = Vec::new();
    for &ranks in &args.ranks {
        for &workers in &args.workers {
            let spec = spec_from(args.workload, &args.size, ranks, workers);
            if let Err(e) = spec.validate() {
                eprintln!("error: {e}");
                return Ok(2);
            }
            let mut best = f64::INFINITY;
            for _ in 0..args.repeat.max(1) {
                let run = match workloads::run_simulated(&spec) {
                    Ok(r) => r,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return Ok(failure(&e));
                    }
                };
                best = best.min(run.wall_ms());
            }
            rows.push(TimingRow {
                workload: spec.workload.to_string(),
                ranks,
                workers,
                wall_ms: best,
            });
        }
    }
    print!("{}", emit_timing_table(&rows));
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Cmd::Run(a) => run(a),
        Cmd::Bench(a) => bench(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
