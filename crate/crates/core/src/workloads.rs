//! The bundled workloads, each as an SPMD program with a built-in oracle.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;
use std::time::Duration;

use fnv::FnvHasher;

use crate::buffer::Layout;
use crate::context::Context;
use crate::dag::ArgMode::{Const, Mutable};
use crate::error::{Error, Result};
use crate::inputs::{integer_matrix, max_relative_error, naive_matmul, random_integers, random_matrix};
use crate::linalg::{distributed_gemm, gemm_tile, strassen, DistGemmConfig, TiledMatrix};
use crate::mapreduce::{sort_integers, SortConfig};
use crate::report::ExecReport;
use crate::runtime::Runtime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Workload {
    Gemm,
    Strassen,
    Sort,
    Fig1,
}

impl Workload {
    pub const ALL: [Workload; 4] = [Workload::Gemm, Workload::Strassen, Workload::Sort, Workload::Fig1];

    pub fn name(self) -> &'static str {
        match self {
            Workload::Gemm => "gemm",
            Workload::Strassen => "strassen",
            Workload::Sort => "sort",
            Workload::Fig1 => "fig1",
        }
    }

    /// Verification tolerance on the max relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            Workload::Gemm | Workload::Fig1 => 1e-12,
            Workload::Strassen => 1e-8,
            Workload::Sort => 0.0,
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Workload::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| format!("unknown workload `{s}`"))
    }
}

/// Parameters of one run. `n` is the matrix edge for the matrix workloads
/// and the number of integers for `sort`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub workload: Workload,
    pub n: usize,
    pub ib: usize,
    pub np: usize,
    pub nq: usize,
    pub log_bins: u32,
    pub chunk: usize,
    pub ranks: usize,
    pub workers: usize,
    pub seed: u64,
    pub verify: bool,
    pub want_dot: bool,
    pub latency: Duration,
    pub include_recording: bool,
    /// Integer-valued matrix entries, so results are exact under any
    /// summation order.
    pub integer_payload: bool,
}

impl RunSpec {
    pub fn new(workload: Workload) -> Self {
        let (n, ib) = match workload {
            Workload::Gemm => (256, 32),
            Workload::Strassen => (128, 32),
            Workload::Sort => (1_000_000, 32),
            Workload::Fig1 => (64, 64),
        };
        RunSpec {
            workload,
            n,
            ib,
            np: 1,
            nq: 1,
            log_bins: 8,
            chunk: 4096,
            ranks: 1,
            workers: 1,
            seed: 1,
            verify: false,
            want_dot: false,
            latency: Duration::ZERO,
            include_recording: false,
            integer_payload: false,
        }
    }

    /// Rejects parameter combinations the workload cannot run.
    pub fn validate(&self) -> Result<()> {
        if self.ranks == 0 || self.workers == 0 {
            return Err(Error::Shape("ranks and workers must be positive".into()));
        }
        match self.workload {
            Workload::Gemm | Workload::Strassen | Workload::Fig1 => {
                if self.ib == 0 || self.n == 0 || !self.n.is_multiple_of(self.ib) {
                    return Err(Error::Shape(format!("n={} is not a multiple of ib={}", self.n, self.ib)));
                }
                let nt = self.n / self.ib;
                if self.workload == Workload::Gemm && (self.np == 0 || self.nq == 0 || !nt.is_multiple_of(self.np) || !nt.is_multiple_of(self.nq)) {
                    return Err(Error::Shape(format!("{nt} tiles per side not divisible by np={} nq={}", self.np, self.nq)));
                }
                if self.workload == Workload::Strassen && !nt.is_power_of_two() {
                    return Err(Error::Shape(format!("{nt} tiles per side is not a power of two")));
                }
                if self.workload == Workload::Fig1 && self.n != self.ib {
                    return Err(Error::Shape("fig1 uses single-tile matrices: n must equal ib".into()));
                }
            }
            Workload::Sort => {
                if self.log_bins > 31 {
                    return Err(Error::Domain(format!("log_bins {} outside 0..=31", self.log_bins)));
                }
                if self.chunk == 0 {
                    return Err(Error::Domain("chunk must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn runtime(&self) -> Runtime {
        Runtime::simulated(self.ranks)
            .workers(self.workers)
            .latency(self.latency)
            .include_recording(self.include_recording)
    }
}

/// What one rank learned about the run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankOutcome {
    /// Hash of the gathered output bytes; set on rank 0 only.
    pub digest: Option<u64>,
    /// Oracle comparison on rank 0 when verification was requested.
    pub max_rel_err: Option<f64>,
    pub verified: Option<bool>,
    pub dot: Option<String>,
}

#[derive(Debug)]
pub struct WorkloadRun {
    pub spec: RunSpec,
    pub outcomes: Vec<RankOutcome>,
    pub reports: Vec<ExecReport>,
}

impl WorkloadRun {
    /// `Some(false)` if any rank's verification failed.
    pub fn verified(&self) -> Option<bool> {
        let flags: Vec<bool> = self.outcomes.iter().filter_map(|o| o.verified).collect();
        (!flags.is_empty()).then(|| flags.iter().all(|&f| f))
    }

    pub fn digest(&self) -> Option<u64> {
        self.outcomes.iter().find_map(|o| o.digest)
    }

    pub fn fingerprints(&self) -> Vec<u64> {
        self.reports.iter().map(|r| r.fingerprint).collect()
    }

    pub fn wall_ms(&self) -> f64 {
        self.reports.iter().map(|r| r.wall_ms).fold(0.0, f64::max)
    }
}

fn digest_bytes(chunks: impl IntoIterator<Item = Vec<u8>>) -> u64 {
    let mut h = FnvHasher::default();
    for c in chunks {
        h.write(&c);
    }
    h.finish()
}

fn digest_f64(values: &[f64]) -> u64 {
    digest_bytes(values.iter().map(|v| v.to_le_bytes().to_vec()))
}

fn matrices(spec: &RunSpec) -> (Vec<f64>, Vec<f64>) {
    let n = spec.n;
    if spec.integer_payload {
        (integer_matrix(n, n, spec.seed), integer_matrix(n, n, spec.seed.wrapping_add(1)))
    } else {
        (random_matrix(n, n, spec.seed), random_matrix(n, n, spec.seed.wrapping_add(1)))
    }
}

fn check_matrix(spec: &RunSpec, got: &[f64], a: &[f64], b: &[f64], out: &mut RankOutcome) {
    out.digest = Some(digest_f64(got));
    if spec.verify {
        let want = naive_matmul(a, b, spec.n, spec.n, spec.n);
        let err = max_relative_error(got, &want);
        out.max_rel_err = Some(err);
        out.verified = Some(err <= spec.workload.tolerance());
    }
}

fn gemm_program(spec: &RunSpec, ctx: &mut Context) -> Result<RankOutcome> {
    let (av, bv) = matrices(spec);
    let a = TiledMatrix::from_row_major(ctx, spec.n, spec.n, spec.ib, &av)?;
    let b = TiledMatrix::from_row_major(ctx, spec.n, spec.n, spec.ib, &bv)?;
    let c = TiledMatrix::zeros(ctx, spec.n, spec.n, spec.ib)?;
    let cfg = DistGemmConfig { np: spec.np, nq: spec.nq };
    distributed_gemm(ctx, &a, &b, &c, cfg)?;
    let mut out = RankOutcome::default();
    if let Some(got) = c.gather_to(ctx, 0)? {
        check_matrix(spec, &got, &av, &bv, &mut out);
    }
    Ok(out)
}

fn strassen_program(spec: &RunSpec, ctx: &mut Context) -> Result<RankOutcome> {
    let (av, bv) = matrices(spec);
    let a = TiledMatrix::from_row_major(ctx, spec.n, spec.n, spec.ib, &av)?;
    let b = TiledMatrix::from_row_major(ctx, spec.n, spec.n, spec.ib, &bv)?;
    let c = TiledMatrix::zeros(ctx, spec.n, spec.n, spec.ib)?;
    strassen(ctx, &a, &b, &c)?;
    let mut out = RankOutcome::default();
    if let Some(got) = c.gather_to(ctx, 0)? {
        check_matrix(spec, &got, &av, &bv, &mut out);
    }
    Ok(out)
}

fn sort_program(spec: &RunSpec, ctx: &mut Context) -> Result<RankOutcome> {
    let values = random_integers(spec.n, spec.seed);
    let cfg = SortConfig {
        log_bins: spec.log_bins,
        chunk: spec.chunk,
    };
    let mut out = RankOutcome::default();
    if let Some(sorted) = sort_integers(ctx, &values, cfg)? {
        out.digest = Some(digest_bytes(sorted.iter().map(|v| v.to_le_bytes().to_vec())));
        if spec.verify {
            let mut want = values;
            want.sort_unstable();
            let ok = sorted == want;
            out.max_rel_err = Some(if ok { 0.0 } else { 1.0 });
            out.verified = Some(ok);
        }
    }
    Ok(out)
}

/// Number of multiplies before and after the scale in the two-family
/// pattern.
pub const FIG1_BEFORE: usize = 3;
pub const FIG1_AFTER: usize = 2;
pub const FIG1_SCALE: f64 = 2.0;

/// `FIG1_BEFORE` products `y_i = a * x_i`, then `a *= FIG1_SCALE`, then
/// `FIG1_AFTER` more products with the scaled `a`. Records on the current
/// scope and returns the output handles in order.
pub fn record_fig1(ctx: &mut Context, n: usize, seed: u64, integer: bool) -> Result<(crate::Handle, Vec<crate::Handle>)> {
    let gen = |s: u64| if integer { integer_matrix(n, n, s) } else { random_matrix(n, n, s) };
    let gemm = ctx.kernel_or_declare("gemm", vec![Const, Const, Mutable], |args| {
        let (c, ins) = args.split_mut(2)?;
        let c = c.as_f64_mut().ok_or("c is not f64")?;
        let ib = (c.len() as f64).sqrt().round() as usize;
        gemm_tile(ins.f64(0)?, ins.f64(1)?, c, ib);
        Ok(())
    })?;
    let scale = ctx.kernel_or_declare("scale", vec![Mutable], |args| {
        for v in args.f64_mut(0)? {
            *v *= FIG1_SCALE;
        }
        Ok(())
    })?;
    let a = ctx.literal_f64(to_col_major(&gen(seed), n))?;
    let mut ys = Vec::new();
    for i in 0..FIG1_BEFORE + FIG1_AFTER {
        if i == FIG1_BEFORE {
            ctx.call(&scale, &[a])?;
        }
        let x = ctx.literal_f64(to_col_major(&gen(seed + 1 + i as u64), n))?;
        let y = ctx.zeros(Layout::f64(n * n))?;
        ctx.call(&gemm, &[a, x, y])?;
        ys.push(y);
    }
    Ok((a, ys))
}

fn to_col_major(row_major: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[r + c * n] = row_major[r * n + c];
        }
    }
    out
}

fn fig1_program(spec: &RunSpec, ctx: &mut Context) -> Result<RankOutcome> {
    let n = spec.n;
    let (_, ys) = record_fig1(ctx, n, spec.seed, spec.integer_payload)?;
    ctx.sync()?;
    let mut out = RankOutcome::default();
    if spec.want_dot && ctx.rank() == 0 {
        out.dot = Some(ctx.to_dot(true));
    }
    let mut got = Vec::new();
    for &y in &ys {
        if let Some(buf) = ctx.fetch_to(y, 0)? {
            got.extend_from_slice(buf.as_f64().ok_or(Error::ElemType { object: y.id() })?);
        }
    }
    if ctx.rank() == 0 {
        out.digest = Some(digest_f64(&got));
        if spec.verify {
            let gen = |s: u64| {
                if spec.integer_payload {
                    integer_matrix(n, n, s)
                } else {
                    random_matrix(n, n, s)
                }
            };
            let a0 = to_col_major(&gen(spec.seed), n);
            let mut want = Vec::new();
            for i in 0..FIG1_BEFORE + FIG1_AFTER {
                let a: Vec<f64> = if i < FIG1_BEFORE {
                    a0.clone()
                } else {
                    a0.iter().map(|v| v * FIG1_SCALE).collect()
                };
                let x = to_col_major(&gen(spec.seed + 1 + i as u64), n);
                let mut y = vec![0.0; n * n];
                gemm_tile(&a, &x, &mut y, n);
                want.extend(y);
            }
            let err = max_relative_error(&got, &want);
            out.max_rel_err = Some(err);
            out.verified = Some(err <= spec.workload.tolerance());
        }
    }
    Ok(out)
}

/// The SPMD program for `spec`, run identically on every rank.
pub fn program(spec: &RunSpec, ctx: &mut Context) -> Result<RankOutcome> {
    let mut out = match spec.workload {
        Workload::Gemm => gemm_program(spec, ctx)?,
        Workload::Strassen => strassen_program(spec, ctx)?,
        Workload::Sort => sort_program(spec, ctx)?,
        Workload::Fig1 => fig1_program(spec, ctx)?,
    };
    if spec.want_dot && ctx.rank() == 0 && out.dot.is_none() {
        out.dot = Some(ctx.to_dot(true));
    }
    Ok(out)
}

/// Validates `spec` and runs it on simulated ranks.
pub fn run_simulated(spec: &RunSpec) -> Result<WorkloadRun> {
    spec.validate()?;
    let out = spec.runtime().run(|ctx| program(spec, ctx))?;
    Ok(WorkloadRun {
        spec: spec.clone(),
        outcomes: out.values,
        reports: out.reports,
    })
}

/// Validates `spec` and runs it with every rank on loopback TCP.
pub fn run_loopback(spec: &RunSpec) -> Result<WorkloadRun> {
    spec.validate()?;
    let out = spec.runtime().run_loopback(|ctx| program(spec, ctx))?;
    Ok(WorkloadRun {
        spec: spec.clone(),
        outcomes: out.values,
        reports: out.reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(w: Workload) -> RunSpec {
        let mut s = RunSpec::new(w);
        s.verify = true;
        match w {
            Workload::Gemm => {
                s.n = 32;
                s.ib = 8;
            }
            Workload::Strassen => {
                s.n = 32;
                s.ib = 8;
            }
            Workload::Sort => s.n = 5000,
            Workload::Fig1 => {
                s.n = 8;
                s.ib = 8;
            }
        }
        s
    }

    #[test]
    fn all_workloads_verify() {
        for w in Workload::ALL {
            for ranks in [1, 3] {
                let mut s = small(w);
                s.ranks = ranks;
                s.workers = 2;
                let run = run_simulated(&s).unwrap();
                assert_eq!(run.verified(), Some(true), "{w} on {ranks} ranks");
            }
        }
    }

    #[test]
    fn fig1_copies_once() {
        let run = run_simulated(&small(Workload::Fig1)).unwrap();
        assert_eq!(run.reports[0].copies, 1);
        assert_eq!(run.reports[0].bytes_copied, 8 * 8 * 8);
    }

    #[test]
    fn invalid_specs() {
        let mut s = RunSpec::new(Workload::Gemm);
        s.n = 100;
        assert!(s.validate().is_err());
        let mut s = RunSpec::new(Workload::Strassen);
        s.n = 96;
        assert!(s.validate().is_err());
        let mut s = RunSpec::new(Workload::Sort);
        s.log_bins = 32;
        assert!(s.validate().is_err());
        assert_eq!("sort".parse::<Workload>(), Ok(Workload::Sort));
        assert!("fft".parse::<Workload>().is_err());
    }
}
