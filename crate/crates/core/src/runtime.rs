//! Launching SPMD programs: one [`Context`] per rank, all running the same
//! closure.

use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use crate::context::Context;
use crate::error::{Error, Result};
use crate::report::ExecReport;
use crate::transport::{connect_mesh, simulated_fabric, Endpoint, SocketConfig};

#[derive(Debug, Clone)]
pub struct Runtime {
    ranks: usize,
    workers: usize,
    latency: Duration,
    include_recording: bool,
}

#[derive(Debug)]
pub struct RunOutput<T> {
    /// Program return value per rank, indexed by rank.
    pub values: Vec<T>,
    pub reports: Vec<ExecReport>,
}

impl Runtime {
    /// `ranks` simulated ranks in this process.
    pub fn simulated(ranks: usize) -> Self {
        Runtime {
            ranks: ranks.max(1),
            workers: 1,
            latency: Duration::ZERO,
            include_recording: false,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    /// Delay applied to every simulated payload message.
    pub fn latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn include_recording(mut self, yes: bool) -> Self {
        self.include_recording = yes;
        self
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    /// Runs `program` on every simulated rank and joins them.
    pub fn run<T, F>(&self, program: F) -> Result<RunOutput<T>>
    where
        T: Send,
        F: Fn(&mut Context) -> Result<T> + Sync,
    {
        let endpoints = simulated_fabric(self.ranks, self.latency);
        self.run_endpoints(endpoints, &program)
    }

    /// Same as [`Runtime::run`] but every rank talks over loopback TCP.
    pub fn run_loopback<T, F>(&self, program: F) -> Result<RunOutput<T>>
    where
        T: Send,
        F: Fn(&mut Context) -> Result<T> + Sync,
    {
        let listeners = (0..self.ranks)
            .map(|_| TcpListener::bind("127.0.0.1:0"))
            .collect::<std::io::Result<Vec<_>>>()?;
        let peers = listeners
            .iter()
            .map(|l| l.local_addr().map(|a| a.to_string()))
            .collect::<std::io::Result<Vec<_>>>()?;
        let endpoints = thread::scope(|s| {
            let joins: Vec<_> = listeners
                .into_iter()
                .enumerate()
                .map(|(rank, l)| {
                    let mut cfg = SocketConfig::new(rank, peers.clone());
                    cfg.listener = Some(l);
                    s.spawn(move || connect_mesh(cfg))
                })
                .collect();
            joins
                .into_iter()
                .map(|j| j.join().expect("mesh thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        self.run_endpoints(endpoints, &program)
    }

    fn run_endpoints<T, F>(&self, endpoints: Vec<Endpoint>, program: &F) -> Result<RunOutput<T>>
    where
        T: Send,
        F: Fn(&mut Context) -> Result<T> + Sync,
    {
        let results: Vec<Result<(T, ExecReport)>> = thread::scope(|s| {
            let joins: Vec<_> = endpoints
                .into_iter()
                .map(|ep| s.spawn(move || self.run_rank(ep, program)))
                .collect();
            joins
                .into_iter()
                .map(|j| j.join().expect("rank thread panicked"))
                .collect()
        });

        let mut values = Vec::with_capacity(results.len());
        let mut reports = Vec::with_capacity(results.len());
        let mut errors = Vec::new();
        for r in results {
            match r {
                Ok((v, rep)) => {
                    values.push(v);
                    reports.push(rep);
                }
                Err(e) => errors.push(e),
            }
        }
        if !errors.is_empty() {
            return Err(root_cause(errors));
        }
        check_fingerprints(&reports)?;
        Ok(RunOutput { values, reports })
    }

    /// Runs one rank of the program on an existing endpoint.
    pub fn run_rank<T, F>(&self, endpoint: Endpoint, program: &F) -> Result<(T, ExecReport)>
    where
        F: Fn(&mut Context) -> Result<T>,
    {
        let mut ctx = Context::new(endpoint, self.workers);
        ctx.include_recording(self.include_recording);
        let value = program(&mut ctx)?;
        let report = ctx.finish()?;
        Ok((value, report))
    }

    /// Runs one rank of a multi-process job; `cfg` names every peer.
    pub fn run_socket_rank<T, F>(&self, cfg: SocketConfig, program: &F) -> Result<(T, ExecReport)>
    where
        F: Fn(&mut Context) -> Result<T>,
    {
        let ep = connect_mesh(cfg)?;
        self.run_rank(ep, program)
    }
}

/// Errors on other ranks are usually echoes of the first failure; prefer
/// the one that is not.
fn root_cause(mut errors: Vec<Error>) -> Error {
    let echo = |e: &Error| matches!(e, Error::RemoteAbort { .. } | Error::TransportDown(_));
    match errors.iter().position(|e| !echo(e)) {
        Some(i) => errors.swap_remove(i),
        None => errors.swap_remove(0),
    }
}

/// All ranks must finish with the same DAG.
pub fn check_fingerprints(reports: &[ExecReport]) -> Result<()> {
    if let Some(first) = reports.first() {
        for r in reports {
            if r.fingerprint != first.fingerprint || r.epochs != first.epochs {
                return Err(Error::DivergedDag(format!(
                    "rank {} finished with {:016x} after {} epochs, rank {} with {:016x} after {}",
                    first.rank, first.fingerprint, first.epochs, r.rank, r.fingerprint, r.epochs
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::ArgMode::{Const, Mutable};

    #[test]
    fn two_rank_transfer() {
        let out = Runtime::simulated(2)
            .workers(2)
            .run(|ctx| {
                let dbl = ctx.declare_kernel("dbl", vec![Mutable], |a| {
                    for x in a.f64_mut(0)? {
                        *x *= 2.0;
                    }
                    Ok(())
                })?;
                let sum = ctx.declare_kernel("sum", vec![Mutable, Const], |a| {
                    let (out, ins) = a.split_mut(0)?;
                    let s: f64 = ins.f64(1)?.iter().sum();
                    out.as_f64_mut().unwrap()[0] = s;
                    Ok(())
                })?;
                let x = ctx.literal_f64(vec![1.0, 2.0])?;
                let y = ctx.unset(crate::buffer::Layout::f64(1))?;
                ctx.call(&dbl, &[x])?;
                ctx.scoped(1, |ctx| ctx.call(&sum, &[y, x]))?;
                let v = ctx.fetch(y)?;
                Ok(v.as_f64().unwrap()[0])
            })
            .unwrap();
        assert_eq!(out.values, vec![6.0, 6.0]);
        assert_eq!(out.reports[0].messages_sent, 1);
        assert_eq!(out.reports[1].messages_sent, 1);
    }

    #[test]
    fn diverged_program_detected() {
        let err = Runtime::simulated(2)
            .run(|ctx| {
                let k = ctx.declare_kernel("k", vec![Mutable], |_| Ok(()))?;
                let x = ctx.literal_f64(vec![0.0])?;
                ctx.call(&k, &[x])?;
                if ctx.rank() == 1 {
                    ctx.call(&k, &[x])?;
                }
                ctx.sync()
            })
            .unwrap_err();
        assert!(matches!(err, Error::DivergedDag(_)), "{err}");
    }

    #[test]
    fn loopback_matches_simulated() {
        let program = |ctx: &mut Context| {
            let inc = ctx.declare_kernel("inc", vec![Mutable], |a| {
                a.f64_mut(0)?[0] += 1.0;
                Ok(())
            })?;
            let x = ctx.literal_f64(vec![0.0])?;
            for r in 0..ctx.ranks() {
                ctx.scoped(r, |ctx| ctx.call(&inc, &[x]))?;
            }
            Ok(ctx.fetch(x)?.as_f64().unwrap()[0])
        };
        let sim = Runtime::simulated(3).run(program).unwrap();
        let tcp = Runtime::simulated(3).run_loopback(program).unwrap();
        assert_eq!(sim.values, vec![3.0; 3]);
        assert_eq!(tcp.values, sim.values);
    }
}
