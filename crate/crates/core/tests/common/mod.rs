//! Random small programs and a sequential interpreter for them.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use dagflow::inputs::InputRng;
use dagflow::{ArgMode, Context, Handle, Kernel, Runtime};

pub const WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Bump,
    Mix,
    Sum,
    Peek,
}

#[derive(Debug, Clone)]
pub struct Step {
    pub kind: Kind,
    pub args: Vec<usize>,
    pub rank: Option<usize>,
    pub sync_after: bool,
}

#[derive(Debug, Clone)]
pub struct Program {
    pub ranks: usize,
    pub init: Vec<Vec<i32>>,
    pub steps: Vec<Step>,
}

impl Program {
    pub fn generate(seed: u64, ranks: usize, ops: usize) -> Self {
        let mut rng = InputRng::new(seed);
        let mut pick = |n: usize| (rng.next_u64() % n as u64) as usize;
        let objects = 4 + pick(9);
        let init = (0..objects)
            .map(|o| (0..WIDTH).map(|i| (o * 10 + i) as i32).collect())
            .collect();
        let mut steps = Vec::with_capacity(ops);
        for _ in 0..ops {
            let kind = [Kind::Bump, Kind::Mix, Kind::Sum, Kind::Peek][pick(4)];
            let first = pick(objects);
            let other = (first + 1 + pick(objects - 1)) % objects;
            let args = match kind {
                Kind::Bump | Kind::Peek => vec![first],
                Kind::Mix => vec![first, other],
                Kind::Sum => vec![other, if pick(2) == 0 { other } else { pick_not(first, other, objects, pick(objects)) }, first],
            };
            let rank = if pick(5) == 0 { None } else { Some(pick(ranks)) };
            steps.push(Step {
                kind,
                args,
                rank,
                sync_after: pick(40) == 0,
            });
        }
        Program { ranks, init, steps }
    }

    /// Final contents of every object, computed in program order.
    pub fn oracle(&self) -> Vec<Vec<i32>> {
        let mut state = self.init.clone();
        for s in &self.steps {
            match s.kind {
                Kind::Bump => bump(&mut state[s.args[0]]),
                Kind::Mix => {
                    let src = state[s.args[1]].clone();
                    mix(&mut state[s.args[0]], &src);
                }
                Kind::Sum => {
                    let (a, b) = (state[s.args[0]].clone(), state[s.args[1]].clone());
                    sum(&a, &b, &mut state[s.args[2]]);
                }
                Kind::Peek => {}
            }
        }
        state
    }

    pub fn locally_placed(&self, rank: usize) -> usize {
        self.steps.iter().filter(|s| s.rank.unwrap_or(0) == rank).count()
    }
}

fn pick_not(a: usize, b: usize, n: usize, start: usize) -> usize {
    (0..n).map(|i| (start + i) % n).find(|&x| x != a).unwrap_or(b)
}

fn bump(a: &mut [i32]) {
    for (i, v) in a.iter_mut().enumerate() {
        *v = v.wrapping_mul(5).wrapping_add(i as i32 + 1);
    }
}

fn mix(d: &mut [i32], s: &[i32]) {
    for (d, s) in d.iter_mut().zip(s) {
        *d = (d.wrapping_mul(3) ^ s).wrapping_add(1);
    }
}

fn sum(a: &[i32], b: &[i32], c: &mut [i32]) {
    for ((c, a), b) in c.iter_mut().zip(a).zip(b) {
        *c = a.wrapping_add(b.wrapping_mul(2));
    }
}

struct Kernels {
    bump: Kernel,
    mix: Kernel,
    sum: Kernel,
    peek: Kernel,
}

fn declare(ctx: &mut Context, calls: Arc<AtomicUsize>) -> dagflow::Result<Kernels> {
    let c = calls.clone();
    let bump_k = ctx.declare_kernel("bump", vec![ArgMode::Mutable], move |a| {
        c.fetch_add(1, Ordering::Relaxed);
        bump(a.i32_mut(0)?);
        Ok(())
    })?;
    let c = calls.clone();
    let mix_k = ctx.declare_kernel("mix", vec![ArgMode::Mutable, ArgMode::Const], move |a| {
        c.fetch_add(1, Ordering::Relaxed);
        let (d, ins) = a.split_mut(0)?;
        let s = ins.get(1).as_i32().ok_or("src is not i32")?;
        mix(d.as_i32_mut().ok_or("dst is not i32")?, s);
        Ok(())
    })?;
    let c = calls.clone();
    let sum_k = ctx.declare_kernel("sum", vec![ArgMode::Const, ArgMode::Const, ArgMode::Mutable], move |a| {
        c.fetch_add(1, Ordering::Relaxed);
        let (out, ins) = a.split_mut(2)?;
        let x = ins.get(0).as_i32().ok_or("a is not i32")?;
        let y = ins.get(1).as_i32().ok_or("b is not i32")?;
        sum(x, y, out.as_i32_mut().ok_or("c is not i32")?);
        Ok(())
    })?;
    let c = calls;
    let peek_k = ctx.declare_kernel("peek", vec![ArgMode::Const], move |_| {
        c.fetch_add(1, Ordering::Relaxed);
        Ok(())
    })?;
    Ok(Kernels {
        bump: bump_k,
        mix: mix_k,
        sum: sum_k,
        peek: peek_k,
    })
}

/// What one rank saw.
#[derive(Debug, Clone)]
pub struct RankResult {
    pub rank: usize,
    /// Kernel invocations counted inside the bodies.
    pub invocations: usize,
    /// Ops the rank's DAG places on it, including the final observers.
    pub placed: usize,
    pub ops_run: usize,
    /// Final object contents, on rank 0 only.
    pub values: Option<Vec<Vec<i32>>>,
}

pub fn record(ctx: &mut Context, prog: &Program, calls: Arc<AtomicUsize>) -> dagflow::Result<Vec<Handle>> {
    let k = declare(ctx, calls)?;
    let mut handles = Vec::new();
    for v in &prog.init {
        handles.push(ctx.literal_i32(v.clone())?);
    }
    for s in &prog.steps {
        let kernel = match s.kind {
            Kind::Bump => &k.bump,
            Kind::Mix => &k.mix,
            Kind::Sum => &k.sum,
            Kind::Peek => &k.peek,
        };
        let args: Vec<Handle> = s.args.iter().map(|&i| handles[i]).collect();
        match s.rank {
            Some(r) => ctx.scoped(r, |ctx| ctx.call(kernel, &args))?,
            None => ctx.call(kernel, &args)?,
        };
        if s.sync_after {
            ctx.sync()?;
        }
    }
    Ok(handles)
}

pub fn run(prog: &Program, workers: usize) -> dagflow::Result<Vec<RankResult>> {
    let out = Runtime::simulated(prog.ranks).workers(workers).run(|ctx| {
        let calls = Arc::new(AtomicUsize::new(0));
        let handles = record(ctx, prog, calls.clone())?;
        for &h in &handles {
            ctx.observe_on(h, 0)?;
        }
        ctx.sync()?;
        let values = if ctx.rank() == 0 {
            let mut v = Vec::new();
            for &h in &handles {
                v.push(ctx.payload(h)?.as_i32().expect("i32 payload").to_vec());
            }
            Some(v)
        } else {
            None
        };
        let me = ctx.rank();
        let placed = ctx.dag().ops().iter().filter(|o| o.placement == me).count();
        Ok((calls, placed, values))
    })?;
    Ok(out
        .values
        .into_iter()
        .zip(out.reports)
        .map(|((calls, placed, values), rep)| RankResult {
            rank: rep.rank,
            invocations: calls.load(Ordering::Relaxed),
            placed,
            ops_run: rep.ops_run,
            values,
        })
        .collect())
}

/// One revision produced on `source` and read on each rank in `consumers`.
/// Returns total data messages sent and the plan's tree depth.
pub fn broadcast_once(ranks: usize, source: usize, consumers: &[usize]) -> dagflow::Result<(usize, usize)> {
    let consumers = consumers.to_vec();
    let out = Runtime::simulated(ranks).run(move |ctx| {
        let fill = ctx.declare_kernel("fill", vec![ArgMode::Mutable], |a| {
            a.f64_mut(0)?.fill(1.5);
            Ok(())
        })?;
        let read = ctx.declare_kernel("read", vec![ArgMode::Const, ArgMode::Mutable], |a| {
            let (o, ins) = a.split_mut(1)?;
            o.as_f64_mut().ok_or("not f64")?[0] = ins.f64(0)?[0];
            Ok(())
        })?;
        let x = ctx.scoped(source, |ctx| ctx.zeros(dagflow::Layout::f64(16)))?;
        ctx.scoped(source, |ctx| ctx.call(&fill, &[x]))?;
        for &r in &consumers {
            let o = ctx.scoped(r, |ctx| ctx.zeros(dagflow::Layout::f64(1)))?;
            ctx.scoped(r, |ctx| ctx.call(&read, &[x, o]))?;
        }
        ctx.sync()?;
        Ok(ctx.plans().iter().map(|p| p.depth()).max().unwrap_or(0))
    })?;
    let messages = out.reports.iter().map(|r| r.messages_sent).sum();
    Ok((messages, out.values[0]))
}

/// Rank 0 produces `transfers` independent objects, each read by its own
/// rank. Returns the slowest rank's wall time in milliseconds.
pub fn fan_out_wall_ms(transfers: usize, latency: std::time::Duration) -> dagflow::Result<f64> {
    let out = Runtime::simulated(transfers + 1).latency(latency).run(|ctx| {
        let fill = ctx.declare_kernel("fill", vec![ArgMode::Mutable], |a| {
            a.f64_mut(0)?.fill(2.0);
            Ok(())
        })?;
        let read = ctx.declare_kernel("read", vec![ArgMode::Const, ArgMode::Mutable], |a| {
            let (o, ins) = a.split_mut(1)?;
            o.as_f64_mut().ok_or("not f64")?[0] = ins.f64(0)?.iter().sum();
            Ok(())
        })?;
        for r in 1..=transfers {
            let x = ctx.scoped(0, |ctx| ctx.zeros(dagflow::Layout::f64(1024)))?;
            ctx.scoped(0, |ctx| ctx.call(&fill, &[x]))?;
            let o = ctx.scoped(r, |ctx| ctx.zeros(dagflow::Layout::f64(1)))?;
            ctx.scoped(r, |ctx| ctx.call(&read, &[x, o]))?;
        }
        ctx.sync()
    })?;
    Ok(out.reports.iter().map(|r| r.wall_ms).fold(0.0, f64::max))
}

/// 2x2 wrapping integer matrix product: associative, not commutative.
pub fn mat2(a: [i64; 4], b: [i64; 4]) -> [i64; 4] {
    let m = |x: i64, y: i64| x.wrapping_mul(y);
    [
        m(a[0], b[0]).wrapping_add(m(a[1], b[2])),
        m(a[0], b[1]).wrapping_add(m(a[1], b[3])),
        m(a[2], b[0]).wrapping_add(m(a[3], b[2])),
        m(a[2], b[1]).wrapping_add(m(a[3], b[3])),
    ]
}

pub fn reduction_input(i: usize) -> [i64; 4] {
    let i = i as i64;
    [i + 1, 2 * i + 3, i * i - 1, 7 - i]
}

pub struct ReductionOutcome {
    pub combines: usize,
    pub levels: usize,
    /// Combine ops found in the DAG.
    pub recorded: usize,
    pub result: [i64; 4],
    pub left_fold: [i64; 4],
}

/// Reduces `n` replicas spread over `ranks` ranks with a non-commutative
/// product and compares against a left fold.
pub fn reduce_replicas(n: usize, ranks: usize) -> dagflow::Result<ReductionOutcome> {
    let out = Runtime::simulated(ranks).run(|ctx| {
        let k = ctx.declare_kernel("mat2", vec![ArgMode::Mutable, ArgMode::Const], |a| {
            let (d, ins) = a.split_mut(0)?;
            let s = ins.get(1).as_raw().ok_or("not raw")?;
            let d = d.as_raw_mut().ok_or("not raw")?;
            let r = mat2(decode4(d), decode4(s));
            *d = encode4(r);
            Ok(())
        })?;
        let mut reps = Vec::new();
        for i in 0..n {
            let h = ctx.scoped(i % ranks, |ctx| ctx.literal_raw(encode4(reduction_input(i))))?;
            reps.push(h);
        }
        let red = dagflow::apply_reduction_schedule(ctx, &reps, &k, |dst| Some(dst % ranks))?;
        let recorded = ctx.dag().ops().iter().filter(|o| o.kernel.name == "mat2").count();
        let buf = ctx.fetch_to(red.result, 0)?;
        Ok((red, recorded, buf.map(|b| decode4(b.as_raw().unwrap()))))
    })?;
    let (red, recorded, result) = out.values.into_iter().next().unwrap();
    let left_fold = (1..n).fold(reduction_input(0), |acc, i| mat2(acc, reduction_input(i)));
    Ok(ReductionOutcome {
        combines: red.combines,
        levels: red.levels,
        recorded,
        result: result.unwrap(),
        left_fold,
    })
}

fn encode4(v: [i64; 4]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn decode4(b: &[u8]) -> [i64; 4] {
    let mut out = [0; 4];
    for (i, c) in b.chunks_exact(8).enumerate() {
        out[i] = i64::from_le_bytes(c.try_into().unwrap());
    }
    out
}

pub fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}
