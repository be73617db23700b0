//! One line per acceptance criterion: PASS, FAIL or NOT APPLICABLE.
//! Exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{broadcast_once, ceil_log2, fan_out_wall_ms, reduce_replicas, Program};
use dagflow::inputs::{max_relative_error, naive_matmul, random_matrix};
use dagflow::linalg::{strassen, TiledMatrix};
use dagflow::workloads::{run_simulated, RunSpec, Workload};
use dagflow::{ArgMode, Context};

enum Verdict {
    Pass(String),
    Fail(String),
    NotApplicable(String),
}

use Verdict::{Fail, NotApplicable, Pass};

type Criterion = fn() -> Verdict;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn listed(problems: &[String]) -> String {
    if problems.is_empty() {
        String::new()
    } else {
        format!("; {}", problems.join("; "))
    }
}

fn attempt(f: impl FnOnce() -> dagflow::Result<Verdict>) -> Verdict {
    f().unwrap_or_else(|e| Fail(format!("error: {e}")))
}

fn cluster_scale() -> Verdict {
    NotApplicable("absolute throughput at hundreds of cores, 8192-wide matrices and 10^9-integer sorts needs a multi-node cluster; covered by the checks below instead".into())
}

fn gemm_oracle() -> Verdict {
    attempt(|| {
        let mut worst = 0.0f64;
        let mut slowest = Duration::ZERO;
        let mut all_ok = true;
        for (ranks, np, nq) in [(1, 1, 1), (4, 2, 2)] {
            for workers in [1, 8] {
                let mut spec = RunSpec::new(Workload::Gemm);
                spec.n = 256;
                spec.ib = 32;
                spec.ranks = ranks;
                spec.np = np;
                spec.nq = nq;
                spec.workers = workers;
                spec.verify = true;
                let t = Instant::now();
                let run = run_simulated(&spec)?;
                let took = t.elapsed();
                let err = run.outcomes[0].max_rel_err.unwrap_or(f64::INFINITY);
                worst = worst.max(err);
                slowest = slowest.max(took);
                all_ok &= err <= 1e-12 && took < Duration::from_secs(10);
            }
        }
        Ok(check(all_ok, format!("max rel err {worst:.2e} (<= 1e-12), slowest {:.2} s (< 10 s)", slowest.as_secs_f64())))
    })
}

fn strassen_oracle() -> Verdict {
    attempt(|| {
        let (n, ib) = (128, 32);
        let t = Instant::now();
        let av = random_matrix(n, n, 21);
        let bv = random_matrix(n, n, 22);
        let mut ctx = Context::solo(4);
        let a = TiledMatrix::from_row_major(&mut ctx, n, n, ib, &av)?;
        let b = TiledMatrix::from_row_major(&mut ctx, n, n, ib, &bv)?;
        let c = TiledMatrix::zeros(&mut ctx, n, n, ib)?;
        strassen(&mut ctx, &a, &b, &c)?;
        let gemms = ctx.dag().ops().iter().filter(|o| o.kernel.name == "gemm_tile").count();
        let got = c.gather(&mut ctx)?;
        ctx.finish()?;
        let took = t.elapsed();
        let err = max_relative_error(&got, &naive_matmul(&av, &bv, n, n, n));
        Ok(check(
            err <= 1e-8 && gemms == 49 && took < Duration::from_secs(10),
            format!("max rel err {err:.2e} (<= 1e-8), {gemms} tile multiplies (== 49), {:.2} s (< 10 s)", took.as_secs_f64()),
        ))
    })
}

fn sort_oracle() -> Verdict {
    attempt(|| {
        let mut spec = RunSpec::new(Workload::Sort);
        spec.n = 1_000_000;
        spec.log_bins = 8;
        spec.ranks = 4;
        spec.workers = 2;
        spec.verify = true;
        let t = Instant::now();
        let run = run_simulated(&spec)?;
        let took = t.elapsed();
        let ok = run.verified() == Some(true);
        Ok(check(
            ok && took < Duration::from_secs(30),
            format!("output equals std sort: {ok}, {:.2} s (< 30 s)", took.as_secs_f64()),
        ))
    })
}

fn small_spec(w: Workload, ranks: usize, workers: usize) -> RunSpec {
    let mut spec = RunSpec::new(w);
    match w {
        Workload::Gemm => {
            spec.n = 128;
            spec.ib = 32;
            if ranks == 4 {
                spec.np = 2;
                spec.nq = 2;
            }
        }
        Workload::Strassen => {
            spec.n = 128;
            spec.ib = 32;
        }
        Workload::Sort => spec.n = 200_000,
        Workload::Fig1 => {}
    }
    spec.ranks = ranks;
    spec.workers = workers;
    spec
}

fn determinism() -> Verdict {
    attempt(|| {
        let mut problems = Vec::new();
        for w in Workload::ALL {
            let spec = small_spec(w, 4, 4);
            let mut first: Option<(Vec<u64>, Option<u64>)> = None;
            for _ in 0..5 {
                let run = run_simulated(&spec)?;
                let fps = run.fingerprints();
                if fps.windows(2).any(|p| p[0] != p[1]) {
                    problems.push(format!("{w}: ranks disagree"));
                }
                let now = (fps, run.digest());
                match &first {
                    None => first = Some(now),
                    Some(f) if *f != now => problems.push(format!("{w}: runs disagree")),
                    _ => {}
                }
            }
        }
        Ok(check(problems.is_empty(), format!("4 workloads x 5 runs x 4 ranks agree{}", listed(&problems))))
    })
}

fn race_freedom() -> Verdict {
    attempt(|| {
        let mut problems = Vec::new();
        for w in Workload::ALL {
            let one = run_simulated(&small_spec(w, 2, 1))?.digest();
            let eight = run_simulated(&small_spec(w, 2, 8))?.digest();
            if one.is_none() || one != eight {
                problems.push(format!("{w}: W=1 vs W=8"));
            }
        }
        let mut p1 = small_spec(Workload::Gemm, 1, 4);
        p1.integer_payload = true;
        let mut p4 = small_spec(Workload::Gemm, 4, 4);
        p4.integer_payload = true;
        if run_simulated(&p1)?.digest() != run_simulated(&p4)?.digest() {
            problems.push("integer gemm: P=1 vs P=4".into());
        }
        Ok(check(problems.is_empty(), format!("W=1 vs W=8 on every workload, integer gemm P=1 vs P=4{}", listed(&problems))))
    })
}

fn exactly_once() -> Verdict {
    attempt(|| {
        let mut problems = Vec::new();
        let mut total = 0;
        for seed in 0..100u64 {
            let ranks = 1 + (seed % 4) as usize;
            let ops = 50 + (seed as usize * 37) % 451;
            let prog = Program::generate(seed, ranks, ops);
            let results = common::run(&prog, 1 + (seed % 8) as usize)?;
            if results[0].values.as_ref() != Some(&prog.oracle()) {
                problems.push(format!("seed {seed}: wrong values"));
            }
            for r in &results {
                total += r.ops_run;
                if r.ops_run != r.placed || r.invocations != prog.locally_placed(r.rank) {
                    problems.push(format!("seed {seed} rank {}: ran {} of {}", r.rank, r.ops_run, r.placed));
                }
            }
        }
        Ok(check(problems.is_empty(), format!("100 DAGs of 50..500 ops, {total} ops executed once each{}", listed(&problems))))
    })
}

fn collective_structure() -> Verdict {
    attempt(|| {
        let mut details = Vec::new();
        let mut ok = true;
        for k in [1usize, 2, 3, 8] {
            let outside: Vec<usize> = (1..=k).collect();
            let (m1, d1) = broadcast_once(k + 1, 0, &outside)?;
            let inside: Vec<usize> = (0..k).collect();
            let (m2, d2) = broadcast_once(k.max(1), 0, &inside)?;
            let bound = ceil_log2(k) + 1;
            ok &= m1 == k && m2 == k - 1 && d1 <= bound && d2 <= bound;
            details.push(format!("k={k}: {m1}/{m2} msgs depth {d1}/{d2}<={bound}"));
        }
        Ok(check(ok, details.join(", ")))
    })
}

fn reduction_structure() -> Verdict {
    attempt(|| {
        let mut details = Vec::new();
        let mut ok = true;
        for n in [1usize, 2, 4, 5, 16] {
            let r = reduce_replicas(n, 4)?;
            ok &= r.combines == n - 1 && r.recorded == n - 1 && r.levels == ceil_log2(n) && r.result == r.left_fold;
            details.push(format!("n={n}: {} combines {} levels", r.recorded, r.levels));
        }
        Ok(check(ok, format!("{}, non-commutative fold equals left fold", details.join(", "))))
    })
}

fn zero_copy() -> Verdict {
    attempt(|| {
        let mut ctx = Context::solo(4);
        let f = ctx.declare_kernel("f", vec![ArgMode::Mutable], |a| {
            for v in a.f64_mut(0)? {
                *v = *v * 0.5 + 1.0;
            }
            Ok(())
        })?;
        let a = ctx.literal_f64(vec![1.0; 4096])?;
        for _ in 0..10 {
            ctx.call(&f, &[a])?;
        }
        ctx.sync()?;
        let chain = ctx.finish()?;
        let mut spec = RunSpec::new(Workload::Fig1);
        spec.workers = 4;
        let fig1 = run_simulated(&spec)?;
        let copies = fig1.reports[0].copies;
        Ok(check(
            chain.bytes_copied == 0 && copies == 1,
            format!("chain x10 bytes_copied {} (== 0), two-family pattern copies {copies} (== 1)", chain.bytes_copied),
        ))
    })
}

fn overlap() -> Verdict {
    attempt(|| {
        let latency = 50.0;
        let compute = fan_out_wall_ms(4, Duration::ZERO)?;
        let wall = fan_out_wall_ms(4, Duration::from_millis(50))?;
        Ok(check(
            wall < 2.0 * latency + compute,
            format!("4 transfers at 50 ms: {wall:.1} ms (< {:.1} ms)", 2.0 * latency + compute),
        ))
    })
}

fn threading_speedup() -> Verdict {
    attempt(|| {
        let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let time = |workers: usize| -> dagflow::Result<f64> {
            let mut spec = RunSpec::new(Workload::Gemm);
            spec.n = 1024;
            spec.ib = 64;
            spec.workers = workers;
            Ok(run_simulated(&spec)?.wall_ms())
        };
        let w1 = time(1)?;
        let w8 = time(8)?;
        let detail = format!("{cores} cores, W=1 {w1:.0} ms, W=8 {w8:.0} ms, ratio {:.2} (<= 0.5)", w8 / w1);
        if cores < 4 {
            return Ok(NotApplicable(format!("needs >= 4 cores; {detail}")));
        }
        Ok(check(w8 <= 0.5 * w1, detail))
    })
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 12] = [
        ("cluster-scale results", cluster_scale),
        ("oracle equivalence (gemm)", gemm_oracle),
        ("oracle equivalence (strassen)", strassen_oracle),
        ("oracle equivalence (sort)", sort_oracle),
        ("determinism", determinism),
        ("race-freedom", race_freedom),
        ("exactly-once", exactly_once),
        ("collective structure", collective_structure),
        ("reduction structure", reduction_structure),
        ("zero-copy", zero_copy),
        ("overlap", overlap),
        ("threading speedup", threading_speedup),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Pass(d) => println!("PASS {name}: {d}"),
            Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d}")
            }
            NotApplicable(d) => println!("NOT APPLICABLE {name}: {d}"),
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
