//! Placement scopes decide where ops run; remote reads become broadcast
//! trees rooted at the producing rank.

use dagflow::{ArgMode, Runtime};

fn main() -> dagflow::Result<()> {
    let out = Runtime::simulated(8).run(|ctx| {
        let produce = ctx.declare_kernel("produce", vec![ArgMode::Mutable], |a| {
            a.f64_mut(0)?.fill(3.0);
            Ok(())
        })?;
        let consume = ctx.declare_kernel("consume", vec![ArgMode::Const, ArgMode::Mutable], |a| {
            let (out, ins) = a.split_mut(1)?;
            out.as_f64_mut().ok_or("out is not f64")?[0] = ins.f64(0)?.iter().sum();
            Ok(())
        })?;
        let x = ctx.scoped(2, |ctx| ctx.zeros(dagflow::Layout::f64(1024)))?;
        ctx.scoped(2, |ctx| ctx.call(&produce, &[x]))?;
        let mut sums = Vec::new();
        for r in [0, 1, 3, 4, 5, 6, 7] {
            let s = ctx.scoped(r, |ctx| ctx.zeros(dagflow::Layout::f64(1)))?;
            ctx.scoped(r, |ctx| ctx.call(&consume, &[x, s]))?;
            sums.push(s);
        }
        ctx.sync()?;
        if ctx.rank() == 0 {
            for p in ctx.plans() {
                println!("plan {p} depth {}", p.depth());
            }
            let dot = ctx.to_dot(true);
            println!("{} transfer lines in the DOT trailer", dot.lines().filter(|l| l.contains("transfer")).count());
        }
        Ok(())
    })?;
    for r in &out.reports {
        println!("rank {} sent {} messages", r.rank, r.messages_sent);
    }
    Ok(())
}
