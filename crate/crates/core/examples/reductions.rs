//! Logarithmic reduction of per-rank partial sums into one replica.

use dagflow::dist::reduction_levels;
use dagflow::{apply_reduction_schedule, ArgMode, Layout, Runtime};

fn main() -> dagflow::Result<()> {
    for n in [1, 2, 5, 8] {
        println!("n={n}: {:?}", reduction_levels(n));
    }

    let ranks = 5;
    let out = Runtime::simulated(ranks).run(|ctx| {
        let fill = ctx.declare_kernel("fill_rank", vec![ArgMode::Mutable], |a| {
            a.f64_mut(0)?.fill(1.0);
            Ok(())
        })?;
        let add = ctx.declare_kernel("add", vec![ArgMode::Mutable, ArgMode::Const], |a| {
            let (d, ins) = a.split_mut(0)?;
            for (d, s) in d.as_f64_mut().ok_or("not f64")?.iter_mut().zip(ins.f64(1)?) {
                *d += s;
            }
            Ok(())
        })?;
        let mut replicas = Vec::new();
        for r in 0..ranks {
            let h = ctx.scoped(r, |ctx| {
                let h = ctx.zeros(Layout::f64(4))?;
                ctx.call(&fill, &[h])?;
                Ok(h)
            })?;
            replicas.push(h);
        }
        let red = apply_reduction_schedule(ctx, &replicas, &add, Some)?;
        let total = ctx.fetch_to(red.result, 0)?;
        Ok((red.combines, red.levels, total.map(|b| b.as_f64().unwrap().to_vec())))
    })?;
    let (combines, levels, total) = &out.values[0];
    println!("{combines} combines over {levels} levels, total {:?}", total.as_ref().unwrap());
    Ok(())
}
