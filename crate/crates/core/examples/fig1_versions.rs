//! Three products read `a`, `a` is scaled in place, two more products read
//! the new revision. The scale must wait for the first three readers, and
//! nothing else orders the five products.

use dagflow::workloads::record_fig1;
use dagflow::Context;

fn main() -> dagflow::Result<()> {
    let mut ctx = Context::solo(4);
    let (a, ys) = record_fig1(&mut ctx, 64, 1, false)?;
    let gemms: Vec<_> = ctx.dag().ops().iter().filter(|o| o.kernel.name == "gemm").map(|o| o.op_id).collect();
    let mut independent = true;
    for &p in &gemms {
        for &q in &gemms {
            if p != q && ctx.dag().reaches(p, q) {
                independent = false;
            }
        }
    }
    println!("{} products, pairwise independent: {independent}", gemms.len());
    println!("a is at revision {}", ctx.head(a)?);

    ctx.sync()?;
    for (i, y) in ys.iter().enumerate() {
        let v = ctx.payload(*y)?;
        println!("y{i}[0] = {:.6}", v.as_f64().unwrap()[0]);
    }
    print!("{}", ctx.to_dot(false));
    let report = ctx.finish()?;
    println!("copies made: {}", report.copies);
    Ok(())
}
