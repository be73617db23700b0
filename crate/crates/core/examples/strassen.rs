//! Strassen's recursion over a 4x4 tile grid: 49 tile multiplies instead
//! of 64.

use dagflow::inputs::{max_relative_error, naive_matmul, random_matrix};
use dagflow::linalg::{strassen, TiledMatrix};
use dagflow::Context;

fn main() -> dagflow::Result<()> {
    let (n, ib) = (128, 32);
    let av = random_matrix(n, n, 3);
    let bv = random_matrix(n, n, 4);

    let mut ctx = Context::solo(4);
    let a = TiledMatrix::from_row_major(&mut ctx, n, n, ib, &av)?;
    let b = TiledMatrix::from_row_major(&mut ctx, n, n, ib, &bv)?;
    let c = TiledMatrix::zeros(&mut ctx, n, n, ib)?;
    strassen(&mut ctx, &a, &b, &c)?;

    let gemms = ctx.dag().ops().iter().filter(|o| o.kernel.name == "gemm_tile").count();
    println!("{} ops recorded, {gemms} tile multiplies", ctx.dag().len());
    let got = c.gather(&mut ctx)?;
    let err = max_relative_error(&got, &naive_matmul(&av, &bv, n, n, n));
    println!("max relative error {err:.3e}");
    ctx.finish()?;
    Ok(())
}
