//! Tiled matrix multiply on four simulated ranks with a 2x2 process grid,
//! checked against a naive product.

use dagflow::inputs::{max_relative_error, naive_matmul, random_matrix};
use dagflow::linalg::{distributed_gemm, DistGemmConfig, TiledMatrix};
use dagflow::Runtime;

fn main() -> dagflow::Result<()> {
    let (n, ib) = (128, 32);
    let av = random_matrix(n, n, 1);
    let bv = random_matrix(n, n, 2);
    let want = naive_matmul(&av, &bv, n, n, n);

    let out = Runtime::simulated(4).workers(2).run(|ctx| {
        let a = TiledMatrix::from_row_major(ctx, n, n, ib, &av)?;
        let b = TiledMatrix::from_row_major(ctx, n, n, ib, &bv)?;
        let c = TiledMatrix::zeros(ctx, n, n, ib)?;
        distributed_gemm(ctx, &a, &b, &c, DistGemmConfig { np: 2, nq: 2 })?;
        c.gather_to(ctx, 0)
    })?;

    let got = out.values[0].as_ref().expect("rank 0 gathers");
    println!("max relative error {:.3e}", max_relative_error(got, &want));
    for r in &out.reports {
        println!("{}", r.to_json_line());
    }
    Ok(())
}
