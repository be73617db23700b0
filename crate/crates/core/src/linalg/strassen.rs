use super::tiled::{TileKernels, TiledMatrix};
use crate::context::Context;
use crate::error::{Error, Result};
use crate::store::Origin;

/// Records `c += a * b` with Strassen's recursion over the tile grid,
/// bottoming out in one tile multiply per 1x1 grid. Grids must be square
/// with a power-of-two side.
pub fn strassen(ctx: &mut Context, a: &TiledMatrix, b: &TiledMatrix, c: &TiledMatrix) -> Result<()> {
    for (name, m) in [("a", a), ("b", b), ("c", c)] {
        if m.mt != m.nt || !m.nt.is_power_of_two() {
            return Err(Error::Shape(format!(
                "{name} has a {}x{} tile grid; a square power-of-two grid is required",
                m.mt, m.nt
            )));
        }
    }
    if a.nt != b.nt || a.nt != c.nt || a.ib != b.ib || a.ib != c.ib {
        return Err(Error::Shape("a, b and c must have identical tile grids".into()));
    }
    let k = TileKernels::declare(ctx)?;
    // The recursion assumes it starts from zero; otherwise go through a
    // temporary and accumulate.
    if is_pristine(ctx, c)? {
        recurse(ctx, &k, a, b, c)
    } else {
        let t = TiledMatrix::zeros(ctx, c.rows, c.cols, c.ib)?;
        recurse(ctx, &k, a, b, &t)?;
        c.zip_apply(ctx, &k.add, &t)?;
        t.release(ctx)
    }
}

fn is_pristine(ctx: &Context, c: &TiledMatrix) -> Result<bool> {
    for &t in c.tiles() {
        let entry = ctx.store().object(t.id())?;
        let head = &entry.revisions[entry.head() as usize];
        if head.index != 0 || !matches!(head.origin, Origin::Zeroed | Origin::Unset) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn recurse(ctx: &mut Context, k: &TileKernels, a: &TiledMatrix, b: &TiledMatrix, c: &TiledMatrix) -> Result<()> {
    let nt = c.nt / 2;
    if nt == 0 {
        ctx.call(&k.gemm, &[a.tile(0, 0), b.tile(0, 0), c.tile(0, 0)])?;
        return Ok(());
    }
    let n = nt * c.ib;
    let ib = c.ib;
    let q = |m: &TiledMatrix, i: usize, j: usize| m.subset(i * nt, j * nt, nt, nt);

    let m1 = TiledMatrix::zeros(ctx, n, n, ib)?;
    let m2 = TiledMatrix::zeros(ctx, n, n, ib)?;
    let m3 = TiledMatrix::zeros(ctx, n, n, ib)?;
    let m4 = TiledMatrix::unset(ctx, n, n, ib)?;
    let m5 = TiledMatrix::unset(ctx, n, n, ib)?;
    let d = TiledMatrix::unset(ctx, 2 * n, 2 * n, ib)?;
    let e = TiledMatrix::unset(ctx, 2 * n, 2 * n, ib)?;

    d.zip_apply(ctx, &k.copy, a)?;
    m4.zip_apply(ctx, &k.copy, &q(a, 0, 0)?)?;
    e.zip_apply(ctx, &k.copy, b)?;
    m5.zip_apply(ctx, &k.copy, &q(b, 0, 0)?)?;

    q(&d, 0, 0)?.zip_apply(ctx, &k.add, &q(a, 0, 1)?)?;
    q(&d, 0, 1)?.zip_apply(ctx, &k.sub, &q(a, 1, 1)?)?;
    q(&d, 1, 1)?.zip_apply(ctx, &k.add, &q(a, 1, 0)?)?;
    q(&d, 1, 0)?.zip_apply(ctx, &k.sub, &q(a, 0, 0)?)?;

    q(&e, 0, 0)?.zip_apply(ctx, &k.add, &q(b, 0, 1)?)?;
    q(&e, 0, 1)?.zip_apply(ctx, &k.sub, &q(b, 1, 1)?)?;
    q(&e, 1, 1)?.zip_apply(ctx, &k.add, &q(b, 1, 0)?)?;
    q(&e, 1, 0)?.zip_apply(ctx, &k.sub, &q(b, 0, 0)?)?;

    m4.zip_apply(ctx, &k.add, &q(a, 1, 1)?)?;
    m5.zip_apply(ctx, &k.add, &q(b, 1, 1)?)?;

    recurse(ctx, k, &q(&d, 0, 1)?, &q(&e, 1, 1)?, &q(c, 0, 0)?)?;
    recurse(ctx, k, &q(a, 0, 0)?, &q(&e, 0, 1)?, &q(c, 0, 1)?)?;
    recurse(ctx, k, &q(&d, 1, 1)?, &q(b, 0, 0)?, &q(c, 1, 0)?)?;
    recurse(ctx, k, &q(&d, 1, 0)?, &q(&e, 0, 0)?, &q(c, 1, 1)?)?;

    recurse(ctx, k, &m4, &m5, &m1)?;
    recurse(ctx, k, &q(&d, 0, 0)?, &q(b, 1, 1)?, &m2)?;
    recurse(ctx, k, &q(a, 1, 1)?, &q(&e, 1, 0)?, &m3)?;

    q(c, 1, 1)?.zip_apply(ctx, &k.add, &q(c, 0, 1)?)?;
    q(c, 1, 1)?.zip_apply(ctx, &k.sub, &q(c, 1, 0)?)?;

    q(c, 0, 0)?.zip_apply(ctx, &k.add, &m1)?;
    q(c, 1, 1)?.zip_apply(ctx, &k.add, &m1)?;
    q(c, 0, 1)?.zip_apply(ctx, &k.add, &m2)?;
    q(c, 0, 0)?.zip_apply(ctx, &k.sub, &m2)?;
    q(c, 0, 0)?.zip_apply(ctx, &k.add, &m3)?;
    q(c, 1, 0)?.zip_apply(ctx, &k.add, &m3)?;

    for m in [&m1, &m2, &m3, &m4, &m5, &d, &e] {
        m.release(ctx)?;
    }
    Ok(())
}
