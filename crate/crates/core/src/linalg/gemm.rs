use super::tiled::{TileKernels, TiledMatrix};
use crate::context::{Context, Handle};
use crate::dist::apply_reduction_schedule;
use crate::error::{Error, Result};
use crate::RankId;

/// Blocking of the output tile loops: the `i` loop runs in groups of `np`
/// tile rows and the `k` loop in groups of `nq` tile columns, with a sync
/// after each group pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistGemmConfig {
    pub np: usize,
    pub nq: usize,
}

impl Default for DistGemmConfig {
    fn default() -> Self {
        DistGemmConfig { np: 1, nq: 1 }
    }
}

/// Rank that accumulates replica `w` of output tile `(i, k)`.
fn replica_rank(cfg: DistGemmConfig, i: usize, k: usize, w: usize, ranks: usize) -> RankId {
    ((i % cfg.np) * cfg.nq + (k % cfg.nq) + w) % ranks
}

/// Replica that receives the product for inner index `j`.
fn replica_index(nt: usize, k: usize, j: usize) -> usize {
    (nt as i64 - k as i64 + j as i64).rem_euclid(nt as i64) as usize
}

/// Records `c += a * b`. Each output tile gets `a.nt` partial products,
/// spread over ranks and folded pairwise in `ceil(log2 a.nt)` levels.
pub fn distributed_gemm(ctx: &mut Context, a: &TiledMatrix, b: &TiledMatrix, c: &TiledMatrix, cfg: DistGemmConfig) -> Result<()> {
    if a.ib != b.ib || a.ib != c.ib {
        return Err(Error::Shape(format!("tile sizes {}, {}, {} differ", a.ib, b.ib, c.ib)));
    }
    if a.nt != b.mt || c.mt != a.mt || c.nt != b.nt {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{} tiles into {}x{}",
            a.mt, a.nt, b.mt, b.nt, c.mt, c.nt
        )));
    }
    if cfg.np == 0 || cfg.nq == 0 || !a.mt.is_multiple_of(cfg.np) || !b.nt.is_multiple_of(cfg.nq) {
        return Err(Error::Shape(format!(
            "{}x{} output tiles not divisible into {}x{} blocks",
            a.mt, b.nt, cfg.np, cfg.nq
        )));
    }
    let k = TileKernels::declare(ctx)?;
    let ranks = ctx.ranks();
    let n = a.nt;
    let tile_layout = crate::buffer::Layout::f64(a.ib * a.ib);

    for ii in 0..a.mt / cfg.np {
        for kk in 0..b.nt / cfg.nq {
            for i in ii * cfg.np..(ii + 1) * cfg.np {
                for kc in kk * cfg.nq..(kk + 1) * cfg.nq {
                    let mut r: Vec<Handle> = Vec::with_capacity(n);
                    r.push(c.tile(i, kc));
                    for _ in 1..n {
                        r.push(ctx.zeros(tile_layout)?);
                    }
                    for j in 0..n {
                        let w = replica_index(n, kc, j);
                        let args = [a.tile(i, j), b.tile(j, kc), r[w]];
                        ctx.scoped(replica_rank(cfg, i, kc, w, ranks), |ctx| ctx.call(&k.gemm, &args))?;
                    }
                    apply_reduction_schedule(ctx, &r, &k.add, |w| Some(replica_rank(cfg, i, kc, w, ranks)))?;
                    for &t in &r[1..] {
                        ctx.release(t)?;
                    }
                }
            }
            ctx.sync()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replica_rotation_covers_all() {
        for nt in 1..6 {
            for k in 0..9 {
                let mut seen: Vec<usize> = (0..nt).map(|j| replica_index(nt, k, j)).collect();
                seen.sort();
                assert_eq!(seen, (0..nt).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn single_tile_is_one_gemm() {
        let mut ctx = Context::solo(1);
        let a = TiledMatrix::from_row_major(&mut ctx, 2, 2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = TiledMatrix::from_row_major(&mut ctx, 2, 2, 2, &[5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = TiledMatrix::zeros(&mut ctx, 2, 2, 2).unwrap();
        distributed_gemm(&mut ctx, &a, &b, &c, DistGemmConfig::default()).unwrap();
        assert_eq!(ctx.dag().len(), 1);
        assert_eq!(c.gather(&mut ctx).unwrap(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn shape_errors() {
        let mut ctx = Context::solo(1);
        let a = TiledMatrix::zeros(&mut ctx, 4, 4, 2).unwrap();
        let b = TiledMatrix::zeros(&mut ctx, 6, 4, 2).unwrap();
        let c = TiledMatrix::zeros(&mut ctx, 4, 4, 2).unwrap();
        assert!(matches!(
            distributed_gemm(&mut ctx, &a, &b, &c, DistGemmConfig::default()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            distributed_gemm(&mut ctx, &a, &a, &c, DistGemmConfig { np: 3, nq: 1 }),
            Err(Error::Shape(_))
        ));
    }
}
