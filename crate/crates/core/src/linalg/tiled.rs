use crate::buffer::Layout;
use crate::context::{Context, Handle};
use crate::dag::ArgMode::{Const, Mutable};
use crate::dag::{Kernel, KernelError};
use crate::error::{Error, Result};
use crate::RankId;

/// Matrix stored as a grid of `ib x ib` tiles, each its own versioned
/// object. Tiles are column-major internally. A subset is another
/// `TiledMatrix` whose grid refers to the same tile objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TiledMatrix {
    pub rows: usize,
    pub cols: usize,
    pub ib: usize,
    pub mt: usize,
    pub nt: usize,
    tiles: Vec<Handle>,
}

/// `c += a * b` on column-major `ib x ib` tiles. The inner index is summed
/// in ascending order.
pub fn gemm_tile(a: &[f64], b: &[f64], c: &mut [f64], ib: usize) {
    for j in 0..ib {
        let cj = &mut c[j * ib..(j + 1) * ib];
        for l in 0..ib {
            let blj = b[l + j * ib];
            let al = &a[l * ib..(l + 1) * ib];
            for (ci, ai) in cj.iter_mut().zip(al) {
                *ci += ai * blj;
            }
        }
    }
}

fn tile_edge(len: usize) -> usize {
    (len as f64).sqrt().round() as usize
}

/// The tile kernels, declared once per context.
#[derive(Clone)]
pub struct TileKernels {
    /// `[a: Const, b: Const, c: Mutable]`, `c += a * b`.
    pub gemm: Kernel,
    /// `[dst: Mutable, src: Const]`, `dst += src`.
    pub add: Kernel,
    /// `[dst: Mutable, src: Const]`, `dst -= src`.
    pub sub: Kernel,
    /// `[dst: Mutable, src: Const]`, `dst = src`.
    pub copy: Kernel,
}

impl TileKernels {
    pub fn declare(ctx: &mut Context) -> Result<Self> {
        let gemm = ctx.kernel_or_declare("gemm_tile", vec![Const, Const, Mutable], |args| {
            let (c, ins) = args.split_mut(2)?;
            let c = c.as_f64_mut().ok_or(KernelError::from("c is not f64"))?;
            let ib = tile_edge(c.len());
            gemm_tile(ins.f64(0)?, ins.f64(1)?, c, ib);
            Ok(())
        })?;
        let add = ctx.kernel_or_declare("tile_add", vec![Mutable, Const], |args| {
            let (dst, ins) = args.split_mut(0)?;
            let src = ins.f64(1)?;
            for (d, s) in dst.as_f64_mut().ok_or(KernelError::from("dst is not f64"))?.iter_mut().zip(src) {
                *d += s;
            }
            Ok(())
        })?;
        let sub = ctx.kernel_or_declare("tile_sub", vec![Mutable, Const], |args| {
            let (dst, ins) = args.split_mut(0)?;
            let src = ins.f64(1)?;
            for (d, s) in dst.as_f64_mut().ok_or(KernelError::from("dst is not f64"))?.iter_mut().zip(src) {
                *d -= s;
            }
            Ok(())
        })?;
        let copy = ctx.kernel_or_declare("tile_copy", vec![Mutable, Const], |args| {
            let (dst, ins) = args.split_mut(0)?;
            dst.as_f64_mut()
                .ok_or(KernelError::from("dst is not f64"))?
                .copy_from_slice(ins.f64(1)?);
            Ok(())
        })?;
        Ok(TileKernels { gemm, add, sub, copy })
    }
}

impl TiledMatrix {
    fn check_dims(rows: usize, cols: usize, ib: usize) -> Result<(usize, usize)> {
        if ib == 0 || rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("{rows}x{cols} matrix with tile size {ib}")));
        }
        if !rows.is_multiple_of(ib) || !cols.is_multiple_of(ib) {
            return Err(Error::Shape(format!(
                "{rows}x{cols} is not divisible into {ib}x{ib} tiles"
            )));
        }
        Ok((rows / ib, cols / ib))
    }

    fn build(
        ctx: &mut Context,
        rows: usize,
        cols: usize,
        ib: usize,
        mut make: impl FnMut(&mut Context, usize, usize) -> Result<Handle>,
    ) -> Result<Self> {
        let (mt, nt) = Self::check_dims(rows, cols, ib)?;
        let mut tiles = Vec::with_capacity(mt * nt);
        for j in 0..nt {
            for i in 0..mt {
                tiles.push(make(ctx, i, j)?);
            }
        }
        Ok(TiledMatrix {
            rows,
            cols,
            ib,
            mt,
            nt,
            tiles,
        })
    }

    /// All-zero matrix; tiles are allocated lazily where first used.
    pub fn zeros(ctx: &mut Context, rows: usize, cols: usize, ib: usize) -> Result<Self> {
        Self::build(ctx, rows, cols, ib, |ctx, _, _| ctx.zeros(Layout::f64(ib * ib)))
    }

    /// Matrix whose tiles get their first value from a mutating op.
    pub fn unset(ctx: &mut Context, rows: usize, cols: usize, ib: usize) -> Result<Self> {
        Self::build(ctx, rows, cols, ib, |ctx, _, _| ctx.unset(Layout::f64(ib * ib)))
    }

    /// Literal matrix from row-major data. Outside a scope every rank holds
    /// every tile.
    pub fn from_row_major(ctx: &mut Context, rows: usize, cols: usize, ib: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Self::build(ctx, rows, cols, ib, |ctx, ti, tj| {
            let mut tile = vec![0.0; ib * ib];
            for c in 0..ib {
                for r in 0..ib {
                    tile[r + c * ib] = data[(ti * ib + r) * cols + tj * ib + c];
                }
            }
            ctx.literal_f64(tile)
        })
    }

    pub fn tile(&self, i: usize, j: usize) -> Handle {
        assert!(i < self.mt && j < self.nt, "tile ({i},{j}) outside {}x{} grid", self.mt, self.nt);
        self.tiles[i + j * self.mt]
    }

    pub fn tiles(&self) -> &[Handle] {
        &self.tiles
    }

    /// `ht x wt` tiles starting at tile `(ti, tj)`, sharing tile objects with
    /// `self`.
    pub fn subset(&self, ti: usize, tj: usize, ht: usize, wt: usize) -> Result<Self> {
        if ht == 0 || wt == 0 || ti + ht > self.mt || tj + wt > self.nt {
            return Err(Error::Shape(format!(
                "subset ({ti},{tj}) of {ht}x{wt} tiles outside {}x{} grid",
                self.mt, self.nt
            )));
        }
        let mut tiles = Vec::with_capacity(ht * wt);
        for j in tj..tj + wt {
            for i in ti..ti + ht {
                tiles.push(self.tile(i, j));
            }
        }
        Ok(TiledMatrix {
            rows: ht * self.ib,
            cols: wt * self.ib,
            ib: self.ib,
            mt: ht,
            nt: wt,
            tiles,
        })
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.mt != other.mt || self.nt != other.nt || self.ib != other.ib {
            return Err(Error::Shape(format!(
                "{}x{} tiles of {} vs {}x{} tiles of {}",
                self.mt, self.nt, self.ib, other.mt, other.nt, other.ib
            )));
        }
        Ok(())
    }

    /// Records `kernel(self.tile, src.tile)` for every tile pair.
    pub fn zip_apply(&self, ctx: &mut Context, kernel: &Kernel, src: &Self) -> Result<()> {
        self.same_grid(src)?;
        for (&d, &s) in self.tiles.iter().zip(&src.tiles) {
            ctx.call(kernel, &[d, s])?;
        }
        Ok(())
    }

    pub fn release(&self, ctx: &mut Context) -> Result<()> {
        for &t in &self.tiles {
            ctx.release(t)?;
        }
        Ok(())
    }

    /// Row-major contents on `root`, `None` on other ranks. Syncs.
    pub fn gather_to(&self, ctx: &mut Context, root: RankId) -> Result<Option<Vec<f64>>> {
        for &t in &self.tiles {
            ctx.observe_on(t, root)?;
        }
        ctx.sync()?;
        if ctx.rank() != root {
            return Ok(None);
        }
        self.read_local(ctx).map(Some)
    }

    /// Row-major contents on every rank. Syncs.
    pub fn gather(&self, ctx: &mut Context) -> Result<Vec<f64>> {
        for r in 0..ctx.ranks() {
            for &t in &self.tiles {
                ctx.observe_on(t, r)?;
            }
        }
        ctx.sync()?;
        self.read_local(ctx)
    }

    fn read_local(&self, ctx: &Context) -> Result<Vec<f64>> {
        let ib = self.ib;
        let mut out = vec![0.0; self.rows * self.cols];
        for tj in 0..self.nt {
            for ti in 0..self.mt {
                let h = self.tile(ti, tj);
                let buf = ctx.payload(h)?;
                let tile = buf.as_f64().ok_or(Error::ElemType { object: h.id() })?;
                for c in 0..ib {
                    for r in 0..ib {
                        out[(ti * ib + r) * self.cols + tj * ib + c] = tile[r + c * ib];
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_x() {
        let ib = 3;
        let mut a = vec![0.0; 9];
        for i in 0..3 {
            a[i + i * ib] = 1.0;
        }
        let b: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let mut c = vec![0.0; 9];
        gemm_tile(&a, &b, &mut c, ib);
        assert_eq!(c, b);
    }

    #[test]
    fn two_by_two_column_major() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0, 3.0, 2.0, 4.0];
        let b = [5.0, 7.0, 6.0, 8.0];
        let mut c = [0.0; 4];
        gemm_tile(&a, &b, &mut c, 2);
        assert_eq!(c, [19.0, 43.0, 22.0, 50.0]);
        gemm_tile(&a, &b, &mut c, 2);
        assert_eq!(c, [38.0, 86.0, 44.0, 100.0]);
    }

    #[test]
    fn tiling_round_trip() {
        let mut ctx = Context::solo(1);
        let data: Vec<f64> = (0..6 * 4).map(|v| v as f64).collect();
        let m = TiledMatrix::from_row_major(&mut ctx, 6, 4, 2, &data).unwrap();
        assert_eq!((m.mt, m.nt), (3, 2));
        assert_eq!(m.gather(&mut ctx).unwrap(), data);
        assert!(TiledMatrix::from_row_major(&mut ctx, 5, 4, 2, &[0.0; 20]).is_err());
    }

    #[test]
    fn subset_aliases_parent() {
        let mut ctx = Context::solo(1);
        let m = TiledMatrix::zeros(&mut ctx, 8, 8, 2).unwrap();
        let s = m.subset(2, 0, 2, 2).unwrap();
        assert_eq!(s.tile(0, 0), m.tile(2, 0));
        assert_eq!(s.tile(1, 1), m.tile(3, 1));
        assert!(m.subset(3, 0, 2, 1).is_err());
    }
}
