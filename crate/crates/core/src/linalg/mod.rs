//! Tiled dense linear algebra on top of the runtime.

mod gemm;
mod strassen;
mod tiled;

pub use gemm::{distributed_gemm, DistGemmConfig};
pub use strassen::strassen;
pub use tiled::{gemm_tile, TileKernels, TiledMatrix};
