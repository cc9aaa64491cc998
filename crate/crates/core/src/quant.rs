//! Block-wise absmax int8 quantization over shard-local slabs.
//!
//! A slab (a rank's rows of a matrix parameter) is cut into fixed tiles; each
//! tile stores one f64 scale equal to its largest magnitude divided by 127
//! and one signed byte per element. Dequantization multiplies back, so the
//! round-trip error is at most half a scale per element. An all-zero tile
//! stores scale 0 and round-trips exactly.
//!
//! Whether each rank can quantize its shard independently of its neighbours
//! is a layout question: every tile must lie inside a single owner's
//! contiguous range. [`first_split_tile`] checks that directly against a
//! plan, which is how a row granularity equal to a multiple of the tile
//! height buys per-rank quantization while element granularity does not.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::PlanEntry;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("{0}x{1} tiles do not evenly tile a {2}x{3} slab")]
    MisalignedShard(u64, u64, u64, u64),
    #[error("slab of {got} values cannot have {cols} columns")]
    BadSlab { got: usize, cols: u64 },
}

/// Tile shape for quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantBlockSpec {
    pub rows: u64,
    pub cols: u64,
}

impl Default for QuantBlockSpec {
    fn default() -> Self {
        Self { rows: 32, cols: 32 }
    }
}

/// Quantized slab: codes keep the slab's row-major layout, scales sit on the
/// tile grid in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlocks {
    pub rows: u64,
    pub cols: u64,
    pub tile: QuantBlockSpec,
    pub scales: Vec<f64>,
    pub codes: Vec<i8>,
}

impl QuantizedBlocks {
    pub fn tile_grid(&self) -> (u64, u64) {
        (self.rows / self.tile.rows, self.cols / self.tile.cols)
    }

    /// Scale of the tile containing element (r, c).
    pub fn scale_at(&self, r: u64, c: u64) -> f64 {
        let (_, grid_cols) = self.tile_grid();
        self.scales[((r / self.tile.rows) * grid_cols + c / self.tile.cols) as usize]
    }
}

fn check_tiling(rows: u64, cols: u64, tile: QuantBlockSpec) -> Result<(), QuantError> {
    if tile.rows == 0 || tile.cols == 0 || rows % tile.rows != 0 || cols % tile.cols != 0 {
        return Err(QuantError::MisalignedShard(
            tile.rows, tile.cols, rows, cols,
        ));
    }
    Ok(())
}

/// Quantizes a row-major `rows x cols` slab. Codes are `round(x / scale)`
/// (half away from zero) clamped to [-127, 127]; the clamp only matters when
/// the two divisions round against each other at the absmax element.
pub fn blockwise_quantize(
    slab: &[f64],
    rows: u64,
    cols: u64,
    tile: QuantBlockSpec,
) -> Result<QuantizedBlocks, QuantError> {
    if cols == 0 || slab.len() as u64 != rows * cols {
        return Err(QuantError::BadSlab {
            got: slab.len(),
            cols,
        });
    }
    check_tiling(rows, cols, tile)?;
    let grid_rows = rows / tile.rows;
    let grid_cols = cols / tile.cols;
    let mut scales = vec![0.0f64; (grid_rows * grid_cols) as usize];
    let mut codes = vec![0i8; slab.len()];
    for tr in 0..grid_rows {
        for tc in 0..grid_cols {
            let mut absmax = 0.0f64;
            for r in tr * tile.rows..(tr + 1) * tile.rows {
                for c in tc * tile.cols..(tc + 1) * tile.cols {
                    absmax = absmax.max(slab[(r * cols + c) as usize].abs());
                }
            }
            let scale = absmax / 127.0;
            scales[(tr * grid_cols + tc) as usize] = scale;
            if scale == 0.0 {
                continue;
            }
            for r in tr * tile.rows..(tr + 1) * tile.rows {
                for c in tc * tile.cols..(tc + 1) * tile.cols {
                    let i = (r * cols + c) as usize;
                    codes[i] = (slab[i] / scale).round().clamp(-127.0, 127.0) as i8;
                }
            }
        }
    }
    Ok(QuantizedBlocks {
        rows,
        cols,
        tile,
        scales,
        codes,
    })
}

pub fn blockwise_dequantize(q: &QuantizedBlocks) -> Vec<f64> {
    let (_, grid_cols) = q.tile_grid();
    q.codes
        .iter()
        .enumerate()
        .map(|(i, &code)| {
            let r = i as u64 / q.cols;
            let c = i as u64 % q.cols;
            let scale = q.scales[((r / q.tile.rows) * grid_cols + c / q.tile.cols) as usize];
            code as f64 * scale
        })
        .collect()
}

/// First tile of a planned matrix that a device boundary cuts, as (tile_row,
/// tile_col), or None when every tile lies within a single owner's range.
///
/// Owner ranges are contiguous, so a tile is contained as soon as its lowest
/// and highest flat offsets fall in the same device region; everything
/// between them then does too.
pub fn first_split_tile(
    entry: &PlanEntry,
    cols: u64,
    tile: QuantBlockSpec,
    shard_elems: u64,
) -> Result<Option<(u64, u64)>, QuantError> {
    if cols == 0 || entry.elems % cols != 0 {
        return Err(QuantError::BadSlab {
            got: entry.elems as usize,
            cols,
        });
    }
    let rows = entry.elems / cols;
    check_tiling(rows, cols, tile)?;
    if shard_elems == 0 {
        return Ok(None);
    }
    for tr in 0..rows / tile.rows {
        for tc in 0..cols / tile.cols {
            let lo = entry.start + tr * tile.rows * cols + tc * tile.cols;
            let hi = entry.start + (tr * tile.rows + tile.rows - 1) * cols + (tc + 1) * tile.cols - 1;
            if lo / shard_elems != hi / shard_elems {
                return Ok(Some((tr, tc)));
            }
        }
    }
    Ok(None)
}
