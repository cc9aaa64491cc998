//! Placement types for distributed tensors.
//!
//! A `RaggedShard` assigns whole blocks to ranks in plain block order: rank 0
//! holds the first `counts[0]` blocks, rank 1 the next `counts[1]`, and so on.
//! Blocks are enumerated in row-major tensor order, so for element or row
//! granularity the concatenation of all locals is already the row-major
//! tensor.
//!
//! That stops being true once an even dim-0 shard on an outer mesh dimension
//! is composed with a ragged shard on the inner one: the flat-rank
//! concatenation then interleaves the outer parts. `StridedRaggedShard`
//! carries the block permutation that restores row-major order, so a gathered
//! buffer can always be materialised without reshuffling bytes on the wire.

use serde::{Deserialize, Serialize};

use crate::tensor::{GranularitySpec, ShardError, TensorSpec};

/// Bijection from block index in communication (buffer) order to block index
/// in row-major tensor order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPermutation {
    perm: Vec<u64>,
}

impl BlockPermutation {
    pub fn identity(blocks: u64) -> Self {
        Self {
            perm: (0..blocks).collect(),
        }
    }

    /// Builds from an explicit comm-order -> logical-order table.
    /// Panics if the table is not a bijection; callers construct these from
    /// validated placements, never from wire input.
    pub fn from_table(perm: Vec<u64>) -> Self {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            assert!(
                (p as usize) < perm.len() && !seen[p as usize],
                "block permutation is not a bijection"
            );
            seen[p as usize] = true;
        }
        Self { perm }
    }

    pub fn len(&self) -> u64 {
        self.perm.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i as u64 == p)
    }

    /// Logical (row-major) block index of communication block `comm`.
    pub fn logical_of(&self, comm: u64) -> u64 {
        self.perm[comm as usize]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (c, &l) in self.perm.iter().enumerate() {
            inv[l as usize] = c as u64;
        }
        Self { perm: inv }
    }
}

/// Per-mesh-dimension placement of a distributed tensor.
///
/// Following the usual placement-list convention, a list is organised in the
/// opposite order of conceptual application: `(RaggedShard, Shard(0))` means
/// the tensor is first evenly sharded along dim 0 on the inner mesh
/// dimension, then ragged-sharded on the outer one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    Replicate,
    /// Pending reduction; locals sum to the logical tensor.
    Partial,
    /// Even split along a tensor dimension.
    Shard { dim: usize },
    /// Whole-block assignment with arbitrary per-rank counts.
    RaggedShard { counts: Vec<u64> },
    /// Ragged assignment whose buffer order differs from row-major order.
    StridedRaggedShard {
        counts: Vec<u64>,
        reshuffle: BlockPermutation,
    },
}

impl Placement {
    pub fn ragged(counts: Vec<u64>) -> Self {
        Placement::RaggedShard { counts }
    }

    /// Ragged counts if this placement is (strided) ragged.
    pub fn ragged_counts(&self) -> Option<&[u64]> {
        match self {
            Placement::RaggedShard { counts } => Some(counts),
            Placement::StridedRaggedShard { counts, .. } => Some(counts),
            _ => None,
        }
    }
}

/// Effective granularity when a user granularity is composed with an even
/// `Shard(dim)` for `dim > 0`.
///
/// After the inner shard, contiguous runs of the local tensor have length
/// `stride(dim)`; a block must cover whole runs or the gathered buffer would
/// interleave partial rows. The effective block is therefore the least common
/// multiple of the run length and the requested granularity.
///
/// `tensor` is the local (post-shard) tensor.
pub fn compose_with_shard(
    tensor: &TensorSpec,
    dim: usize,
    g_user: u64,
) -> Result<u64, ShardError> {
    if dim == 0 {
        return Err(ShardError::UnsupportedShardDim {
            tensor: tensor.name.clone(),
            dim,
            detail: "dim-0 composition is strided; use make_strided".into(),
        });
    }
    if dim >= tensor.shape.len() {
        return Err(ShardError::ShapeMismatch {
            tensor: tensor.name.clone(),
            detail: format!("Shard({}) on rank-{} tensor", dim, tensor.shape.len()),
        });
    }
    if g_user == 0 {
        return Err(ShardError::NonDividingGranularity {
            tensor: tensor.name.clone(),
            granularity: 0,
            detail: "zero granularity".into(),
        });
    }
    let g_eff = num_integer::lcm(tensor.stride(dim), g_user);
    if tensor.total_elems() % g_eff != 0 {
        return Err(ShardError::NonDividingGranularity {
            tensor: tensor.name.clone(),
            granularity: g_eff,
            detail: format!(
                "lcm(stride {}, user {}) does not divide {} elements",
                tensor.stride(dim),
                g_user,
                tensor.total_elems()
            ),
        });
    }
    Ok(g_eff)
}

/// Builds the strided ragged placement for a tensor that is evenly
/// dim-0-sharded `outer_ways` ways on an outer mesh dimension and then
/// ragged-sharded (per `counts`) on the inner one.
///
/// Each outer part holds `block_count / outer_ways` blocks; `counts`
/// distributes those per-part blocks over the inner ranks (identically for
/// every part, as execution is SPMD). The flat-rank gather order is
/// inner-rank-major, so communication block `c` enumerates, for each inner
/// rank, that rank's block range once per outer part. The returned
/// permutation undoes the interleaving.
pub fn make_strided(
    tensor: &TensorSpec,
    outer_ways: u64,
    counts: &[u64],
) -> Result<Placement, ShardError> {
    if outer_ways == 0 || tensor.shape.is_empty() || tensor.shape[0] % outer_ways != 0 {
        return Err(ShardError::ShapeMismatch {
            tensor: tensor.name.clone(),
            detail: format!(
                "Shard(0) x{} does not divide dim0 {:?}",
                outer_ways,
                tensor.shape.first()
            ),
        });
    }
    let g = tensor.resolve_granularity()?;
    let part_rows = tensor.shape[0] / outer_ways;
    // The even cut must land on block boundaries.
    let cut_ok = match &tensor.granularity {
        GranularitySpec::Element => true,
        GranularitySpec::Rows { value } => part_rows % value == 0,
        GranularitySpec::Block { block_shape } => part_rows % block_shape[0] == 0,
    };
    if !cut_ok {
        return Err(ShardError::NonDividingGranularity {
            tensor: tensor.name.clone(),
            granularity: g,
            detail: format!("blocks straddle the {}-way dim-0 cut", outer_ways),
        });
    }
    let u_local = tensor.block_count()? / outer_ways;
    if counts.iter().sum::<u64>() != u_local {
        return Err(ShardError::ShapeMismatch {
            tensor: tensor.name.clone(),
            detail: format!(
                "ragged counts sum {} != {} blocks per part",
                counts.iter().sum::<u64>(),
                u_local
            ),
        });
    }

    let mut perm = Vec::with_capacity((u_local * outer_ways) as usize);
    let mut start = 0u64;
    for &c in counts {
        for part in 0..outer_ways {
            for j in start..start + c {
                perm.push(part * u_local + j);
            }
        }
        start += c;
    }
    let reshuffle = BlockPermutation::from_table(perm);
    if reshuffle.is_identity() {
        return Ok(Placement::RaggedShard {
            counts: counts.to_vec(),
        });
    }
    Ok(Placement::StridedRaggedShard {
        counts: counts.to_vec(),
        reshuffle,
    })
}

/// How communication blocks map back onto the row-major tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub block_elems: u64,
    pub block_count: u64,
    /// Comm-order -> logical-order block bijection.
    pub perm: BlockPermutation,
    /// Tile shape when logical blocks are strided tiles rather than
    /// contiguous row-major chunks.
    pub tile_shape: Option<Vec<u64>>,
    shape: Vec<u64>,
}

impl BlockLayout {
    /// Row-major element offsets covered by logical block `block`, in block-
    /// internal order.
    pub fn logical_block_offsets(&self, block: u64) -> Vec<u64> {
        match &self.tile_shape {
            None => {
                let base = block * self.block_elems;
                (base..base + self.block_elems).collect()
            }
            Some(tile) => {
                let rank = tile.len();
                let grid: Vec<u64> = (0..rank).map(|d| self.shape[d] / tile[d]).collect();
                // Tile origin from its row-major grid index.
                let mut rem = block;
                let mut origin = vec![0u64; rank];
                for d in (0..rank).rev() {
                    origin[d] = (rem % grid[d]) * tile[d];
                    rem /= grid[d];
                }
                let strides: Vec<u64> = (0..rank)
                    .map(|d| self.shape[d + 1..].iter().product())
                    .collect();
                let mut offsets = Vec::with_capacity(self.block_elems as usize);
                let mut within = vec![0u64; rank];
                loop {
                    let off: u64 = (0..rank)
                        .map(|d| (origin[d] + within[d]) * strides[d])
                        .sum();
                    offsets.push(off);
                    let mut d = rank;
                    loop {
                        if d == 0 {
                            return offsets;
                        }
                        d -= 1;
                        within[d] += 1;
                        if within[d] < tile[d] {
                            break;
                        }
                        within[d] = 0;
                    }
                }
            }
        }
    }

    /// Rebuilds the row-major tensor from data laid out in communication
    /// block order.
    pub fn materialize_row_major(&self, comm: &[f64]) -> Vec<f64> {
        assert_eq!(comm.len() as u64, self.block_count * self.block_elems);
        let mut out = vec![0.0; comm.len()];
        for c in 0..self.block_count {
            let logical = self.perm.logical_of(c);
            let src = (c * self.block_elems) as usize;
            for (i, off) in self.logical_block_offsets(logical).into_iter().enumerate() {
                out[off as usize] = comm[src + i];
            }
        }
        out
    }

    /// Lays a row-major tensor out in communication block order.
    pub fn comm_order_from_row_major(&self, row_major: &[f64]) -> Vec<f64> {
        assert_eq!(row_major.len() as u64, self.block_count * self.block_elems);
        let mut out = vec![0.0; row_major.len()];
        for c in 0..self.block_count {
            let logical = self.perm.logical_of(c);
            let dst = (c * self.block_elems) as usize;
            for (i, off) in self.logical_block_offsets(logical).into_iter().enumerate() {
                out[dst + i] = row_major[off as usize];
            }
        }
        out
    }
}

/// Communication block layout of a tensor under its declared granularity,
/// optionally reordered by a strided placement's permutation.
pub fn block_layout(
    tensor: &TensorSpec,
    reshuffle: Option<&BlockPermutation>,
) -> Result<BlockLayout, ShardError> {
    let block_elems = tensor.resolve_granularity()?;
    let block_count = tensor.block_count()?;
    let perm = match reshuffle {
        Some(p) => {
            if p.len() != block_count {
                return Err(ShardError::ShapeMismatch {
                    tensor: tensor.name.clone(),
                    detail: format!("permutation over {} blocks, tensor has {}", p.len(), block_count),
                });
            }
            p.clone()
        }
        None => BlockPermutation::identity(block_count),
    };
    let tile_shape = match &tensor.granularity {
        GranularitySpec::Block { block_shape } => {
            // A tile spanning full trailing dimensions is just a contiguous
            // row chunk; keep the cheap path for it.
            let contiguous = block_shape[1..] == tensor.shape[1..];
            if contiguous {
                None
            } else {
                Some(block_shape.clone())
            }
        }
        _ => None,
    };
    Ok(BlockLayout {
        block_elems,
        block_count,
        perm,
        tile_shape,
        shape: tensor.shape.clone(),
    })
}
