//! Deterministic multi-rank simulation of a device mesh.
//!
//! Every rank's shard of a distributed tensor lives in one process, and
//! collectives are plain data movement, so tests can compare distributed
//! results against single-rank references bit for bit.
//!
//! Numeric convention: every reduction folds in flat rank order starting
//! from +0.0, i.e. `((0 + p0) + p1) + p2 ...`. This holds for 1-D partial
//! reductions and for [`reduce_partial_2d`] alike, so a reference that sums
//! rank contributions the same way reproduces the simulator exactly, down to
//! the last rounding.

use std::fmt::Debug;

use thiserror::Error;

use crate::placement::{block_layout, Placement};
use crate::tensor::{ShardError, TensorSpec};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("rank {0} out of range for mesh of {1}")]
    RankOutOfRange(u32, u32),
    #[error("rank {0} already submitted to this rendezvous")]
    DuplicateSubmission(u32),
    #[error("rendezvous incomplete: rank {0} never submitted")]
    MissingRank(u32),
    #[error("rendezvous metadata mismatch at rank {rank}: {detail}")]
    MetadataMismatch { rank: u32, detail: String },
    #[error("unsupported conversion: {0}")]
    UnsupportedConversion(String),
    #[error("placement does not fit this tensor or mesh: {0}")]
    PlacementShape(String),
    #[error("rank {rank} local has {got} elements, placement implies {expected}")]
    LocalSize { rank: u32, expected: u64, got: u64 },
    #[error("operation needs a {1}-dim mesh, this one has {0} dims")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Shard(#[from] ShardError),
}

/// A named-dimension device mesh. Ranks are flat indices in row-major
/// coordinate order: the last dimension varies fastest.
#[derive(Debug, Clone)]
pub struct SimMesh {
    dims: Vec<(String, u32)>,
}

impl SimMesh {
    pub fn new(dims: Vec<(String, u32)>) -> Result<Self, MeshError> {
        if dims.is_empty() || dims.iter().any(|(_, s)| *s == 0) {
            return Err(MeshError::PlacementShape(
                "mesh dimensions must be non-empty and positive".into(),
            ));
        }
        Ok(Self { dims })
    }

    pub fn new_1d(size: u32) -> Result<Self, MeshError> {
        Self::new(vec![("mesh".into(), size)])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn size(&self) -> u32 {
        self.dims.iter().map(|(_, s)| s).product()
    }

    pub fn dim_size(&self, d: usize) -> u32 {
        self.dims[d].1
    }

    pub fn dim_name(&self, d: usize) -> &str {
        &self.dims[d].0
    }

    pub fn coords(&self, rank: u32) -> Vec<u32> {
        let mut rem = rank;
        let mut out = vec![0; self.dims.len()];
        for d in (0..self.dims.len()).rev() {
            out[d] = rem % self.dims[d].1;
            rem /= self.dims[d].1;
        }
        out
    }

    pub fn rank_of(&self, coords: &[u32]) -> u32 {
        coords
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&c, (_, s))| acc * s + c)
    }
}

/// Collective entry barrier. Each rank submits its view of the operation's
/// metadata; [`Rendezvous::complete`] then checks that everyone arrived with
/// identical metadata. Divergence is a returned error, never a hang, which is
/// the point: a mismatched collective in a real job deadlocks, here it fails
/// the test that caused it.
#[derive(Debug)]
pub struct Rendezvous<M> {
    entries: Vec<Option<M>>,
}

impl<M: PartialEq + Debug> Rendezvous<M> {
    pub fn new(size: u32) -> Self {
        Self {
            entries: (0..size).map(|_| None).collect(),
        }
    }

    pub fn submit(&mut self, rank: u32, meta: M) -> Result<(), MeshError> {
        let size = self.entries.len() as u32;
        let slot = self
            .entries
            .get_mut(rank as usize)
            .ok_or(MeshError::RankOutOfRange(rank, size))?;
        if slot.is_some() {
            return Err(MeshError::DuplicateSubmission(rank));
        }
        *slot = Some(meta);
        Ok(())
    }

    /// Validates full participation and metadata agreement; returns rank 0's
    /// metadata. Submission order does not matter.
    pub fn complete(&self) -> Result<&M, MeshError> {
        let mut first: Option<&M> = None;
        for (rank, slot) in self.entries.iter().enumerate() {
            let meta = slot
                .as_ref()
                .ok_or(MeshError::MissingRank(rank as u32))?;
            match first {
                None => first = Some(meta),
                Some(head) if head != meta => {
                    return Err(MeshError::MetadataMismatch {
                        rank: rank as u32,
                        detail: format!("{:?} vs rank 0's {:?}", meta, head),
                    });
                }
                _ => {}
            }
        }
        first.ok_or(MeshError::MissingRank(0))
    }
}

/// All ranks enter a collective with identical metadata; a divergent
/// simulator bug surfaces here as an error.
fn rendezvous_all(mesh: &SimMesh, meta: &str) -> Result<(), MeshError> {
    let mut rv = Rendezvous::new(mesh.size());
    for rank in 0..mesh.size() {
        rv.submit(rank, meta.to_string())?;
    }
    rv.complete().map(|_| ())
}

/// Comm-order block counts per rank for a ragged placement. For the strided
/// variant, `counts` holds per-part block counts and each rank owns its count
/// once per outer part.
fn ragged_comm_counts(p: &Placement, block_count: u64) -> Option<Vec<u64>> {
    match p {
        Placement::RaggedShard { counts } => Some(counts.clone()),
        Placement::StridedRaggedShard { counts, .. } => {
            let sum: u64 = counts.iter().sum();
            if sum == 0 || block_count % sum != 0 {
                return Some(counts.clone());
            }
            let outer = block_count / sum;
            Some(counts.iter().map(|c| c * outer).collect())
        }
        _ => None,
    }
}

/// Global row-major element index of each local element, in local order.
/// This one map drives scatter, gather, and size validation, so the three
/// can never disagree about what a rank holds.
fn global_indices(
    mesh: &SimMesh,
    spec: &TensorSpec,
    placements: &[Placement],
    rank: u32,
) -> Result<Vec<u64>, MeshError> {
    if placements.len() != mesh.ndim() {
        return Err(MeshError::DimMismatch(mesh.ndim(), placements.len()));
    }
    let coords = mesh.coords(rank);
    let mut idx: Vec<u64> = (0..spec.total_elems()).collect();
    let mut sharded_dims: Vec<usize> = Vec::new();
    for (d, p) in placements.iter().enumerate() {
        match p {
            Placement::Replicate | Placement::Partial => {}
            Placement::Shard { dim } => {
                if *dim >= spec.shape.len() {
                    return Err(MeshError::PlacementShape(format!(
                        "Shard({dim}) on rank-{} tensor {}",
                        spec.shape.len(),
                        spec.name
                    )));
                }
                if sharded_dims.contains(dim) {
                    return Err(MeshError::PlacementShape(format!(
                        "tensor dim {dim} sharded on two mesh dims"
                    )));
                }
                sharded_dims.push(*dim);
                let parts = mesh.dim_size(d) as u64;
                let extent = spec.shape[*dim];
                if extent % parts != 0 {
                    return Err(MeshError::PlacementShape(format!(
                        "dim {dim} extent {extent} not divisible by {parts} ranks"
                    )));
                }
                let per = extent / parts;
                let lo = coords[d] as u64 * per;
                let hi = lo + per;
                let stride = spec.stride(*dim);
                idx.retain(|&g| {
                    let c = (g / stride) % extent;
                    c >= lo && c < hi
                });
            }
            Placement::RaggedShard { .. } | Placement::StridedRaggedShard { .. } => {
                if mesh.ndim() != 1 {
                    return Err(MeshError::PlacementShape(
                        "ragged placements are one-dimensional".into(),
                    ));
                }
                let reshuffle = match p {
                    Placement::StridedRaggedShard { reshuffle, .. } => Some(reshuffle),
                    _ => None,
                };
                let layout = block_layout(spec, reshuffle)?;
                let comm_counts = ragged_comm_counts(p, layout.block_count).unwrap();
                if comm_counts.len() != mesh.size() as usize {
                    return Err(MeshError::PlacementShape(format!(
                        "{} ragged counts for a mesh of {}",
                        comm_counts.len(),
                        mesh.size()
                    )));
                }
                if comm_counts.iter().sum::<u64>() != layout.block_count {
                    return Err(MeshError::PlacementShape(format!(
                        "ragged counts cover {} blocks, tensor has {}",
                        comm_counts.iter().sum::<u64>(),
                        layout.block_count
                    )));
                }
                let before: u64 = comm_counts[..rank as usize].iter().sum();
                let mut out =
                    Vec::with_capacity((comm_counts[rank as usize] * layout.block_elems) as usize);
                for c in before..before + comm_counts[rank as usize] {
                    let logical = layout.perm.logical_of(c);
                    out.extend(layout.logical_block_offsets(logical));
                }
                idx = out;
            }
        }
    }
    Ok(idx)
}

/// A tensor distributed over a mesh: one placement per mesh dimension and one
/// local buffer per rank, all held in-process.
#[derive(Debug, Clone)]
pub struct DistTensor {
    spec: TensorSpec,
    placements: Vec<Placement>,
    locals: Vec<Vec<f64>>,
}

impl DistTensor {
    /// Wraps pre-built locals, validating each rank's size against the
    /// placement.
    pub fn from_locals(
        mesh: &SimMesh,
        spec: TensorSpec,
        placements: Vec<Placement>,
        locals: Vec<Vec<f64>>,
    ) -> Result<Self, MeshError> {
        if locals.len() != mesh.size() as usize {
            return Err(MeshError::PlacementShape(format!(
                "{} locals for a mesh of {}",
                locals.len(),
                mesh.size()
            )));
        }
        for rank in 0..mesh.size() {
            let expected = global_indices(mesh, &spec, &placements, rank)?.len() as u64;
            let got = locals[rank as usize].len() as u64;
            if expected != got {
                return Err(MeshError::LocalSize {
                    rank,
                    expected,
                    got,
                });
            }
        }
        Ok(Self {
            spec,
            placements,
            locals,
        })
    }

    /// Scatters a full row-major tensor. Partial is not a valid target: there
    /// is no canonical way to split a value into addends.
    pub fn from_full(
        mesh: &SimMesh,
        spec: TensorSpec,
        placements: Vec<Placement>,
        full: &[f64],
    ) -> Result<Self, MeshError> {
        if full.len() as u64 != spec.total_elems() {
            return Err(MeshError::PlacementShape(format!(
                "{} values for tensor {} of {} elements",
                full.len(),
                spec.name,
                spec.total_elems()
            )));
        }
        if placements.iter().any(|p| matches!(p, Placement::Partial)) {
            return Err(MeshError::UnsupportedConversion(
                "cannot scatter a full tensor to a partial placement".into(),
            ));
        }
        let mut locals = Vec::with_capacity(mesh.size() as usize);
        for rank in 0..mesh.size() {
            let map = global_indices(mesh, &spec, &placements, rank)?;
            locals.push(map.into_iter().map(|g| full[g as usize]).collect());
        }
        Ok(Self {
            spec,
            placements,
            locals,
        })
    }

    pub fn replicate(mesh: &SimMesh, spec: TensorSpec, full: &[f64]) -> Result<Self, MeshError> {
        let placements = vec![Placement::Replicate; mesh.ndim()];
        Self::from_full(mesh, spec, placements, full)
    }

    /// Reassembles the full row-major tensor. Partial dims sum their
    /// contributions in flat rank order from +0.0; replicate dims read the
    /// coordinate-0 copy.
    pub fn to_full(&self, mesh: &SimMesh) -> Result<Vec<f64>, MeshError> {
        let replicate_dims: Vec<usize> = self
            .placements
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, Placement::Replicate))
            .map(|(d, _)| d)
            .collect();
        let accumulate = self
            .placements
            .iter()
            .any(|p| matches!(p, Placement::Partial));
        let mut out = vec![0.0f64; self.spec.total_elems() as usize];
        for rank in 0..mesh.size() {
            let coords = mesh.coords(rank);
            if replicate_dims.iter().any(|&d| coords[d] != 0) {
                continue;
            }
            let map = global_indices(mesh, &self.spec, &self.placements, rank)?;
            let local = &self.locals[rank as usize];
            for (l, &g) in map.iter().enumerate() {
                if accumulate {
                    out[g as usize] += local[l];
                } else {
                    out[g as usize] = local[l];
                }
            }
        }
        Ok(out)
    }

    pub fn spec(&self) -> &TensorSpec {
        &self.spec
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn local(&self, rank: u32) -> &[f64] {
        &self.locals[rank as usize]
    }

    pub fn local_mut(&mut self, rank: u32) -> &mut Vec<f64> {
        &mut self.locals[rank as usize]
    }

    pub fn locals(&self) -> &[Vec<f64>] {
        &self.locals
    }
}

/// Moves a 1-D distributed tensor to a new placement.
///
/// Supported: ragged or strided-ragged to replicate and back, ragged to
/// ragged with different counts, partial to replicate, partial to (strided)
/// ragged, and even-shard/replicate interconversion. Ragged and even shards
/// do not interconvert: an even shard ignores block boundaries, so the
/// conversion would silently cut blocks.
pub fn redistribute(
    mesh: &SimMesh,
    t: &DistTensor,
    target: Placement,
) -> Result<DistTensor, MeshError> {
    if mesh.ndim() != 1 {
        return Err(MeshError::DimMismatch(mesh.ndim(), 1));
    }
    let source = &t.placements[0];
    if *source == target {
        return Ok(t.clone());
    }
    let ragged = |p: &Placement| {
        matches!(
            p,
            Placement::RaggedShard { .. } | Placement::StridedRaggedShard { .. }
        )
    };
    if (ragged(source) && matches!(target, Placement::Shard { .. }))
        || (matches!(source, Placement::Shard { .. }) && ragged(&target))
    {
        return Err(MeshError::UnsupportedConversion(format!(
            "{source:?} -> {target:?}: ragged and even shards do not interconvert"
        )));
    }
    if matches!(target, Placement::Partial) {
        return Err(MeshError::UnsupportedConversion(
            "no collective produces a partial placement".into(),
        ));
    }
    rendezvous_all(
        mesh,
        &format!(
            "redistribute {} {:?} -> {:?}",
            t.spec.name, source, target
        ),
    )?;
    let full = t.to_full(mesh)?;
    DistTensor::from_full(mesh, t.spec.clone(), vec![target], &full)
}

/// Reduces a matrix that is partial on both dims of a 2-D mesh into
/// `[Replicate, Shard(0)]`: logically a reduce-scatter over the inner mesh
/// dim followed by an all-reduce over the outer one. The simulator computes
/// the single flat-rank-order fold instead, so the result does not depend on
/// how the two phases would interleave.
pub fn reduce_partial_2d(mesh: &SimMesh, t: &DistTensor) -> Result<DistTensor, MeshError> {
    if mesh.ndim() != 2 {
        return Err(MeshError::DimMismatch(mesh.ndim(), 2));
    }
    if t.placements != [Placement::Partial, Placement::Partial] {
        return Err(MeshError::PlacementShape(format!(
            "reduce_partial_2d input must be partial on both mesh dims, got {:?}",
            t.placements
        )));
    }
    if t.spec.shape.len() != 2 {
        return Err(MeshError::PlacementShape(format!(
            "reduce_partial_2d needs a matrix, {} has shape {:?}",
            t.spec.name, t.spec.shape
        )));
    }
    let inner = mesh.dim_size(1) as u64;
    if t.spec.shape[0] % inner != 0 {
        return Err(MeshError::PlacementShape(format!(
            "{} rows do not split over {} inner ranks",
            t.spec.shape[0], inner
        )));
    }
    rendezvous_all(mesh, &format!("reduce_partial_2d {}", t.spec.name))?;
    let full = t.to_full(mesh)?;
    DistTensor::from_full(
        mesh,
        t.spec.clone(),
        vec![Placement::Replicate, Placement::Shard { dim: 0 }],
        &full,
    )
}
