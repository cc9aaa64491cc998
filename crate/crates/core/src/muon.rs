//! Muon over ragged-sharded parameters.
//!
//! The update direction of a matrix parameter is the orthogonalised momentum,
//! computed by a Newton-Schulz iteration. Orthogonalisation needs the whole
//! matrix, so the distributed step gathers each parameter's momentum to a
//! single root rank, runs the iteration there, and scatters the result back
//! to the original ragged placement. Roots are chosen per parameter by a
//! least-loaded ledger, which spreads the serial Newton-Schulz work across
//! ranks when a group holds many parameters.
//!
//! Everything outside the gather/scatter is element-wise on local shards, and
//! the gather/scatter is pure data movement, so a distributed step reproduces
//! [`reference_step`] on the full matrix bit for bit.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::mesh::{redistribute, DistTensor, MeshError, Rendezvous, SimMesh};
use crate::placement::Placement;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("a zero matrix has no orthogonal factor")]
    ZeroMatrix,
    #[error("not a matrix: {0}")]
    NotMatrix(String),
    #[error("placement mismatch: {0}")]
    PlacementMismatch(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy)]
pub struct MuonConfig {
    /// Momentum decay.
    pub beta: f64,
    /// Use the gradient-plus-decayed-momentum direction instead of the plain
    /// momentum buffer.
    pub nesterov: bool,
    /// Newton-Schulz iterations per step.
    pub ns_steps: u32,
    /// Learning rate.
    pub lr: f64,
}

impl Default for MuonConfig {
    fn default() -> Self {
        Self {
            beta: 0.95,
            nesterov: false,
            ns_steps: 10,
            lr: 0.02,
        }
    }
}

/// Heavy-ball accumulation in place; returns the update direction.
/// Slices must have equal length.
pub fn momentum_update(momentum: &mut [f64], grad: &[f64], beta: f64, nesterov: bool) -> Vec<f64> {
    assert_eq!(momentum.len(), grad.len(), "momentum/gradient length");
    for (m, &g) in momentum.iter_mut().zip(grad) {
        *m = beta * *m + g;
    }
    if nesterov {
        momentum
            .iter()
            .zip(grad)
            .map(|(&m, &g)| g + beta * m)
            .collect()
    } else {
        momentum.to_vec()
    }
}

/// Per-rank load tracker for root selection. Each pick charges the chosen
/// rank with the parameter's size, so successive picks spread the
/// orthogonalisation work evenly: loads never diverge by more than the
/// largest single parameter.
#[derive(Debug, Clone)]
pub struct RootLedger {
    loads: Vec<u64>,
}

impl RootLedger {
    pub fn new(ranks: u32) -> Self {
        Self {
            loads: vec![0; ranks as usize],
        }
    }

    pub fn with_loads(loads: Vec<u64>) -> Self {
        Self { loads }
    }

    pub fn loads(&self) -> &[u64] {
        &self.loads
    }

    /// Least-loaded rank, lowest rank on ties; charges it with `size`.
    pub fn select_root(&mut self, size: u64) -> u32 {
        let root = (0..self.loads.len())
            .min_by_key(|&r| self.loads[r])
            .expect("ledger has at least one rank") as u32;
        self.loads[root as usize] += size;
        root
    }
}

/// Newton-Schulz iteration for the orthogonal polar factor.
///
/// The input is pre-scaled by its Frobenius norm, which brings every singular
/// value into (0, 1]; the cubic `x -> 1.5x - 0.5x^3` then drives each toward
/// 1 (quadratically once close), so the iterate converges to the product of
/// the singular vector factors. The Gram product is taken on the smaller side
/// of a rectangular input; the rule is fixed, so results are deterministic.
pub fn newton_schulz(m: &DMatrix<f64>, steps: u32) -> Result<DMatrix<f64>, TrainError> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(TrainError::NotMatrix(format!(
            "{}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let fro = m.norm();
    if fro == 0.0 {
        return Err(TrainError::ZeroMatrix);
    }
    let mut x = m / fro;
    for _ in 0..steps {
        let xxx = if x.ncols() <= x.nrows() {
            &x * (x.transpose() * &x)
        } else {
            (&x * x.transpose()) * &x
        };
        x = 1.5 * x - 0.5 * xxx;
    }
    Ok(x)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Orthogonalised update direction for a row-major matrix; a zero direction
/// stays zero (there is nothing to orthogonalise and no descent direction to
/// scale).
fn orthogonalize_update(
    rows: usize,
    cols: usize,
    update: &[f64],
    ns_steps: u32,
) -> Result<Vec<f64>, TrainError> {
    if update.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; update.len()]);
    }
    let x = DMatrix::from_row_slice(rows, cols, update);
    Ok(row_major(&newton_schulz(&x, ns_steps)?))
}

fn matrix_dims(t: &DistTensor) -> Result<(usize, usize), TrainError> {
    match t.spec().shape.as_slice() {
        [r, c] => Ok((*r as usize, *c as usize)),
        other => Err(TrainError::NotMatrix(format!(
            "{} has shape {:?}",
            t.spec().name,
            other
        ))),
    }
}

/// One distributed Muon step for a ragged-sharded matrix parameter.
/// Returns the root that ran the orthogonalisation.
pub fn muon_step(
    mesh: &SimMesh,
    weight: &mut DistTensor,
    grad: &DistTensor,
    momentum: &mut DistTensor,
    ledger: &mut RootLedger,
    cfg: &MuonConfig,
) -> Result<u32, TrainError> {
    let (rows, cols) = matrix_dims(weight)?;
    if mesh.ndim() != 1 {
        return Err(TrainError::Mesh(MeshError::DimMismatch(mesh.ndim(), 1)));
    }
    for (name, other) in [("gradient", grad as &DistTensor), ("momentum", momentum)] {
        if other.placements() != weight.placements() {
            return Err(TrainError::PlacementMismatch(format!(
                "{name} of {} is placed {:?}, weight is {:?}",
                weight.spec().name,
                other.placements(),
                weight.placements()
            )));
        }
        if other.spec().shape != weight.spec().shape
            || other.spec().granularity != weight.spec().granularity
        {
            return Err(TrainError::PlacementMismatch(format!(
                "{name} of {} disagrees on shape or granularity",
                weight.spec().name
            )));
        }
    }
    let counts = match weight.placements()[0].ragged_counts() {
        Some(c) => c.to_vec(),
        None => {
            return Err(TrainError::PlacementMismatch(format!(
                "{} is placed {:?}, muon expects a ragged shard",
                weight.spec().name,
                weight.placements()[0]
            )))
        }
    };

    // Local momentum and update direction; element-wise, so shard-local.
    let mut update_locals = Vec::with_capacity(mesh.size() as usize);
    for rank in 0..mesh.size() {
        let g = grad.local(rank).to_vec();
        let m = momentum.local_mut(rank);
        update_locals.push(momentum_update(m, &g, cfg.beta, cfg.nesterov));
    }
    let update = DistTensor::from_locals(
        mesh,
        weight.spec().clone(),
        weight.placements().to_vec(),
        update_locals,
    )?;

    // Root by least load; every rank derives the same answer from the shared
    // ledger, the rendezvous asserts so.
    let root = ledger.select_root(weight.spec().total_elems());
    let mut rv = Rendezvous::new(mesh.size());
    for rank in 0..mesh.size() {
        rv.submit(rank, (weight.spec().name.clone(), root))?;
    }
    rv.complete()?;

    // Gather every block to the root: a ragged recount, not a new collective.
    let mut to_root = vec![0u64; mesh.size() as usize];
    to_root[root as usize] = counts.iter().sum();
    let gathered = redistribute(mesh, &update, Placement::ragged(to_root.clone()))?;
    let ortho = orthogonalize_update(rows, cols, gathered.local(root), cfg.ns_steps)?;

    let mut ortho_locals: Vec<Vec<f64>> = vec![Vec::new(); mesh.size() as usize];
    ortho_locals[root as usize] = ortho;
    let ortho_dist = DistTensor::from_locals(
        mesh,
        weight.spec().clone(),
        vec![Placement::ragged(to_root)],
        ortho_locals,
    )?;
    let back = redistribute(mesh, &ortho_dist, weight.placements()[0].clone())?;

    for rank in 0..mesh.size() {
        let dir = back.local(rank).to_vec();
        let w = weight.local_mut(rank);
        for (wv, d) in w.iter_mut().zip(dir) {
            *wv -= cfg.lr * d;
        }
    }
    Ok(root)
}

/// Single-process Muon step on a full row-major matrix. The distributed step
/// reproduces this exactly: the shard-local arithmetic is element-wise and
/// the gather/scatter moves values without touching them.
pub fn reference_step(
    shape: &[u64],
    weight: &mut [f64],
    grad: &[f64],
    momentum: &mut [f64],
    cfg: &MuonConfig,
) -> Result<(), TrainError> {
    let (rows, cols) = match shape {
        [r, c] => (*r as usize, *c as usize),
        other => {
            return Err(TrainError::NotMatrix(format!("shape {:?}", other)));
        }
    };
    let update = momentum_update(momentum, grad, cfg.beta, cfg.nesterov);
    let ortho = orthogonalize_update(rows, cols, &update, cfg.ns_steps)?;
    for (w, d) in weight.iter_mut().zip(ortho) {
        *w -= cfg.lr * d;
    }
    Ok(())
}
