//! Exact minimum shard size by exhaustive search, for checking the heuristic
//! on small instances.
//!
//! The search tries every candidate `S` (multiples of the collective unit,
//! from the even split upward) and, per `S`, every placement: a depth-first
//! scan over all start offsets of each tensor in placement order, with
//! boundary admissibility decided by walking the interior device boundaries
//! directly. No closed-form start computation and no greedy shortcut are
//! used, so agreement with [`check_valid_shard`] is meaningful evidence.

use std::collections::HashSet;

use super::{PlanError, PlanProblem};

/// Instance-size bounds for the exhaustive search. The defaults keep the
/// worst case around a few million interval checks.
#[derive(Debug, Clone, Copy)]
pub struct OracleLimits {
    pub max_tensors: usize,
    pub max_total_elems: u64,
    pub max_devices: u32,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            max_tensors: 6,
            max_total_elems: 256,
            max_devices: 4,
        }
    }
}

/// True when a tensor of `e` elements with block size `g` may occupy
/// `[start, start + e)`: checked boundary by boundary.
fn interval_ok(start: u64, e: u64, g: u64, s: u64) -> bool {
    let mut k = start / s + 1;
    while k * s < start + e {
        if (k * s - start) % g != 0 {
            return false;
        }
        k += 1;
    }
    true
}

fn placeable(problem: &PlanProblem, order: &[usize], s: u64) -> bool {
    let m = problem.devices() as u64;
    let capacity = m * s;
    // (tensor position, frontier) pairs already known not to work.
    let mut dead: HashSet<(usize, u64)> = HashSet::new();

    fn dfs(
        problem: &PlanProblem,
        order: &[usize],
        s: u64,
        capacity: u64,
        pos: usize,
        frontier: u64,
        dead: &mut HashSet<(usize, u64)>,
    ) -> bool {
        if pos == order.len() {
            return true;
        }
        if dead.contains(&(pos, frontier)) {
            return false;
        }
        let t = &problem.resolved[order[pos]];
        if t.elems <= capacity.saturating_sub(frontier) {
            for start in frontier..=capacity - t.elems {
                if interval_ok(start, t.elems, t.block_elems, s)
                    && dfs(problem, order, s, capacity, pos + 1, start + t.elems, dead)
                {
                    return true;
                }
            }
        }
        dead.insert((pos, frontier));
        false
    }

    dfs(problem, order, s, capacity, 0, 0, &mut dead)
}

/// Exact minimum feasible shard size for the problem's placement order, or
/// [`PlanError::LimitExceeded`] when the instance is too large to enumerate.
pub fn oracle_min_shard(problem: &PlanProblem, limits: OracleLimits) -> Result<u64, PlanError> {
    if problem.resolved.len() > limits.max_tensors {
        return Err(PlanError::LimitExceeded(format!(
            "{} tensors, limit {}",
            problem.resolved.len(),
            limits.max_tensors
        )));
    }
    let total = problem.total_elems();
    if total > limits.max_total_elems {
        return Err(PlanError::LimitExceeded(format!(
            "{} elements, limit {}",
            total, limits.max_total_elems
        )));
    }
    if problem.devices() > limits.max_devices {
        return Err(PlanError::LimitExceeded(format!(
            "{} devices, limit {}",
            problem.devices(),
            limits.max_devices
        )));
    }
    if problem.resolved.is_empty() {
        return Ok(0);
    }

    let order = problem.planned_order();
    let unit = problem.coll_unit_elems();
    let m = problem.devices() as u64;
    let mut s = total.div_ceil(m).div_ceil(unit) * unit;
    let cap = total.div_ceil(unit) * unit;
    while s <= cap {
        if placeable(problem, &order, s) {
            return Ok(s);
        }
        s += unit;
    }
    // S = cap holds the whole group in device 0's region, so the loop above
    // cannot fall through.
    Err(PlanError::InternalInconsistency(
        "exhaustive search exceeded the single-device bound".into(),
    ))
}
