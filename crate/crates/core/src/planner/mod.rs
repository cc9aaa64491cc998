//! Grouped-communication layout planning.
//!
//! Given an ordered group of tensors, a device count `m`, and a collective
//! alignment unit, the planner picks a per-device buffer size `S` and a
//! contiguous interval for every tensor inside the flat `m * S` buffer such
//! that
//!
//! 1. every tensor occupies exactly its element count and fits in the buffer,
//! 2. intervals are pairwise disjoint and keep the chosen tensor order,
//! 3. no device boundary `k * S` cuts a tensor anywhere but on one of its
//!    block boundaries.
//!
//! Everything else inside the buffer is padding. Minimising `S` exactly is
//! NP-hard (it embeds set partition), so [`min_shard_size`] runs a heuristic:
//! enumerate least-common-multiple prefixes of the tensors' block sizes in
//! ascending element-count order and, for each accumulated LCM `g`,
//! binary-search the smallest feasible multiple of `g`. Feasibility of a
//! single `S` is decided exactly by [`check_valid_shard`].
//!
//! [`oracle::oracle_min_shard`] provides the exact optimum for small
//! instances by exhaustive search; it intentionally shares no code with the
//! heuristic path beyond the problem types.

mod oracle;

pub use oracle::{oracle_min_shard, OracleLimits};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ShardError, TensorSpec};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error("mixed element widths in group: {0} and {1} bytes")]
    MixedElemWidth(u32, u32),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("feasibility search exceeded its upper bound at shard size {0}")]
    SearchBoundExceeded(u64),
    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),
    #[error("reference search limits exceeded: {0}")]
    LimitExceeded(String),
    #[error("no feasible layout at shard size {0}")]
    InfeasibleShard(u64),
}

/// Placement order of the tensors within the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorOrdering {
    /// Keep the declared group order.
    Default,
    /// Largest block size first; coarse tensors claim aligned space early.
    ByBlockSize,
    /// Lexicographically descending shape; equal shapes become adjacent.
    ByShape,
}

#[derive(Debug, Clone)]
pub(crate) struct ResolvedTensor {
    pub name: String,
    pub elems: u64,
    pub block_elems: u64,
    pub block_count: u64,
}

/// A parameter group ready for planning: tensors, device count, collective
/// alignment unit (in elements), and placement ordering.
#[derive(Debug, Clone)]
pub struct PlanProblem {
    tensors: Vec<TensorSpec>,
    devices: u32,
    coll_unit_elems: u64,
    ordering: TensorOrdering,
    pub(crate) resolved: Vec<ResolvedTensor>,
}

impl PlanProblem {
    pub fn new(
        tensors: Vec<TensorSpec>,
        devices: u32,
        coll_unit_elems: u64,
        ordering: TensorOrdering,
    ) -> Result<Self, PlanError> {
        if devices == 0 {
            return Err(PlanError::InvalidProblem("device count must be >= 1".into()));
        }
        if coll_unit_elems == 0 {
            return Err(PlanError::InvalidProblem(
                "collective alignment unit must be >= 1 element".into(),
            ));
        }
        let mut width: Option<u32> = None;
        let mut resolved = Vec::with_capacity(tensors.len());
        for t in &tensors {
            match width {
                None => width = Some(t.elem_bytes),
                Some(w) if w != t.elem_bytes => {
                    return Err(PlanError::MixedElemWidth(w, t.elem_bytes))
                }
                _ => {}
            }
            if t.total_elems() == 0 {
                return Err(PlanError::InvalidProblem(format!(
                    "tensor {} has zero elements",
                    t.name
                )));
            }
            let block_elems = t.resolve_granularity()?;
            resolved.push(ResolvedTensor {
                name: t.name.clone(),
                elems: t.total_elems(),
                block_elems,
                block_count: t.total_elems() / block_elems,
            });
        }
        Ok(Self {
            tensors,
            devices,
            coll_unit_elems,
            ordering,
            resolved,
        })
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn devices(&self) -> u32 {
        self.devices
    }

    pub fn coll_unit_elems(&self) -> u64 {
        self.coll_unit_elems
    }

    pub fn ordering(&self) -> TensorOrdering {
        self.ordering
    }

    pub fn total_elems(&self) -> u64 {
        self.resolved.iter().map(|t| t.elems).sum()
    }

    /// Tensor indices in placement order. Sorts are stable, so ties keep the
    /// declared order.
    pub fn planned_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.resolved.len()).collect();
        match self.ordering {
            TensorOrdering::Default => {}
            TensorOrdering::ByBlockSize => {
                order.sort_by(|&a, &b| {
                    self.resolved[b].block_elems.cmp(&self.resolved[a].block_elems)
                });
            }
            TensorOrdering::ByShape => {
                order.sort_by(|&a, &b| self.tensors[b].shape.cmp(&self.tensors[a].shape));
            }
        }
        order
    }
}

// ---------------------------------------------------------------------------
// Feasibility of a fixed shard size
// ---------------------------------------------------------------------------

/// True when a tensor of `e` elements with block size `g` may start at an
/// offset congruent to `a` within a shard of `s` elements: every device
/// boundary strictly inside the tensor must land on a block boundary.
fn start_residue_valid(a: u64, e: u64, g: u64, s: u64) -> bool {
    debug_assert!(a < s);
    let interior = (a + e).div_ceil(s) - 1;
    match interior {
        0 => true,
        1 => (s - a) % g == 0,
        _ => s % g == 0 && (s - a) % g == 0,
    }
}

/// Smallest `a >= lo` with `a ≡ r (mod g)`.
fn next_congruent(lo: u64, r: u64, g: u64) -> u64 {
    let rem = lo % g;
    if rem <= r {
        lo + (r - rem)
    } else {
        lo + g - (rem - r)
    }
}

/// Smallest valid in-shard offset `a` in `[lo, s)` for a tensor of `e`
/// elements with block size `g`, or None when no offset in the window works.
fn min_valid_residue(lo: u64, e: u64, g: u64, s: u64) -> Option<u64> {
    if lo >= s {
        return None;
    }
    let mut best: Option<u64> = None;
    // Entirely inside one shard.
    if e <= s && lo <= s - e {
        best = Some(lo);
    }
    // Crossing exactly one boundary: a + e in (s, 2s], (s - a) ≡ 0 (mod g).
    let cs_lo = lo.max((s + 1).saturating_sub(e));
    if let Some(hi_raw) = (2 * s).checked_sub(e) {
        let cs_hi = hi_raw.min(s - 1);
        if cs_lo <= cs_hi {
            let first = next_congruent(cs_lo, s % g, g);
            if first <= cs_hi {
                best = Some(best.map_or(first, |b| b.min(first)));
            }
        }
    }
    // Crossing two or more boundaries additionally forces g | s.
    if s % g == 0 {
        let cm_lo = lo.max((2 * s + 1).saturating_sub(e));
        if cm_lo < s {
            let first = next_congruent(cm_lo, 0, g);
            if first < s {
                best = Some(best.map_or(first, |b| b.min(first)));
            }
        }
    }
    debug_assert!(best.is_none_or(|a| start_residue_valid(a, e, g, s)));
    best
}

/// Leftmost feasible start `>= frontier` for a tensor, or None when the
/// boundary constraint is unsatisfiable at this shard size (which makes it
/// unsatisfiable at every position).
fn min_feasible_start(frontier: u64, e: u64, g: u64, s: u64) -> Option<u64> {
    let a = frontier % s;
    if let Some(found) = min_valid_residue(a, e, g, s) {
        return Some(frontier + (found - a));
    }
    // All residues of later shards are available; if none works the tensor
    // can never be placed at this shard size.
    min_valid_residue(0, e, g, s).map(|found| frontier - a + s + found)
}

/// One run of equal shard-count values in the feasibility table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpSegment {
    /// Inclusive block-index range within the tensor.
    pub first_block: u64,
    pub last_block: u64,
    /// Device-local shards required to store everything up to and including
    /// these blocks. Values above the device count are clamped to m + 1.
    pub used_shards: u64,
}

/// Witness state from a feasibility check: the leftmost-greedy start offsets
/// plus, per tensor, the segment-compressed shard-count table. Values are
/// non-decreasing within and across tensors; a feasible check never records
/// more than `m` distinct values per tensor.
#[derive(Debug, Clone)]
pub struct DpState {
    pub shard_elems: u64,
    pub feasible: bool,
    /// Start offsets per tensor, in placement order.
    pub starts: Vec<u64>,
    /// Segment table per tensor, in placement order; covers every block.
    pub segments: Vec<Vec<DpSegment>>,
}

fn emit_segments(start: u64, t: &ResolvedTensor, s: u64, clamp: u64) -> Vec<DpSegment> {
    let mut segs = Vec::new();
    let mut first = 0u64;
    while first < t.block_count {
        let end_of_first = start + (first + 1) * t.block_elems;
        let used = end_of_first.div_ceil(s);
        if used >= clamp {
            segs.push(DpSegment {
                first_block: first,
                last_block: t.block_count - 1,
                used_shards: clamp,
            });
            break;
        }
        // Last block whose end still lies within `used` shards.
        let last = ((used * s - start) / t.block_elems - 1).min(t.block_count - 1);
        segs.push(DpSegment {
            first_block: first,
            last_block: last,
            used_shards: used,
        });
        first = last + 1;
    }
    segs
}

/// Decides whether the group fits `m` shards of `shard_elems` elements each,
/// and returns the witness table.
///
/// Placement is leftmost-greedy in the planned order, which is exact for a
/// fixed order: a tensor's admissible starts depend only on its offset within
/// a shard, so taking the smallest admissible start can only enlarge the
/// choices left for its successors.
pub fn check_valid_shard(problem: &PlanProblem, shard_elems: u64) -> (bool, DpState) {
    let order = problem.planned_order();
    let m = problem.devices as u64;
    let mut state = DpState {
        shard_elems,
        feasible: true,
        starts: Vec::with_capacity(order.len()),
        segments: Vec::with_capacity(order.len()),
    };
    if order.is_empty() {
        return (true, state);
    }
    if shard_elems == 0 {
        state.feasible = false;
        return (false, state);
    }
    let clamp = m + 1;
    let mut frontier = 0u64;
    let mut aligned = true;
    for &idx in &order {
        let t = &problem.resolved[idx];
        let start = if aligned {
            match min_feasible_start(frontier, t.elems, t.block_elems, shard_elems) {
                Some(l) => l,
                None => {
                    aligned = false;
                    frontier
                }
            }
        } else {
            frontier
        };
        state.starts.push(start);
        state.segments.push(emit_segments(start, t, shard_elems, clamp));
        frontier = start + t.elems;
    }
    state.feasible = aligned && frontier <= m * shard_elems;
    (state.feasible, state)
}

/// Frontier-only variant of [`check_valid_shard`] for the search hot path.
fn greedy_fits(problem: &PlanProblem, order: &[usize], shard_elems: u64) -> bool {
    if shard_elems == 0 {
        return order.is_empty();
    }
    let mut frontier = 0u64;
    for &idx in order {
        let t = &problem.resolved[idx];
        match min_feasible_start(frontier, t.elems, t.block_elems, shard_elems) {
            Some(l) => frontier = l + t.elems,
            None => return false,
        }
    }
    frontier <= problem.devices as u64 * shard_elems
}

/// Minimal per-device shard size found by the LCM-prefix search.
///
/// Tensors are sorted by ascending element count; walking that order, the
/// running LCM of the collective unit and the block sizes seen so far yields
/// one candidate alignment per prefix (the empty prefix, i.e. the collective
/// unit alone, is searched too). For each candidate `g` the smallest feasible
/// multiple of `g` is binary-searched between the even split and a
/// start-every-tensor-on-its-own-block upper bound; the upper bound is always
/// feasible, so the search result is a verified-feasible size even where
/// feasibility is not monotone. The best candidate wins.
///
/// Sound but not exact: results are feasible and at least the even split,
/// and land within 2x of the true optimum on the instance families the
/// reference search can cover.
pub fn min_shard_size(problem: &PlanProblem) -> Result<u64, PlanError> {
    if problem.resolved.is_empty() {
        return Ok(0);
    }
    let order = problem.planned_order();
    let m = problem.devices as u64;
    let total: u64 = problem.total_elems();
    let lower = total.div_ceil(m);
    let slack_upper: u64 = problem
        .resolved
        .iter()
        .map(|t| t.elems + t.block_elems)
        .sum();

    let mut by_elems: Vec<&ResolvedTensor> = problem.resolved.iter().collect();
    by_elems.sort_by_key(|t| t.elems);
    let mut candidates: Vec<u64> = vec![problem.coll_unit_elems];
    let mut g = problem.coll_unit_elems as u128;
    for t in by_elems {
        g = num_integer::lcm(g, t.block_elems as u128);
        if g > slack_upper as u128 {
            // Multiples of this (and every later) prefix can no longer beat
            // the collective-unit candidate.
            break;
        }
        if g as u64 != *candidates.last().unwrap() {
            candidates.push(g as u64);
        }
    }

    let mut best = u64::MAX;
    for g in candidates {
        let mut lo = lower.div_ceil(g).max(1);
        let mut hi = slack_upper.div_ceil(g);
        if hi < lo {
            hi = lo;
        }
        if !greedy_fits(problem, &order, hi * g) {
            return Err(PlanError::SearchBoundExceeded(hi * g));
        }
        // Invariant: hi * g is verified feasible.
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if greedy_fits(problem, &order, mid * g) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        best = best.min(hi * g);
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

/// A tensor's slice of one device region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerSegment {
    pub device: u32,
    /// Offset within the device's region.
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub name: String,
    /// Position of this tensor in the problem's declared list.
    pub input_index: usize,
    pub elems: u64,
    pub block_elems: u64,
    /// Interval [start, end) in the flat m * S element space.
    pub start: u64,
    pub end: u64,
    pub owners: Vec<OwnerSegment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddingInterval {
    pub start: u64,
    pub end: u64,
}

/// A finished layout: entries in placement order plus the padding complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub version: u32,
    pub devices: u32,
    pub shard_elems: u64,
    pub coll_unit_elems: u64,
    pub elem_bytes: u32,
    pub ordering: TensorOrdering,
    pub tensors: Vec<PlanEntry>,
    pub padding: Vec<PaddingInterval>,
    pub padding_elems: u64,
    pub total_elems: u64,
    /// Filled by validation when the plan is re-checked; empty on a freshly
    /// built plan.
    #[serde(default)]
    pub violations: Vec<String>,
}

impl LayoutPlan {
    pub fn padding_ratio(&self) -> f64 {
        if self.total_elems == 0 {
            0.0
        } else {
            self.padding_elems as f64 / self.total_elems as f64
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serialization");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn owner_split(start: u64, end: u64, s: u64) -> Vec<OwnerSegment> {
    let mut owners = Vec::new();
    let mut pos = start;
    while pos < end {
        let device = pos / s;
        let device_end = (device + 1) * s;
        let stop = end.min(device_end);
        owners.push(OwnerSegment {
            device: device as u32,
            offset: pos - device * s,
            len: stop - pos,
        });
        pos = stop;
    }
    owners
}

/// Materialises the layout recorded in a feasible check witness.
///
/// The witness is re-derived rather than trusted: each recorded start must be
/// exactly the leftmost admissible position and must reproduce the recorded
/// segment table, otherwise the state does not describe this problem and an
/// internal inconsistency is reported.
pub fn build_plan(
    problem: &PlanProblem,
    shard_elems: u64,
    state: &DpState,
) -> Result<LayoutPlan, PlanError> {
    if !state.feasible {
        return Err(PlanError::InfeasibleShard(shard_elems));
    }
    if state.shard_elems != shard_elems {
        return Err(PlanError::InternalInconsistency(format!(
            "witness computed at shard size {}, plan requested at {}",
            state.shard_elems, shard_elems
        )));
    }
    let order = problem.planned_order();
    if state.starts.len() != order.len() || state.segments.len() != order.len() {
        return Err(PlanError::InternalInconsistency(
            "witness does not cover the problem's tensors".into(),
        ));
    }

    let m = problem.devices as u64;
    let mut entries = Vec::with_capacity(order.len());
    let mut frontier = 0u64;
    for (pos, &idx) in order.iter().enumerate() {
        let t = &problem.resolved[idx];
        let start = state.starts[pos];
        let leftmost = min_feasible_start(frontier, t.elems, t.block_elems, shard_elems);
        if leftmost != Some(start) {
            return Err(PlanError::InternalInconsistency(format!(
                "recorded start {} of {} is not the leftmost admissible position",
                start, t.name
            )));
        }
        let expect = emit_segments(start, t, shard_elems, m + 1);
        if expect != state.segments[pos] {
            return Err(PlanError::InternalInconsistency(format!(
                "segment table of {} does not match its recorded start",
                t.name
            )));
        }
        let end = start + t.elems;
        entries.push(PlanEntry {
            name: t.name.clone(),
            input_index: idx,
            elems: t.elems,
            block_elems: t.block_elems,
            start,
            end,
            owners: owner_split(start, end, shard_elems),
        });
        frontier = end;
    }
    let capacity = m * shard_elems;
    if frontier > capacity {
        return Err(PlanError::InfeasibleShard(shard_elems));
    }

    let mut padding = Vec::new();
    let mut pos = 0u64;
    for e in &entries {
        if e.start > pos {
            padding.push(PaddingInterval {
                start: pos,
                end: e.start,
            });
        }
        pos = e.end;
    }
    if capacity > pos {
        padding.push(PaddingInterval {
            start: pos,
            end: capacity,
        });
    }
    let total_elems = problem.total_elems();
    Ok(LayoutPlan {
        version: 1,
        devices: problem.devices,
        shard_elems,
        coll_unit_elems: problem.coll_unit_elems,
        elem_bytes: problem.tensors.first().map_or(0, |t| t.elem_bytes),
        ordering: problem.ordering,
        tensors: entries,
        padding,
        padding_elems: capacity - total_elems,
        total_elems,
        violations: Vec::new(),
    })
}

/// Searches, checks, and materialises in one call.
pub fn solve(problem: &PlanProblem) -> Result<LayoutPlan, PlanError> {
    let s = min_shard_size(problem)?;
    if problem.resolved.is_empty() {
        return Ok(LayoutPlan {
            version: 1,
            devices: problem.devices,
            shard_elems: 0,
            coll_unit_elems: problem.coll_unit_elems,
            elem_bytes: 0,
            ordering: problem.ordering,
            tensors: Vec::new(),
            padding: Vec::new(),
            padding_elems: 0,
            total_elems: 0,
            violations: Vec::new(),
        });
    }
    let (feasible, state) = check_valid_shard(problem, s);
    if !feasible {
        return Err(PlanError::InfeasibleShard(s));
    }
    build_plan(problem, s, &state)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A broken plan invariant. Validation reports all violations instead of
/// stopping at the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    BadLength {
        tensor: String,
        expected: u64,
        got: u64,
    },
    OutOfBounds {
        tensor: String,
        end: u64,
        capacity: u64,
    },
    Overlap {
        first: String,
        second: String,
    },
    /// Device boundary `device_boundary * S` cuts the tensor off-block.
    NonShardedBlock {
        tensor: String,
        device_boundary: u64,
    },
    OrderViolation {
        detail: String,
    },
    OwnerMismatch {
        tensor: String,
    },
    PaddingMismatch {
        detail: String,
    },
    ProblemMismatch {
        detail: String,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::BadLength {
                tensor,
                expected,
                got,
            } => write!(f, "{tensor}: interval holds {got} elements, tensor has {expected}"),
            Violation::OutOfBounds {
                tensor,
                end,
                capacity,
            } => write!(f, "{tensor}: interval ends at {end}, buffer capacity is {capacity}"),
            Violation::Overlap { first, second } => {
                write!(f, "{first} and {second} overlap")
            }
            Violation::NonShardedBlock {
                tensor,
                device_boundary,
            } => write!(
                f,
                "{tensor}: device boundary {device_boundary} cuts a block"
            ),
            Violation::OrderViolation { detail } => write!(f, "order violation: {detail}"),
            Violation::OwnerMismatch { tensor } => {
                write!(f, "{tensor}: recorded owners do not match its interval")
            }
            Violation::PaddingMismatch { detail } => write!(f, "padding mismatch: {detail}"),
            Violation::ProblemMismatch { detail } => {
                write!(f, "plan does not match problem: {detail}")
            }
        }
    }
}

/// Checks every plan invariant against the problem from the recorded data
/// alone; nothing from the construction path is trusted.
pub fn validate_plan(plan: &LayoutPlan, problem: &PlanProblem) -> Vec<Violation> {
    let mut out = Vec::new();
    let s = plan.shard_elems;
    let m = plan.devices as u64;
    let capacity = m * s;

    if plan.devices != problem.devices() {
        out.push(Violation::ProblemMismatch {
            detail: format!(
                "plan for {} devices, problem has {}",
                plan.devices,
                problem.devices()
            ),
        });
    }
    if plan.tensors.len() != problem.resolved.len() {
        out.push(Violation::ProblemMismatch {
            detail: format!(
                "plan lists {} tensors, problem has {}",
                plan.tensors.len(),
                problem.resolved.len()
            ),
        });
        return out;
    }

    // Entry set: every declared tensor exactly once, with matching metadata.
    let mut seen = vec![false; problem.resolved.len()];
    for e in &plan.tensors {
        match problem.resolved.get(e.input_index) {
            None => out.push(Violation::ProblemMismatch {
                detail: format!("{} references tensor index {}", e.name, e.input_index),
            }),
            Some(t) => {
                if seen[e.input_index] {
                    out.push(Violation::ProblemMismatch {
                        detail: format!("tensor index {} listed twice", e.input_index),
                    });
                }
                seen[e.input_index] = true;
                if t.name != e.name || t.elems != e.elems || t.block_elems != e.block_elems {
                    out.push(Violation::ProblemMismatch {
                        detail: format!("{} metadata differs from the problem's", e.name),
                    });
                }
            }
        }
    }

    if plan.tensors.iter().map(|e| e.input_index).collect::<Vec<_>>() != problem.planned_order() {
        out.push(Violation::OrderViolation {
            detail: "entries are not in the problem's placement order".into(),
        });
    }

    for e in &plan.tensors {
        if e.end < e.start || e.end - e.start != e.elems {
            out.push(Violation::BadLength {
                tensor: e.name.clone(),
                expected: e.elems,
                got: e.end.saturating_sub(e.start),
            });
            continue;
        }
        if e.end > capacity {
            out.push(Violation::OutOfBounds {
                tensor: e.name.clone(),
                end: e.end,
                capacity,
            });
        }
        if s > 0 {
            let mut k = e.start / s + 1;
            while k * s < e.end {
                if (k * s - e.start) % e.block_elems != 0 {
                    out.push(Violation::NonShardedBlock {
                        tensor: e.name.clone(),
                        device_boundary: k,
                    });
                }
                k += 1;
            }
        }
        if e.owners != owner_split(e.start, e.end, s.max(1)) {
            out.push(Violation::OwnerMismatch {
                tensor: e.name.clone(),
            });
        }
    }

    // Disjointness and placement-order monotonicity.
    let mut by_start: Vec<&PlanEntry> = plan.tensors.iter().collect();
    by_start.sort_by_key(|e| e.start);
    for pair in by_start.windows(2) {
        if pair[1].start < pair[0].end {
            out.push(Violation::Overlap {
                first: pair[0].name.clone(),
                second: pair[1].name.clone(),
            });
        }
    }
    if plan
        .tensors
        .windows(2)
        .any(|w| w[1].start < w[0].end)
    {
        out.push(Violation::OrderViolation {
            detail: "listed intervals are not non-decreasing".into(),
        });
    }

    // Padding must be exactly the complement.
    let mut expected = Vec::new();
    let mut pos = 0u64;
    for e in &by_start {
        if e.start > pos {
            expected.push(PaddingInterval {
                start: pos,
                end: e.start,
            });
        }
        pos = pos.max(e.end);
    }
    if capacity > pos {
        expected.push(PaddingInterval {
            start: pos,
            end: capacity,
        });
    }
    if expected != plan.padding {
        out.push(Violation::PaddingMismatch {
            detail: "recorded padding is not the interval complement".into(),
        });
    }
    let pad_total: u64 = expected.iter().map(|p| p.end - p.start).sum();
    if plan.padding_elems != pad_total {
        out.push(Violation::PaddingMismatch {
            detail: format!(
                "padding_elems {} != complement total {}",
                plan.padding_elems, pad_total
            ),
        });
    }
    out
}

/// Padding cost summary of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddingReport {
    pub total_elems: u64,
    pub capacity_elems: u64,
    pub padding_elems: u64,
    /// padding / payload; 0 for an empty plan.
    pub ratio: f64,
}

pub fn padding_report(plan: &LayoutPlan) -> PaddingReport {
    PaddingReport {
        total_elems: plan.total_elems,
        capacity_elems: plan.devices as u64 * plan.shard_elems,
        padding_elems: plan.padding_elems,
        ratio: plan.padding_ratio(),
    }
}
