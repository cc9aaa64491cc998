//! Flat per-device parameter buffers addressed through a layout plan.
//!
//! Each device owns one contiguous region of `shard_elems` values; a tensor
//! lives at the plan's interval, possibly spanning several regions. Grouped
//! operations (zeroing, scaling, accumulation) walk the owned ranges only, so
//! padding bytes are never read or written and their content stays whatever
//! it was: the numeric results cannot depend on padding.

use thiserror::Error;

use crate::placement::BlockPermutation;
use crate::planner::LayoutPlan;

#[derive(Debug, Error)]
pub enum DBufferError {
    #[error("buffer shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
    #[error("tensor {name} holds {expected} values, got {got}")]
    BadLength {
        name: String,
        expected: u64,
        got: u64,
    },
    #[error("block permutation covers {perm} blocks, tensor {name} has {blocks}")]
    BadPermutation {
        name: String,
        perm: u64,
        blocks: u64,
    },
}

/// One element-wise pass over every owned range of the buffer.
#[derive(Debug)]
pub enum GroupedOp<'a> {
    Zero,
    Scale(f64),
    AddFrom(&'a DBuffer),
}

/// The grouped buffer: per-device storage plus the plan that addresses it.
#[derive(Debug, Clone)]
pub struct DBuffer {
    plan: LayoutPlan,
    regions: Vec<Vec<f64>>,
    epoch: u64,
}

impl DBuffer {
    /// Zero-initialised buffer laid out by `plan`.
    pub fn from_plan(plan: &LayoutPlan) -> Self {
        let regions = (0..plan.devices)
            .map(|_| vec![0.0; plan.shard_elems as usize])
            .collect();
        Self {
            plan: plan.clone(),
            regions,
            epoch: 0,
        }
    }

    pub fn plan(&self) -> &LayoutPlan {
        &self.plan
    }

    /// Number of grouped operations applied so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn region(&self, device: u32) -> &[f64] {
        &self.regions[device as usize]
    }

    /// Raw region access for staging and for poking padding in tests.
    pub fn region_mut(&mut self, device: u32) -> &mut [f64] {
        &mut self.regions[device as usize]
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.plan.tensors.iter().position(|e| e.name == name)
    }

    /// Writes a tensor's values (buffer order) into its owned ranges.
    pub fn write_tensor(&mut self, index: usize, values: &[f64]) -> Result<(), DBufferError> {
        let entry = self
            .plan
            .tensors
            .get(index)
            .ok_or_else(|| DBufferError::UnknownTensor(format!("#{index}")))?;
        if values.len() as u64 != entry.elems {
            return Err(DBufferError::BadLength {
                name: entry.name.clone(),
                expected: entry.elems,
                got: values.len() as u64,
            });
        }
        let mut next = 0usize;
        for seg in &entry.owners {
            let dst =
                &mut self.regions[seg.device as usize][seg.offset as usize..(seg.offset + seg.len) as usize];
            dst.copy_from_slice(&values[next..next + seg.len as usize]);
            next += seg.len as usize;
        }
        Ok(())
    }

    /// Reads a tensor back out of its owned ranges, in buffer order.
    pub fn read_tensor(&self, index: usize) -> Result<Vec<f64>, DBufferError> {
        let entry = self
            .plan
            .tensors
            .get(index)
            .ok_or_else(|| DBufferError::UnknownTensor(format!("#{index}")))?;
        let mut out = Vec::with_capacity(entry.elems as usize);
        for seg in &entry.owners {
            out.extend_from_slice(
                &self.regions[seg.device as usize][seg.offset as usize..(seg.offset + seg.len) as usize],
            );
        }
        Ok(out)
    }

    /// Reads a tensor and restores row-major order for a strided placement:
    /// buffer block `j` is logical block `reshuffle[j]`.
    pub fn materialize(
        &self,
        index: usize,
        block_elems: u64,
        reshuffle: Option<&BlockPermutation>,
    ) -> Result<Vec<f64>, DBufferError> {
        let stored = self.read_tensor(index)?;
        let perm = match reshuffle {
            None => return Ok(stored),
            Some(p) => p,
        };
        let name = &self.plan.tensors[index].name;
        let blocks = stored.len() as u64 / block_elems;
        if perm.len() != blocks {
            return Err(DBufferError::BadPermutation {
                name: name.clone(),
                perm: perm.len(),
                blocks,
            });
        }
        let g = block_elems as usize;
        let mut out = vec![0.0; stored.len()];
        for j in 0..blocks {
            let logical = perm.logical_of(j) as usize;
            out[logical * g..(logical + 1) * g].copy_from_slice(&stored[j as usize * g..(j as usize + 1) * g]);
        }
        Ok(out)
    }

    /// The flat image every device holds after the group's all-gather: the
    /// concatenation of all regions, padding included.
    pub fn stage_gather(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.plan.devices as u64 * self.plan.shard_elems) as usize);
        for r in &self.regions {
            out.extend_from_slice(r);
        }
        out
    }

    /// Applies `op` to every owned range; padding is not touched. Bumps the
    /// epoch.
    pub fn grouped_apply(&mut self, op: GroupedOp) -> Result<(), DBufferError> {
        if let GroupedOp::AddFrom(other) = &op {
            let same = other.plan.devices == self.plan.devices
                && other.plan.shard_elems == self.plan.shard_elems
                && other.plan.tensors == self.plan.tensors;
            if !same {
                return Err(DBufferError::ShapeMismatch(
                    "grouped accumulation needs identically planned buffers".into(),
                ));
            }
        }
        for entry in &self.plan.tensors {
            for seg in &entry.owners {
                let lo = seg.offset as usize;
                let hi = (seg.offset + seg.len) as usize;
                let dst = &mut self.regions[seg.device as usize][lo..hi];
                match &op {
                    GroupedOp::Zero => dst.fill(0.0),
                    GroupedOp::Scale(c) => dst.iter_mut().for_each(|v| *v *= c),
                    GroupedOp::AddFrom(other) => {
                        let src = &other.regions[seg.device as usize][lo..hi];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
            }
        }
        self.epoch += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{OwnerSegment, PaddingInterval, PlanEntry, TensorOrdering};

    /// A plan with one 6-element tensor at [2, 8) over two 5-element regions:
    /// device 0 holds [2, 5), device 1 holds [0, 3).
    fn spanning_plan() -> LayoutPlan {
        LayoutPlan {
            version: 1,
            devices: 2,
            shard_elems: 5,
            coll_unit_elems: 1,
            elem_bytes: 4,
            ordering: TensorOrdering::Default,
            tensors: vec![PlanEntry {
                name: "t1".into(),
                input_index: 0,
                elems: 6,
                block_elems: 2,
                start: 2,
                end: 8,
                owners: vec![
                    OwnerSegment {
                        device: 0,
                        offset: 2,
                        len: 3,
                    },
                    OwnerSegment {
                        device: 1,
                        offset: 0,
                        len: 3,
                    },
                ],
            }],
            padding: vec![
                PaddingInterval { start: 0, end: 2 },
                PaddingInterval { start: 8, end: 10 },
            ],
            padding_elems: 4,
            total_elems: 6,
            violations: Vec::new(),
        }
    }

    #[test]
    fn tensors_span_device_regions() {
        let mut buf = DBuffer::from_plan(&spanning_plan());
        buf.write_tensor(0, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(buf.region(0), &[0.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(buf.region(1), &[4.0, 5.0, 6.0, 0.0, 0.0]);
        assert_eq!(
            buf.read_tensor(0).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        );
    }

    #[test]
    fn grouped_ops_never_touch_padding() {
        let mut buf = DBuffer::from_plan(&spanning_plan());
        buf.write_tensor(0, &[1.0; 6]).unwrap();
        // Poison every padding slot.
        buf.region_mut(0)[0] = -9.0;
        buf.region_mut(0)[1] = -9.0;
        buf.region_mut(1)[3] = -9.0;
        buf.region_mut(1)[4] = -9.0;

        let mut other = DBuffer::from_plan(&spanning_plan());
        other.write_tensor(0, &[10.0; 6]).unwrap();

        buf.grouped_apply(GroupedOp::Scale(2.0)).unwrap();
        buf.grouped_apply(GroupedOp::AddFrom(&other)).unwrap();
        assert_eq!(buf.read_tensor(0).unwrap(), vec![12.0; 6]);
        buf.grouped_apply(GroupedOp::Zero).unwrap();
        assert_eq!(buf.read_tensor(0).unwrap(), vec![0.0; 6]);

        assert_eq!(buf.region(0)[..2], [-9.0, -9.0]);
        assert_eq!(buf.region(1)[3..], [-9.0, -9.0]);
        assert_eq!(buf.epoch(), 3);
    }

    #[test]
    fn accumulation_requires_identical_plans() {
        let mut buf = DBuffer::from_plan(&spanning_plan());
        let mut smaller = spanning_plan();
        smaller.shard_elems = 6;
        let other = DBuffer::from_plan(&smaller);
        assert!(matches!(
            buf.grouped_apply(GroupedOp::AddFrom(&other)),
            Err(DBufferError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn stage_gather_concatenates_regions() {
        let mut buf = DBuffer::from_plan(&spanning_plan());
        buf.write_tensor(0, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(
            buf.stage_gather(),
            vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0]
        );
    }

    #[test]
    fn materialize_undoes_a_block_reshuffle() {
        let mut plan = spanning_plan();
        plan.shard_elems = 4;
        plan.tensors[0] = PlanEntry {
            name: "t1".into(),
            input_index: 0,
            elems: 8,
            block_elems: 2,
            start: 0,
            end: 8,
            owners: vec![
                OwnerSegment {
                    device: 0,
                    offset: 0,
                    len: 4,
                },
                OwnerSegment {
                    device: 1,
                    offset: 0,
                    len: 4,
                },
            ],
        };
        plan.padding = Vec::new();
        plan.padding_elems = 0;
        plan.total_elems = 8;
        let mut buf = DBuffer::from_plan(&plan);
        // Buffer order: blocks a, b, c, d; logical order a, c, b, d.
        buf.write_tensor(0, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
            .unwrap();
        let perm = BlockPermutation::from_table(vec![0, 2, 1, 3]);
        assert_eq!(
            buf.materialize(0, 2, Some(&perm)).unwrap(),
            vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]
        );
        assert_eq!(
            buf.materialize(0, 2, None).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        );
        let wrong = BlockPermutation::identity(3);
        assert!(matches!(
            buf.materialize(0, 2, Some(&wrong)),
            Err(DBufferError::BadPermutation { .. })
        ));
    }

    #[test]
    fn bad_writes_are_rejected() {
        let mut buf = DBuffer::from_plan(&spanning_plan());
        assert!(matches!(
            buf.write_tensor(0, &[1.0; 5]),
            Err(DBufferError::BadLength { .. })
        ));
        assert!(matches!(
            buf.write_tensor(3, &[1.0; 6]),
            Err(DBufferError::UnknownTensor(_))
        ));
    }
}
