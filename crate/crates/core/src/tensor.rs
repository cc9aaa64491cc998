//! Tensor metadata and sharding-granularity resolution.
//!
//! All planner arithmetic is carried out in element counts; byte widths only
//! enter when a collective alignment unit is derived from a byte quantum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How a tensor may be cut into atomic sharding blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GranularitySpec {
    /// Single elements; the tensor can be split anywhere.
    Element,
    /// `n` leading-dimension rows per block.
    Rows { value: u64 },
    /// A rectangular tile; one block per tile, `block_shape[d]` must divide
    /// `shape[d]` in every dimension.
    Block { block_shape: Vec<u64> },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShardError {
    #[error("granularity {granularity} does not divide tensor {tensor} ({detail})")]
    NonDividingGranularity {
        tensor: String,
        granularity: u64,
        detail: String,
    },
    #[error("shape mismatch for {tensor}: {detail}")]
    ShapeMismatch { tensor: String, detail: String },
    #[error("cannot compose granularity with Shard({dim}) on {tensor}: {detail}")]
    UnsupportedShardDim {
        tensor: String,
        dim: usize,
        detail: String,
    },
}

/// A tensor as the planner sees it: a name, a shape, an element width, and a
/// granularity declaration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<u64>,
    /// Bytes per element. Planning itself is element-based; this is kept so a
    /// group can reject mixed widths and derive byte-quantum alignment.
    pub elem_bytes: u32,
    pub granularity: GranularitySpec,
}

impl TensorSpec {
    pub fn new(
        name: impl Into<String>,
        shape: Vec<u64>,
        elem_bytes: u32,
        granularity: GranularitySpec,
    ) -> Self {
        Self {
            name: name.into(),
            shape,
            elem_bytes,
            granularity,
        }
    }

    /// Total element count (1 for a scalar / empty shape).
    pub fn total_elems(&self) -> u64 {
        self.shape.iter().product()
    }

    /// Elements spanned by one step of dimension `dim` in row-major order.
    pub fn stride(&self, dim: usize) -> u64 {
        self.shape[dim + 1..].iter().product()
    }

    /// Resolves the declared granularity to an element count `g` with
    /// `g * block_count == total_elems`.
    ///
    /// A granularity that does not divide the tensor is an error: padding is
    /// only ever inserted between tensors, never inside one, so a partial
    /// trailing block has no representation.
    pub fn resolve_granularity(&self) -> Result<u64, ShardError> {
        let total = self.total_elems();
        let g = match &self.granularity {
            GranularitySpec::Element => 1,
            GranularitySpec::Rows { value } => {
                if self.shape.is_empty() {
                    return Err(ShardError::ShapeMismatch {
                        tensor: self.name.clone(),
                        detail: "row granularity on a scalar".into(),
                    });
                }
                if *value == 0 || self.shape[0] % value != 0 {
                    return Err(ShardError::NonDividingGranularity {
                        tensor: self.name.clone(),
                        granularity: *value,
                        detail: format!("{} rows do not divide dim0={}", value, self.shape[0]),
                    });
                }
                value * self.stride(0)
            }
            GranularitySpec::Block { block_shape } => {
                if block_shape.len() != self.shape.len() {
                    return Err(ShardError::ShapeMismatch {
                        tensor: self.name.clone(),
                        detail: format!(
                            "block rank {} vs tensor rank {}",
                            block_shape.len(),
                            self.shape.len()
                        ),
                    });
                }
                for (d, (&b, &s)) in block_shape.iter().zip(&self.shape).enumerate() {
                    if b == 0 || s % b != 0 {
                        return Err(ShardError::NonDividingGranularity {
                            tensor: self.name.clone(),
                            granularity: b,
                            detail: format!("block dim {} = {} does not divide {}", d, b, s),
                        });
                    }
                }
                block_shape.iter().product()
            }
        };
        debug_assert!(g == 0 || total % g == 0);
        if g == 0 {
            return Err(ShardError::NonDividingGranularity {
                tensor: self.name.clone(),
                granularity: 0,
                detail: "zero-sized block".into(),
            });
        }
        Ok(g)
    }

    /// Number of atomic blocks under the resolved granularity.
    pub fn block_count(&self) -> Result<u64, ShardError> {
        Ok(self.total_elems() / self.resolve_granularity()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<u64>, g: GranularitySpec) -> TensorSpec {
        TensorSpec::new("t", shape, 4, g)
    }

    #[test]
    fn rows_granularity_resolves_to_row_elements() {
        let spec = t(vec![4, 8], GranularitySpec::Rows { value: 2 });
        assert_eq!(spec.resolve_granularity().unwrap(), 16);
        assert_eq!(spec.block_count().unwrap(), 2);
    }

    #[test]
    fn block_granularity_resolves_to_tile_elements() {
        let spec = t(
            vec![256, 256],
            GranularitySpec::Block {
                block_shape: vec![128, 128],
            },
        );
        assert_eq!(spec.resolve_granularity().unwrap(), 16384);
        assert_eq!(spec.block_count().unwrap(), 4);
    }

    #[test]
    fn element_granularity_is_one() {
        let spec = t(vec![3, 5, 7], GranularitySpec::Element);
        assert_eq!(spec.resolve_granularity().unwrap(), 1);
        assert_eq!(spec.block_count().unwrap(), 105);
    }

    #[test]
    fn non_dividing_rows_rejected() {
        let spec = t(vec![5], GranularitySpec::Rows { value: 2 });
        assert!(matches!(
            spec.resolve_granularity(),
            Err(ShardError::NonDividingGranularity { .. })
        ));
    }

    #[test]
    fn non_dividing_block_rejected() {
        let spec = t(
            vec![6, 6],
            GranularitySpec::Block {
                block_shape: vec![4, 3],
            },
        );
        assert!(matches!(
            spec.resolve_granularity(),
            Err(ShardError::NonDividingGranularity { .. })
        ));
    }

    #[test]
    fn block_rank_mismatch_rejected() {
        let spec = t(
            vec![6, 6],
            GranularitySpec::Block {
                block_shape: vec![2],
            },
        );
        assert!(matches!(
            spec.resolve_granularity(),
            Err(ShardError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn stride_is_row_major() {
        let spec = t(vec![8, 6, 4], GranularitySpec::Element);
        assert_eq!(spec.stride(0), 24);
        assert_eq!(spec.stride(1), 4);
        assert_eq!(spec.stride(2), 1);
    }
}
