//! Model configuration files: a flat tensor list plus named groups that act
//! as the planning units. Each group is planned into its own buffer, so the
//! grouping controls how far apart tensors can share padding.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use raggedshard::tensor::{GranularitySpec, TensorSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("config has no tensors")]
    Empty,
    #[error("duplicate tensor name {0:?}")]
    DuplicateTensor(String),
    #[error("duplicate group name {0:?}")]
    DuplicateGroup(String),
    #[error("group {0:?} has no tensors")]
    EmptyGroup(String),
    #[error("group {group:?} lists unknown tensor {tensor:?}")]
    UnknownTensor { group: String, tensor: String },
    #[error("tensor {0:?} belongs to no group")]
    Ungrouped(String),
    #[error("tensor {0:?} belongs to more than one group")]
    MultiplyGrouped(String),
    #[error("group {group:?} mixes {a}-byte and {b}-byte dtypes")]
    MixedDtype { group: String, a: u32, b: u32 },
    #[error("row override {rows} does not divide dim 0 of tensor {tensor:?} ({dim0})")]
    BadRowOverride { tensor: String, rows: u64, dim0: u64 },
    #[error("collective unit of {gcoll} bytes is not a whole number of {dtype}-byte elements")]
    BadCollUnit { gcoll: u64, dtype: u32 },
}

/// Granularity as written in config files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfigGranularity {
    Element,
    Rows { value: u64 },
    Block { value: Vec<u64> },
}

impl ConfigGranularity {
    fn to_spec(&self) -> GranularitySpec {
        match self {
            ConfigGranularity::Element => GranularitySpec::Element,
            ConfigGranularity::Rows { value } => GranularitySpec::Rows { value: *value },
            ConfigGranularity::Block { value } => GranularitySpec::Block {
                block_shape: value.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorConfig {
    pub name: String,
    pub shape: Vec<u64>,
    pub dtype_bytes: u32,
    pub granularity: ConfigGranularity,
    /// Marks tensors whose row granularity a sweep may override (the big
    /// expert matrices); everything else keeps its configured granularity.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sweep: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    pub tensors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub tensors: Vec<TensorConfig>,
    /// Planning units. When absent the whole model is one group.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupConfig>,
}

/// A group expanded into planner inputs.
#[derive(Debug, Clone)]
pub struct PlanGroup {
    pub name: String,
    pub tensors: Vec<TensorSpec>,
}

impl ModelConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ModelConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Structural checks: unique names, groups partition the tensor list,
    /// uniform dtype per group.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.tensors.is_empty() {
            return Err(ConfigError::Empty);
        }
        let mut by_name: HashMap<&str, &TensorConfig> = HashMap::new();
        for t in &self.tensors {
            if by_name.insert(&t.name, t).is_some() {
                return Err(ConfigError::DuplicateTensor(t.name.clone()));
            }
        }
        if self.groups.is_empty() {
            let mut bytes = self.tensors.iter().map(|t| t.dtype_bytes);
            let first = bytes.next().unwrap();
            if let Some(other) = bytes.find(|&b| b != first) {
                return Err(ConfigError::MixedDtype {
                    group: self.name.clone(),
                    a: first,
                    b: other,
                });
            }
            return Ok(());
        }
        let mut seen_groups = HashMap::new();
        let mut membership: HashMap<&str, u32> = HashMap::new();
        for g in &self.groups {
            if seen_groups.insert(&g.name, ()).is_some() {
                return Err(ConfigError::DuplicateGroup(g.name.clone()));
            }
            if g.tensors.is_empty() {
                return Err(ConfigError::EmptyGroup(g.name.clone()));
            }
            let mut dtype = None;
            for name in &g.tensors {
                let t = by_name
                    .get(name.as_str())
                    .ok_or_else(|| ConfigError::UnknownTensor {
                        group: g.name.clone(),
                        tensor: name.clone(),
                    })?;
                *membership.entry(&t.name).or_default() += 1;
                match dtype {
                    None => dtype = Some(t.dtype_bytes),
                    Some(a) if a != t.dtype_bytes => {
                        return Err(ConfigError::MixedDtype {
                            group: g.name.clone(),
                            a,
                            b: t.dtype_bytes,
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        for t in &self.tensors {
            match membership.get(t.name.as_str()).copied().unwrap_or(0) {
                0 => return Err(ConfigError::Ungrouped(t.name.clone())),
                1 => {}
                _ => return Err(ConfigError::MultiplyGrouped(t.name.clone())),
            }
        }
        Ok(())
    }

    /// Expands groups into planner inputs, optionally overriding the row
    /// granularity of sweep-marked tensors.
    pub fn plan_groups(&self, rows_override: Option<u64>) -> Result<Vec<PlanGroup>, ConfigError> {
        self.check()?;
        let by_name: HashMap<&str, &TensorConfig> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let make = |t: &TensorConfig| -> Result<TensorSpec, ConfigError> {
            let granularity = match (t.sweep, rows_override) {
                (true, Some(rows)) => {
                    let dim0 = *t.shape.first().unwrap_or(&0);
                    if rows == 0 || dim0 % rows != 0 {
                        return Err(ConfigError::BadRowOverride {
                            tensor: t.name.clone(),
                            rows,
                            dim0,
                        });
                    }
                    GranularitySpec::Rows { value: rows }
                }
                _ => t.granularity.to_spec(),
            };
            Ok(TensorSpec::new(
                t.name.clone(),
                t.shape.clone(),
                t.dtype_bytes,
                granularity,
            ))
        };
        if self.groups.is_empty() {
            let tensors = self.tensors.iter().map(make).collect::<Result<_, _>>()?;
            return Ok(vec![PlanGroup {
                name: self.name.clone(),
                tensors,
            }]);
        }
        self.groups
            .iter()
            .map(|g| {
                let tensors = g
                    .tensors
                    .iter()
                    .map(|n| make(by_name[n.as_str()]))
                    .collect::<Result<_, _>>()?;
                Ok(PlanGroup {
                    name: g.name.clone(),
                    tensors,
                })
            })
            .collect()
    }

    pub fn total_elems(&self) -> u64 {
        self.tensors
            .iter()
            .map(|t| t.shape.iter().product::<u64>())
            .sum()
    }
}

/// Converts the collective alignment from bytes to elements of the group's
/// dtype; it must be a whole number of elements.
pub fn coll_unit_elems(gcoll_bytes: u64, dtype_bytes: u32) -> Result<u64, ConfigError> {
    if gcoll_bytes == 0 || dtype_bytes == 0 || gcoll_bytes % dtype_bytes as u64 != 0 {
        return Err(ConfigError::BadCollUnit {
            gcoll: gcoll_bytes,
            dtype: dtype_bytes,
        });
    }
    Ok(gcoll_bytes / dtype_bytes as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(name: &str, shape: Vec<u64>) -> TensorConfig {
        TensorConfig {
            name: name.into(),
            shape,
            dtype_bytes: 2,
            granularity: ConfigGranularity::Rows { value: 1 },
            sweep: false,
        }
    }

    fn grouped() -> ModelConfig {
        ModelConfig {
            name: "toy".into(),
            notes: None,
            tensors: vec![tensor("a", vec![4, 2]), tensor("b", vec![2, 2])],
            groups: vec![GroupConfig {
                name: "g0".into(),
                tensors: vec!["a".into(), "b".into()],
            }],
        }
    }

    #[test]
    fn groups_must_partition_the_tensor_list() {
        let mut missing = grouped();
        missing.groups[0].tensors.pop();
        assert!(matches!(missing.check(), Err(ConfigError::Ungrouped(t)) if t == "b"));

        let mut doubled = grouped();
        doubled.groups.push(GroupConfig {
            name: "g1".into(),
            tensors: vec!["b".into()],
        });
        doubled.groups[0].tensors = vec!["a".into(), "b".into()];
        assert!(matches!(
            doubled.check(),
            Err(ConfigError::MultiplyGrouped(t)) if t == "b"
        ));

        let mut unknown = grouped();
        unknown.groups[0].tensors.push("ghost".into());
        assert!(matches!(unknown.check(), Err(ConfigError::UnknownTensor { .. })));
    }

    #[test]
    fn sweep_override_applies_only_to_marked_tensors() {
        let mut cfg = grouped();
        cfg.tensors[0].sweep = true;
        let groups = cfg.plan_groups(Some(2)).unwrap();
        assert_eq!(
            groups[0].tensors[0].granularity,
            GranularitySpec::Rows { value: 2 }
        );
        assert_eq!(
            groups[0].tensors[1].granularity,
            GranularitySpec::Rows { value: 1 }
        );
        assert!(matches!(
            cfg.plan_groups(Some(3)),
            Err(ConfigError::BadRowOverride { rows: 3, .. })
        ));
    }

    #[test]
    fn dtype_must_be_uniform_within_a_group() {
        let mut cfg = grouped();
        cfg.tensors[1].dtype_bytes = 4;
        assert!(matches!(cfg.check(), Err(ConfigError::MixedDtype { .. })));
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = grouped();
        let parsed: ModelConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn collective_unit_conversion() {
        assert_eq!(coll_unit_elems(16, 2).unwrap(), 8);
        assert_eq!(coll_unit_elems(4, 4).unwrap(), 1);
        assert!(coll_unit_elems(16, 3).is_err());
        assert!(coll_unit_elems(0, 2).is_err());
    }
}
