//! Ragged sharding for flattened parameter buffers.
//!
//! A parameter group is packed into one contiguous buffer per device. Each
//! tensor declares an atomic block size (its sharding granularity); the
//! planner chooses a per-device buffer size and a contiguous interval for
//! every tensor so that device boundaries only ever cut a tensor at block
//! boundaries. Per-device block counts may be uneven, which is what makes the
//! placement "ragged".
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] / [`placement`]: tensor metadata, granularity resolution, and
//!   the ragged placement types (including the strided variant used when an
//!   even dim-0 shard is composed on an outer mesh dimension).
//! * [`planner`]: the layout optimiser (feasibility check, minimal shard-size
//!   search, plan construction/validation, and a brute-force reference
//!   optimum for small instances).
//! * [`dbuffer`]: the persistent device-buffer address map built from a plan.
//! * [`mesh`]: a deterministic in-process multi-rank mesh with rendezvous
//!   collectives and placement redistribution.
//! * [`muon`] / [`quant`]: case studies built on the above, namely a
//!   distributed Muon optimiser step and block-wise int8 quantization.

pub mod dbuffer;
pub mod mesh;
pub mod muon;
pub mod placement;
pub mod planner;
pub mod quant;
pub mod tensor;

pub use placement::{BlockPermutation, Placement};
pub use planner::{LayoutPlan, PlanProblem};
pub use tensor::{GranularitySpec, TensorSpec};
