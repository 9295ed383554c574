//! Hybrid first-order / zeroth-order optimization with cost-aware tensor
//! partitioning.
//!
//! The crate is organised around a [`ParamSet`] of named tensors, each tagged
//! with a [`Role`]. A [`LayeredModel`] evaluates losses and truncated
//! gradients over those tensors and reports a FLOPs [`CostModel`]. Warm-up
//! dynamics give an [`ImportanceProfile`], the partitioner turns it into a
//! [`PartitionPlan`] under a backward-FLOPs budget, and the
//! [`HybridOptimizer`] trains FO tensors by backprop and ZO tensors from
//! seeded forward-difference probes.

pub mod checkpoint;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod importance;
pub mod model;
pub mod optimizer;
pub mod partition;
pub mod rng;
pub mod tensor;
pub mod theory;
pub mod verify;

pub use cost::{CostModel, TensorCost};
pub use data::Batch;
pub use error::{Error, Result};
pub use importance::{estimate_importance, ImportanceProfile};
pub use model::{Gradients, LayeredModel, LossKind, MlpSpec, ModelKind, QuadraticBlock, RosenbrockSpec, TinyLmSpec};
pub use optimizer::{Algorithm, FoRule, HybridOptimizer, OptimizerConfig, RunReport, StepRecord};
pub use partition::{apply_plan, brute_force_select, solve_dp, PartitionPlan};
pub use tensor::{ParamSet, ParamTensor, Role};
