//! FLOPs cost model.
//!
//! Convention: one multiply-add is 2 FLOPs, a dense product of an `m x n`
//! weight over `b` rows costs `2*m*n*b`. Each layer's activation-gradient
//! cost `t_dy` is stored on the layer's last tensor (in output-first order),
//! so prefix sums over tensors give the cost of reaching any tensor.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorCost {
    pub name: String,
    pub layer_index: usize,
    /// Forward FLOPs attributable to this tensor.
    pub t_fwd: u64,
    /// FLOPs to compute this tensor's weight gradient.
    pub t_dw: u64,
    /// FLOPs to push the activation gradient through this tensor's layer
    /// (non-zero only on the layer's last tensor).
    pub t_dy: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub batch_size: usize,
    pub tensors: Vec<TensorCost>,
}

impl CostModel {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total backward FLOPs of a full backward pass.
    pub fn t_full(&self) -> u64 {
        self.tensors.iter().map(|t| t.t_dw + t.t_dy).sum()
    }

    pub fn forward_flops(&self) -> u64 {
        self.tensors.iter().map(|t| t.t_fwd).sum()
    }

    /// Sum of `t_dy` over tensors strictly before canonical index `k`.
    pub fn prefix_dy(&self, k: usize) -> u64 {
        self.tensors[..k].iter().map(|t| t.t_dy).sum()
    }

    /// Backward FLOPs for a truncated pass computing weight gradients of the
    /// tensors in `active`: their `t_dw` plus every `t_dy` above the deepest
    /// active tensor.
    pub fn backward_flops(&self, active: &[bool]) -> u64 {
        let deepest = match active.iter().rposition(|&a| a) {
            Some(k) => k,
            None => return 0,
        };
        let dw: u64 = self
            .tensors
            .iter()
            .zip(active)
            .filter(|(_, &a)| a)
            .map(|(t, _)| t.t_dw)
            .sum();
        dw + self.prefix_dy(deepest)
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.iter().map(|t| t.name.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        let t_full = self.t_full();
        let mut v = serde_json::to_value(self).expect("cost model serializes");
        v["t_full"] = t_full.into();
        serde_json::to_string_pretty(&v).expect("json")
    }
}
