//! Parameter storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a tensor is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Updated with backpropagated gradients.
    Fo,
    /// Updated with the forward-difference estimator.
    Zo,
    /// Never updated.
    Frozen,
}

impl Role {
    pub fn as_u8(self) -> u8 {
        match self {
            Role::Fo => 0,
            Role::Zo => 1,
            Role::Frozen => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Role> {
        match v {
            0 => Some(Role::Fo),
            1 => Some(Role::Zo),
            2 => Some(Role::Frozen),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
    role: Role,
    layer_index: usize,
}

impl ParamTensor {
    pub fn new(
        name: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<f64>,
        layer_index: usize,
    ) -> Result<Self> {
        let name = name.into();
        if shape.contains(&0) {
            return Err(Error::config(format!("tensor {name}: zero dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::config(format!(
                "tensor {name}: shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data, role: Role::Fo, layer_index })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>, layer_index: usize) -> Self {
        let numel = shape.iter().product();
        Self::new(name, shape, vec![0.0; numel], layer_index).expect("valid zero tensor")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the values. The length is fixed, so the shape
    /// invariant cannot be broken through this.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub(crate) fn set_role(&mut self, role: Role) {
        self.role = role;
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }
}

/// The full parameter set of a model, in canonical order: output-nearest
/// layer first, tensors within a layer in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<ParamTensor>) -> Result<Self> {
        for (i, t) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::config(format!("duplicate tensor name {}", t.name)));
            }
            if i > 0 && t.layer_index < tensors[i - 1].layer_index {
                return Err(Error::config(format!(
                    "tensor {} breaks output-first layer ordering",
                    t.name
                )));
            }
        }
        Ok(Self { tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensor(&self, idx: usize) -> &ParamTensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut ParamTensor {
        &mut self.tensors[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.iter().map(|t| t.name.clone()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(ParamTensor::numel).sum()
    }

    /// Number of scalar parameters with the given role.
    pub fn count_role(&self, role: Role) -> usize {
        self.tensors.iter().filter(|t| t.role == role).map(ParamTensor::numel).sum()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.tensors.iter().map(|t| t.role).collect()
    }

    pub fn set_all_roles(&mut self, role: Role) {
        for t in &mut self.tensors {
            t.role = role;
        }
    }

    pub fn set_role(&mut self, name: &str, role: Role) -> Result<()> {
        let t = self
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown tensor {name}")))?;
        t.role = role;
        Ok(())
    }

    /// Mask over canonical tensor indices selecting the given role.
    pub fn role_mask(&self, role: Role) -> Vec<bool> {
        self.tensors.iter().map(|t| t.role == role).collect()
    }

    /// Flatten all values in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Overwrite all values from a flat vector in canonical order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::config(format!(
                "flat vector has {} values, parameter set has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(ParamTensor::new("w", vec![2, 3], vec![0.0; 5], 0).is_err());
        assert!(ParamTensor::new("w", vec![2, 0], vec![], 0).is_err());
        let t = ParamTensor::new("w", vec![2, 3], vec![0.0; 6], 0).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(t.role(), Role::Fo);
    }

    #[test]
    fn duplicate_names_rejected() {
        let a = ParamTensor::zeros("a", vec![1], 0);
        let b = ParamTensor::zeros("a", vec![1], 1);
        assert!(ParamSet::new(vec![a, b]).is_err());
    }

    #[test]
    fn ordering_must_be_output_first() {
        let a = ParamTensor::zeros("a", vec![1], 1);
        let b = ParamTensor::zeros("b", vec![1], 0);
        assert!(ParamSet::new(vec![a, b]).is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let a = ParamTensor::new("a", vec![2], vec![1.0, 2.0], 0).unwrap();
        let b = ParamTensor::new("b", vec![1], vec![3.0], 1).unwrap();
        let mut set = ParamSet::new(vec![a, b]).unwrap();
        assert_eq!(set.flatten(), vec![1.0, 2.0, 3.0]);
        set.assign_flat(&[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(set.get("b").unwrap().data(), &[6.0]);
        assert!(set.assign_flat(&[1.0]).is_err());
    }

    #[test]
    fn role_codes_roundtrip() {
        for r in [Role::Fo, Role::Zo, Role::Frozen] {
            assert_eq!(Role::from_u8(r.as_u8()), Some(r));
        }
        assert_eq!(Role::from_u8(9), None);
    }
}
