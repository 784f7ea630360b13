use indexmap::IndexMap;

use super::Tensor;
use crate::error::{contract, Result};

/// Named model parameters, iterated in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return contract(format!("duplicate parameter name {name:?}"));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.get_index_of(name)
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_tensors(self.tensors.values())
    }
}

/// Gradients aligned with a [`ParamSet`]: same names, same order, same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    tensors: IndexMap<String, Tensor>,
}

impl Grads {
    /// All-zero gradients shaped like `params`.
    pub fn zeros_like(params: &ParamSet) -> Self {
        let tensors = params
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
            .collect();
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub(crate) fn get_index_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Concatenates every gradient in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_tensors(self.tensors.values())
    }

    /// Inverse of [`Grads::flatten`], shaped by `template`.
    pub fn unflatten(flat: &[f64], template: &ParamSet) -> Result<Self> {
        let total = template.numel();
        if flat.len() != total {
            return contract(format!(
                "flat vector has {} values but the parameter set holds {total}",
                flat.len()
            ));
        }
        let mut offset = 0;
        let mut tensors = IndexMap::with_capacity(template.len());
        for (name, t) in template.iter() {
            let n = t.numel();
            tensors.insert(
                name.to_string(),
                Tensor::raw(t.shape().to_vec(), flat[offset..offset + n].to_vec()),
            );
            offset += n;
        }
        Ok(Self { tensors })
    }

    /// Checks that names and shapes agree with `params`.
    pub fn check_matches(&self, params: &ParamSet) -> Result<()> {
        if self.tensors.len() != params.len() {
            return contract(format!(
                "gradient set has {} entries, parameter set {}",
                self.tensors.len(),
                params.len()
            ));
        }
        for ((gn, g), (pn, p)) in self.tensors.iter().zip(params.iter()) {
            if gn != pn || g.shape() != p.shape() {
                return contract(format!(
                    "gradient {gn} {:?} does not match parameter {pn} {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
        }
        Ok(())
    }
}

fn flatten_tensors<'a>(ts: impl Iterator<Item = &'a Tensor>) -> Vec<f64> {
    let mut out = Vec::new();
    for t in ts {
        out.extend_from_slice(t.data());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::zeros(&[2])).unwrap();
        p.insert("b", Tensor::zeros(&[1, 2])).unwrap();
        p
    }

    #[test]
    fn flatten_concatenates_in_order() {
        let p = two_params();
        let g = Grads::unflatten(&[1., 2., 3., 4.], &p).unwrap();
        assert_eq!(g.get("b").unwrap().shape(), &[1, 2]);
        assert_eq!(g.get("b").unwrap().data(), &[3., 4.]);
        assert_eq!(g.flatten(), vec![1., 2., 3., 4.]);
    }

    #[test]
    fn empty_set_flattens_to_empty() {
        let p = ParamSet::new();
        assert!(Grads::zeros_like(&p).flatten().is_empty());
        assert!(Grads::unflatten(&[], &p).unwrap().is_empty());
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(Grads::unflatten(&[1., 2., 3.], &two_params()).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = two_params();
        assert!(p.insert("a", Tensor::zeros(&[1])).is_err());
    }

    proptest! {
        #[test]
        fn unflatten_flatten_roundtrip(v in proptest::collection::vec(-1e6f64..1e6, 4)) {
            let p = two_params();
            let g = Grads::unflatten(&v, &p).unwrap();
            prop_assert_eq!(g.flatten(), v);
        }
    }
}
