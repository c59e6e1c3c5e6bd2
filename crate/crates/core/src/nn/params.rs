use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::NnError;
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// A named learnable tensor and its pending gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub(crate) fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub(crate) fn take_grad(&mut self) -> Option<Tensor> {
        self.grad.take()
    }
}

/// Insertion-ordered, uniquely named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its position.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<usize, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateName(name.to_string()));
        }
        let id = self.entries.len();
        self.entries.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.entries.iter()
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [Parameter] {
        &mut self.entries
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    /// Replaces the value of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        let id = self
            .position(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))?;
        let entry = &mut self.entries[id];
        if entry.value.shape() != value.shape() {
            return Err(NnError::ParameterShape {
                name: name.to_string(),
                expected: entry.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    /// Replaces every value from `(name, tensor)` pairs. The pairs must name
    /// exactly this set's parameters, with identical shapes.
    pub fn load(&mut self, values: &[(String, Tensor)]) -> Result<(), NnError> {
        for (name, value) in values {
            self.set(name, value.clone())?;
        }
        if let Some(missing) = self
            .entries
            .iter()
            .find(|p| !values.iter().any(|(n, _)| *n == p.name))
        {
            return Err(NnError::MissingParameter(missing.name.clone()));
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Vars for every parameter: tape leaves when `tape` is given, constants
    /// otherwise.
    pub fn bind<'t>(&self, tape: Option<&'t Tape>) -> Bindings<'t> {
        let vars = self
            .entries
            .iter()
            .map(|p| match tape {
                Some(t) => t.leaf(p.value.clone()),
                None => Var::constant(p.value.clone()),
            })
            .collect();
        Bindings { vars }
    }

    /// Adds the gradients recorded for `bindings` to each parameter's
    /// pending gradient.
    pub fn accumulate_grads(&mut self, bindings: &Bindings<'_>, grads: &Gradients) {
        for (p, var) in self.entries.iter_mut().zip(&bindings.vars) {
            let Some(g) = grads.get(var) else { continue };
            p.grad = Some(match p.grad.take() {
                Some(prev) => prev.zip_map(&g, |a, b| a + b).unwrap_or(g),
                None => g,
            });
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = None;
        }
    }
}

/// Parameter vars for one forward pass, indexed by parameter position.
pub struct Bindings<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bindings<'t> {
    pub fn var(&self, id: usize) -> &Var<'t> {
        &self.vars[id]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn names_are_unique() {
        let mut p = ParameterSet::new();
        p.insert("a", Tensor::zeros([2])).unwrap();
        assert_eq!(p.insert("a", Tensor::zeros([2])), Err(NnError::DuplicateName("a".into())));
    }

    #[test]
    fn load_reports_offending_parameter() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::zeros([2, 2])).unwrap();
        p.insert("b", Tensor::zeros([2])).unwrap();
        let bad = vec![("w".into(), Tensor::zeros([3, 2])), ("b".into(), Tensor::zeros([2]))];
        assert!(matches!(p.load(&bad), Err(NnError::ParameterShape { name, .. }) if name == "w"));
        let partial = vec![("w".into(), Tensor::zeros([2, 2]))];
        assert_eq!(p.load(&partial), Err(NnError::MissingParameter("b".into())));
    }

    #[test]
    fn gradients_flow_into_parameters() {
        let mut p = ParameterSet::new();
        p.insert("x", Tensor::new([1], vec![3.0]).unwrap()).unwrap();
        let tape = Tape::new();
        let b = p.bind(Some(&tape));
        let loss = b.var(0).pow_scalar(2.0).unwrap();
        let g = tape.backward(&loss).unwrap();
        p.accumulate_grads(&b, &g);
        p.accumulate_grads(&b, &g);
        assert_eq!(p.iter().next().unwrap().grad().unwrap().data(), &[12.0]);
    }
}
