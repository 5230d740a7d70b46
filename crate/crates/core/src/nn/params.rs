use std::collections::BTreeMap;

use rand::Rng;

use super::{NnError, Tensor};

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named parameter tensors with paired gradient accumulators.
///
/// Iteration order (and checkpoint order) is lexicographic by name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
    step: u64,
}

/// Gradients produced by one backward pass, indexed like the store's entries.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) per_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, index: usize) -> Option<&Tensor> {
        self.per_param.get(index).and_then(|g| g.as_ref())
    }

    pub fn norm(&self) -> f64 {
        self.per_param
            .iter()
            .flatten()
            .map(Tensor::norm_sq)
            .sum::<f64>()
            .sqrt()
    }

    /// Adds `other * scale` into `self`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        if self.per_param.len() < other.per_param.len() {
            self.per_param.resize(other.per_param.len(), None);
        }
        for (mine, theirs) in self.per_param.iter_mut().zip(&other.per_param) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, b) in m.data_mut().iter_mut().zip(theirs.data()) {
                        *a += scale * b;
                    }
                }
                None => {
                    let mut t = theirs.clone();
                    t.data_mut().iter_mut().for_each(|v| *v *= scale);
                    *mine = Some(t);
                }
            }
        }
    }

    pub fn empty() -> Self {
        Self {
            per_param: Vec::new(),
        }
    }

    /// Drops the gradients of parameters whose names fail `keep`.
    pub fn retain(&mut self, store: &ParamStore, keep: impl Fn(&str) -> bool) {
        for (i, g) in self.per_param.iter_mut().enumerate() {
            if i < store.len() && !keep(store.name(i)) {
                *g = None;
            }
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Inserts or replaces a parameter; the gradient is reset to zero.
    pub fn insert(&mut self, name: &str, value: Tensor) -> usize {
        let grad = Tensor::zeros(value.shape());
        if let Some(&i) = self.index.get(name) {
            self.entries[i].value = value;
            self.entries[i].grad = grad;
            return i;
        }
        let i = self.entries.len();
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), i);
        i
    }

    /// Glorot-uniform weights for a tensor with the given fans.
    pub fn insert_glorot<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> usize {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.entries[index].name
    }

    pub fn value(&self, index: usize) -> &Tensor {
        &self.entries[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].value
    }

    pub fn grad(&self, index: usize) -> &Tensor {
        &self.entries[index].grad
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.entries[i].value)
    }

    pub fn grad_by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].grad)
    }

    /// Names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// `(index, name)` pairs in lexicographic order.
    pub fn indexed_names(&self) -> impl Iterator<Item = (usize, &str)> {
        self.index.iter().map(|(n, &i)| (i, n.as_str()))
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (entry, g) in self.entries.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                entry.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.grad.norm_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Plain SGD: `value -= lr * grad`, then zero the gradients and bump the step.
    pub fn sgd_step(&mut self, lr: f64) -> Result<(), NnError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::Usage(format!("learning rate must be positive, got {lr}")));
        }
        if let Some(bad) = self.entries.iter().find(|e| !e.grad.is_finite()) {
            return Err(NnError::NonFinite(format!(
                "gradient of parameter `{}`",
                bad.name
            )));
        }
        for e in &mut self.entries {
            for (v, g) in e.value.data_mut().iter_mut().zip(e.grad.data()) {
                *v -= lr * g;
            }
            e.grad.fill(0.0);
        }
        self.step += 1;
        Ok(())
    }

    /// Copies values of matching names from `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        for (name, &j) in &other.index {
            if let Some(&i) = self.index.get(name) {
                if self.entries[i].value.shape() != other.entries[j].value.shape() {
                    return Err(NnError::Shape(format!(
                        "parameter `{name}`: expected {:?}, found {:?}",
                        self.entries[i].value.shape(),
                        other.entries[j].value.shape()
                    )));
                }
                self.entries[i].value = other.entries[j].value.clone();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let i = s.insert("x", Tensor::scalar(value));
        s.entries[i].grad = Tensor::scalar(grad);
        s
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut s = single(1.5, 0.0);
        s.sgd_step(0.3).unwrap();
        assert_eq!(s.get("x").unwrap().data(), &[1.5]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut s = single(1.0, 2.0);
        s.sgd_step(0.1).unwrap();
        assert!((s.get("x").unwrap().data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.grad_by_name("x").unwrap().data(), &[0.0]);
    }

    #[test]
    fn quadratic_recurrence() {
        // loss = x^2 / 2, gradient = x
        let mut s = single(1.0, 0.0);
        for k in 1..=20 {
            let x = s.get("x").unwrap().data()[0];
            s.entries[0].grad = Tensor::scalar(x);
            s.sgd_step(0.1).unwrap();
            let expected = 0.9f64.powi(k);
            assert!((s.get("x").unwrap().data()[0] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = single(1.0, f64::NAN);
        let err = s.sgd_step(0.1).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
        assert_eq!(s.get("x").unwrap().data(), &[1.0]);
    }

    #[test]
    fn names_are_sorted() {
        let mut s = ParamStore::new();
        s.insert("b", Tensor::scalar(0.0));
        s.insert("a", Tensor::scalar(0.0));
        s.insert("c.x", Tensor::scalar(0.0));
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["a", "b", "c.x"]);
    }
}
