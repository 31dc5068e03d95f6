//! Named parameter collection with gradient accumulators and plain SGD.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

#[derive(Debug)]
struct Param {
    value: Matrix,
    grad: Matrix,
}

/// Named collection of parameter matrices with per-parameter gradient
/// accumulators. Iteration order is the sorted name order, so checkpoints
/// and updates are deterministic.
#[derive(Debug, Default)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a parameter initialized to the given matrix.
    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter '{name}'")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    /// Insert a weight matrix initialized uniformly in
    /// `±sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_xavier(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.insert(name, Matrix::from_vec(rows, cols, data)?)
    }

    /// Insert a zero matrix (biases, layer-norm shifts).
    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Matrix::zeros(rows, cols))
    }

    /// Insert a constant-filled matrix (layer-norm scales start at 1).
    pub fn insert_filled(&mut self, name: &str, rows: usize, cols: usize, fill: f64) -> Result<()> {
        self.insert(name, Matrix::from_vec(rows, cols, vec![fill; rows * cols])?)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad_of(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(n, p)| (n.as_str(), &p.value))
    }

    pub fn add_grad(&mut self, name: &str, delta: &Matrix) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter '{name}'")))?;
        if p.grad.shape() != delta.shape() {
            return Err(Error::ShapeMismatch {
                op: "add_grad",
                expected: format!("{:?}", p.grad.shape()),
                got: format!("{:?}", delta.shape()),
            });
        }
        for (g, &d) in p.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// One plain gradient-descent step: `p -= lr * g`, then gradients are
    /// cleared.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in self.params.values_mut() {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data_mut().iter_mut()) {
                *v -= lr * *g;
                *g = 0.0;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.data().len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sgd_noop_on_zero_grads() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Matrix::from_vec(1, 2, vec![1.0, -2.0]).unwrap())
            .unwrap();
        ps.sgd_step(0.1);
        assert_eq!(ps.get("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn sgd_quadratic_step() {
        // f(w) = w^2 at w=1: gradient 2, one step with lr 0.1 -> 0.8
        let mut ps = ParameterSet::new();
        ps.insert("w", Matrix::from_vec(1, 1, vec![1.0]).unwrap())
            .unwrap();
        let w = ps.get("w").unwrap().get(0, 0);
        ps.add_grad("w", &Matrix::from_vec(1, 1, vec![2.0 * w]).unwrap())
            .unwrap();
        ps.sgd_step(0.1);
        assert!((ps.get("w").unwrap().get(0, 0) - 0.8).abs() < 1e-12);
        // gradients cleared
        assert_eq!(ps.grad_of("w").unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn sgd_descends_quadratic() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Matrix::from_vec(1, 1, vec![1.0]).unwrap())
            .unwrap();
        let loss = |w: f64| w * w;
        let mut prev = loss(ps.get("w").unwrap().get(0, 0));
        for _ in 0..100 {
            let w = ps.get("w").unwrap().get(0, 0);
            ps.add_grad("w", &Matrix::from_vec(1, 1, vec![2.0 * w]).unwrap())
                .unwrap();
            ps.sgd_step(0.05);
            let now = loss(ps.get("w").unwrap().get(0, 0));
            assert!(now <= prev + 1e-15);
            prev = now;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut ps = ParameterSet::new();
        ps.insert_zeros("w", 1, 1).unwrap();
        assert!(ps.insert_zeros("w", 1, 1).is_err());
    }

    #[test]
    fn xavier_is_seeded_and_bounded() {
        let mut a = ParameterSet::new();
        let mut b = ParameterSet::new();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        a.insert_xavier("w", 8, 8, &mut r1).unwrap();
        b.insert_xavier("w", 8, 8, &mut r2).unwrap();
        assert_eq!(a.get("w").unwrap(), b.get("w").unwrap());
        let bound = (6.0 / 16.0f64).sqrt();
        assert!(a.get("w").unwrap().data().iter().all(|v| v.abs() <= bound));
    }
}
