//! Dense row-major tensors and named parameter sets.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TensorError;

/// A dense double-precision tensor.
///
/// Graph operations treat every tensor as a matrix: a bias vector is `[1, n]`
/// and a scalar is `[1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                detail: format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    values.len()
                ),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                op: "tensor",
                value: *bad,
            });
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: vec![rows, cols],
            values: vec![0.0; rows * cols],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Self::matrix(1, 1, vec![value])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::ShapeMismatch {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|r| self.row(r).to_vec()).collect()
    }

    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        }
    }
}

/// How a parameter tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` with fans taken from the shape.
    Glorot,
    Zeros,
    Ones,
}

/// Named, trainable tensors. Iteration is sorted by path.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    tensors: BTreeMap<String, Tensor>,
    pub rng_seed: u64,
}

impl Parameters {
    pub fn empty(rng_seed: u64) -> Self {
        Self {
            tensors: BTreeMap::new(),
            rng_seed,
        }
    }

    /// Build parameters from `(path, rows, cols, init)` specs.
    ///
    /// Specs are sorted by path before drawing random values, so the result
    /// depends only on the seed and the set of specs.
    pub fn initialize(rng_seed: u64, specs: &[(String, usize, usize, Init)]) -> Self {
        let mut sorted: Vec<_> = specs.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut tensors = BTreeMap::new();
        for (name, rows, cols, init) in sorted {
            let n = rows * cols;
            let values = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Glorot => {
                    let bound = (6.0 / (*rows + *cols) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            let mut t = Tensor::from_parts(vec![*rows, *cols], values);
            t.requires_grad = true;
            tensors.insert(name.clone(), t);
        }
        Self { tensors, rng_seed }
    }

    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor) {
        tensor.requires_grad = true;
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
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

    /// Total number of scalar weights.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad = None;
        }
    }

    /// Add `scale * grad` into each named tensor's gradient buffer.
    pub fn accumulate_grads(&mut self, grads: &BTreeMap<String, Vec<f64>>, scale: f64) {
        for (name, g) in grads {
            let Some(t) = self.tensors.get_mut(name) else {
                continue;
            };
            let buf = t.grad.get_or_insert_with(|| vec![0.0; g.len()]);
            for (b, v) in buf.iter_mut().zip(g) {
                *b += scale * v;
            }
        }
    }
}
