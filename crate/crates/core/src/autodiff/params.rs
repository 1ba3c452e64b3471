use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::Gradients;
use super::AutodiffError;

/// A trainable array with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub value: Matrix,
    pub requires_grad: bool,
    pub grad: Matrix,
}

impl Tensor {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows, value.cols);
        Self {
            value,
            requires_grad: true,
            grad,
        }
    }

    pub fn frozen(value: Matrix) -> Self {
        Self {
            requires_grad: false,
            ..Self::new(value)
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.value.rows, self.value.cols]
    }
}

/// Named parameters in insertion order. Names are dotted paths such as
/// `physics.estimator.gru.w_x`.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

/// Serialized form of one parameter inside `checkpoint.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.params.insert(name.into(), Tensor::new(value));
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
    pub fn init_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Matrix::from_vec(rows, cols, data));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix, AutodiffError> {
        self.params
            .get(name)
            .map(|t| &t.value)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<(), AutodiffError> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        if t.value.shape() != value.shape() {
            return Err(AutodiffError::Shape(format!(
                "parameter {name}: expected {:?}, got {:?}",
                t.value.shape(),
                value.shape()
            )));
        }
        t.value = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|t| t.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.params.values_mut() {
            t.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients of a backward sweep into each tensor's accumulator.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (name, g) in grads.params() {
            if let (Some(t), Some(g)) = (self.params.get_mut(name), g) {
                t.grad.add_assign(g);
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|t| t.grad.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for t in self.params.values_mut() {
            t.grad.data.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn to_records(&self) -> IndexMap<String, ParamRecord> {
        self.params
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    ParamRecord {
                        shape: t.shape(),
                        values: t.value.data.clone(),
                    },
                )
            })
            .collect()
    }

    pub fn from_records(records: &IndexMap<String, ParamRecord>) -> Result<Self, AutodiffError> {
        let mut store = Self::new();
        for (k, r) in records {
            if r.values.len() != r.shape[0] * r.shape[1] {
                return Err(AutodiffError::Shape(format!(
                    "checkpoint parameter {k}: shape {:?} vs {} values",
                    r.shape,
                    r.values.len()
                )));
            }
            store.insert(k.clone(), Matrix::from_vec(r.shape[0], r.shape[1], r.values.clone()));
        }
        Ok(store)
    }

    /// Overwrites values of parameters present in `other` with matching shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<(), AutodiffError> {
        for (k, t) in other.iter() {
            self.set_value(k, t.value.clone())?;
        }
        Ok(())
    }
}
