//! Named trainable parameters with paired gradient buffers and
//! adaptive-moment optimizer state.

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dense::DenseMatrix;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Param {
    pub value: DenseMatrix,
    pub gradient: DenseMatrix,
    first_moment: DenseMatrix,
    second_moment: DenseMatrix,
    step: u64,
}

impl Param {
    fn new(value: DenseMatrix) -> Self {
        let (r, c) = (value.rows(), value.cols());
        Self {
            value,
            gradient: DenseMatrix::zeros(r, c),
            first_moment: DenseMatrix::zeros(r, c),
            second_moment: DenseMatrix::zeros(r, c),
            step: 0,
        }
    }
}

/// Which update rule `step` applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

/// Ordered map of named parameters. Iteration follows insertion order, which
/// keeps updates and finite-difference sweeps deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: DenseMatrix) {
        self.params.insert(name.to_string(), Param::new(value));
    }

    /// Glorot-uniform initialized matrix.
    pub fn insert_glorot<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.insert(name, DenseMatrix::new(rows, cols, values).expect("sized"));
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, DenseMatrix::zeros(rows, cols));
    }

    pub fn value(&self, name: &str) -> &DenseMatrix {
        &self.params[name].value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut DenseMatrix {
        &mut self.params[name].value
    }

    pub fn gradient(&self, name: &str) -> &DenseMatrix {
        &self.params[name].gradient
    }

    /// Accumulate into a parameter's gradient buffer.
    pub fn add_gradient(&mut self, name: &str, grad: &DenseMatrix) -> Result<()> {
        self.params[name].gradient.add_scaled(grad, 1.0)
    }

    /// Add `decay * value` to the gradient (L2 weight decay on one parameter).
    pub fn apply_weight_decay(&mut self, name: &str, decay: f64) {
        let p = &mut self.params[name];
        let value = p.value.clone();
        p.gradient
            .add_scaled(&value, decay)
            .expect("gradient shape matches value");
    }

    pub fn zero_gradients(&mut self) {
        for p in self.params.values_mut() {
            p.gradient.fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// One optimizer step over every parameter; gradients are zeroed after.
    pub fn step(&mut self, optimizer: Optimizer, lr: f64) {
        match optimizer {
            Optimizer::Adam => self.adam_step(lr),
            Optimizer::Sgd => self.sgd_step(lr),
        }
    }

    /// Adam with bias correction.
    pub fn adam_step(&mut self, lr: f64) {
        for p in self.params.values_mut() {
            p.step += 1;
            let t = p.step as i32;
            let bc1 = 1.0 - BETA1.powi(t);
            let bc2 = 1.0 - BETA2.powi(t);
            let n = p.value.values().len();
            for idx in 0..n {
                let g = p.gradient.values()[idx];
                let m = BETA1 * p.first_moment.values()[idx] + (1.0 - BETA1) * g;
                let v = BETA2 * p.second_moment.values()[idx] + (1.0 - BETA2) * g * g;
                p.first_moment.values_mut()[idx] = m;
                p.second_moment.values_mut()[idx] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p.value.values_mut()[idx] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            p.gradient.fill(0.0);
        }
    }

    /// Plain gradient descent.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in self.params.values_mut() {
            p.step += 1;
            let n = p.value.values().len();
            for idx in 0..n {
                let g = p.gradient.values()[idx];
                p.value.values_mut()[idx] -= lr * g;
            }
            p.gradient.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("parameters in {context}")))
        }
    }
}
