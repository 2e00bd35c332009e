use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named trainable tensor. Frozen parameters enter the tape as constants
/// and are skipped by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            value,
            frozen: false,
        }
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let value = Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..=bound)));
        Self::new(name, value)
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn id(&self) -> Option<usize> {
        self.value.param_id()
    }

    /// Puts a snapshot of this parameter on the tape.
    pub fn record(&self, tape: &mut Tape<T>) -> Var {
        let mut t = Tensor::new(self.value.shape().to_vec(), self.value.data().to_vec())
            .expect("valid parameter")
            .with_requires_grad(!self.frozen);
        t.set_param_id(self.value.param_id());
        tape.leaf(t)
    }
}
