use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;

/// Named weight matrices in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Array2<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<F>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    /// Uniform `[-bound, bound]` initialisation.
    pub fn push_uniform<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: (usize, usize), bound: f64, rng: &mut R) -> usize {
        let value = Array2::from_shape_simple_fn(shape, || F::of(rng.random_range(-bound..=bound)));
        self.push(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<F>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<F>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Array2<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<F>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.values[i])
    }

    /// Registers every weight as a tape leaf, in store order.
    pub fn bind(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}
