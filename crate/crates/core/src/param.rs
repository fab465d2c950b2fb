//! Flat view over a model's trainable parameters.

use alloc::vec;
use alloc::vec::Vec;

/// Ordered flat vector of all trainable parameters θ.
///
/// Length is fixed at construction; every arithmetic helper panics on a
/// length mismatch, which is a programming error, not a runtime condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `self += a · x`.
    pub fn axpy(&mut self, a: f64, x: &ParamVector) {
        assert_eq!(self.0.len(), x.0.len(), "axpy length mismatch");
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    /// `self *= a`.
    pub fn scale(&mut self, a: f64) {
        for s in self.0.iter_mut() {
            *s *= a;
        }
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.0.len(), other.0.len(), "dot length mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Largest absolute difference to another vector of the same length.
    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.0.len(), other.0.len(), "max_abs_diff length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
