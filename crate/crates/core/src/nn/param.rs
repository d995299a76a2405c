//! Flat parameter vectors.
//!
//! All gradient arithmetic in this crate happens on `ParamVector`: the
//! model's weights and biases flattened into a single `Vec<f64>` in a fixed
//! layer order. Length mismatches in vector arithmetic are programmer error
//! and panic via `assert!`; fallible, user-facing checks live on the
//! operations that accept external input.

/// A flat real vector over all model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), other.len(), "add: length mismatch");
        ParamVector::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), other.len(), "sub: length mismatch");
        ParamVector::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector::new(self.values.iter().map(|v| v * factor).collect())
    }

    /// In-place `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &ParamVector) {
        assert_eq!(self.len(), other.len(), "axpy: length mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    /// Elementwise mean of a non-empty set of equal-length vectors.
    pub fn mean_of(vectors: &[&ParamVector]) -> ParamVector {
        assert!(!vectors.is_empty(), "mean_of: empty input");
        let mut out = vectors[0].clone();
        for v in &vectors[1..] {
            out.axpy(1.0, v);
        }
        out.scaled(1.0 / vectors.len() as f64)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}
