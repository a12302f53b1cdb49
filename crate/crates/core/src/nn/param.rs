//! Flat parameter storage shared by the network, the optimizer, and the
//! weight-averaging transforms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{CoreError, Result};

/// All parameters of a network as one flat `f64` buffer plus the per-tensor
/// shapes, in layer order: weights (rows, cols) then bias (rows, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl ParamVector {
    pub fn zeros(shapes: Vec<(usize, usize)>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for &(r, c) in &shapes {
            offsets.push(total);
            total += r * c;
        }
        ParamVector {
            values: vec![0.0; total],
            shapes,
            offsets,
        }
    }

    /// Same shapes as `self`, all values zero. Used for gradient buffers.
    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            shapes: self.shapes.clone(),
            offsets: self.offsets.clone(),
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
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    #[inline]
    pub fn tensor_count(&self) -> usize {
        self.shapes.len()
    }

    /// Shape of tensor `idx` as (rows, cols).
    #[inline]
    pub fn shape(&self, idx: usize) -> (usize, usize) {
        self.shapes[idx]
    }

    /// Row-major values of tensor `idx`.
    #[inline]
    pub fn tensor(&self, idx: usize) -> &[f64] {
        let (r, c) = self.shapes[idx];
        let off = self.offsets[idx];
        &self.values[off..off + r * c]
    }

    #[inline]
    pub fn tensor_mut(&mut self, idx: usize) -> &mut [f64] {
        let (r, c) = self.shapes[idx];
        let off = self.offsets[idx];
        &mut self.values[off..off + r * c]
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.shapes == other.shapes
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(CoreError::NonFinite(format!(
                "{context}: parameter {i} of {} is not finite",
                self.values.len()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_cover_buffer() {
        let p = ParamVector::zeros(vec![(3, 2), (3, 1), (1, 3), (1, 1)]);
        assert_eq!(p.len(), 6 + 3 + 3 + 1);
        assert_eq!(p.tensor(0).len(), 6);
        assert_eq!(p.tensor(3).len(), 1);
    }

    #[test]
    fn tensor_mut_writes_through() {
        let mut p = ParamVector::zeros(vec![(2, 2), (2, 1)]);
        p.tensor_mut(1)[0] = 7.0;
        assert_eq!(p.values()[4], 7.0);
    }

    #[test]
    fn ensure_finite_flags_nan() {
        let mut p = ParamVector::zeros(vec![(1, 2)]);
        assert!(p.ensure_finite("t").is_ok());
        p.values_mut()[1] = f64::NAN;
        assert!(p.ensure_finite("t").is_err());
    }
}
