//! Dense NCHW tensor of double-precision values.

use crate::{Error, Result};

/// A dense 4-D array laid out batch, channel, row, column.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Wraps existing values; the length must match the shape product.
    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "value count {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Offset of `(b, c, 0, 0)`: the start of one spatial plane.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> usize {
        (b * self.shape[1] + c) * self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[((b * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, h: usize, w: usize) -> &mut f64 {
        &mut self.data[((b * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w]
    }

    /// True when every value is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([1, 2, 2, 2], vec![0.0; 8]).is_ok());
        assert!(Tensor::from_vec([1, 2, 2, 2], vec![0.0; 7]).is_err());
    }

    #[test]
    fn indexing_round_trip() {
        let mut t = Tensor::zeros([2, 3, 4, 5]);
        *t.at_mut(1, 2, 3, 4) = 7.5;
        assert_eq!(t.at(1, 2, 3, 4), 7.5);
        assert_eq!(t.data()[t.len() - 1], 7.5);
    }
}
