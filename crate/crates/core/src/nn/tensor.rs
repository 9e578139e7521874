//! Row-major float64 tensors.

use crate::error::{Error, Result};

/// Dense tensor of 64-bit floats, row-major.
///
/// Construction through [`Tensor::new`] validates that the value count matches
/// the shape and that every entry is finite. Internal computations that can
/// legitimately produce non-finite intermediates check and report themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.contains(&0) && expect != 0 {
            return Err(Error::Config("tensor shape has a zero dimension".into()));
        }
        if data.len() != expect {
            return Err(Error::Config(format!(
                "tensor data length {} does not match shape {:?} (expects {})",
                data.len(),
                shape,
                expect
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("tensor contains non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    /// Construct without the finiteness scan. For internal hot paths whose
    /// callers check finiteness themselves.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() needs a rank-2 tensor");
        self.shape[0]
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a rank-2 tensor");
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.cols();
        &mut self.data[i * w..(i + 1) * w]
    }
}
