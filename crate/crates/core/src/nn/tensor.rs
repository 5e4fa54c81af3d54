use std::fmt::Debug;

use num_traits::Float;

use super::NnError;

/// Floating-point element type of the engine.
///
/// Everything in production runs on `f32`; `f64` instances exist so the
/// finite-difference checker can evaluate the same code path without
/// single-precision round-off swamping the difference quotient.
pub trait Real: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major array with an explicit shape.
///
/// The leading dimension is the batch dimension wherever a tensor is fed to a
/// network: `[N, D]` for feature vectors and `[N, H, W, C]` for images.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NnError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch {
                expected: shape,
                found: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, NnError> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![T::zero(); n])
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Size of the leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Shape without the batch dimension.
    pub fn sample_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a tensor viewed as `[batch, rest]`.
    pub fn sample(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Index of the largest entry of each sample; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.batch())
            .map(|i| {
                let row = self.sample(i);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}
