//! Dense row-major f64 tensors.
//!
//! Everything in this crate runs in double precision: gradient verification
//! against central finite differences needs the headroom, and the desk-scale
//! models are small enough that the memory cost does not matter.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A dense tensor with row-major layout. Batched image data uses
/// `[batch, channels, height, width]`; vectors and matrices use one or two
/// dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a tensor from existing data. Panics if the element count does
    /// not match the shape; shapes are internal invariants, not user input.
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match {} elements",
            dims,
            data.len()
        );
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    /// Gaussian init, the convention for generator and discriminator weights.
    pub fn randn<R: Rng>(dims: &[usize], std_dev: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std_dev).expect("valid std dev");
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn uniform<R: Rng>(dims: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    /// Scalar view of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.dims);
        self.data[0]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert!(self.same_shape(other), "shape mismatch {:?} vs {:?}", self.dims, other.dims);
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "shape mismatch {:?} vs {:?}", self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Batched image shape helper for `[batch, channels, height, width]` tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bchw {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Bchw {
    pub fn of(t: &Tensor) -> Self {
        let d = t.dims();
        assert_eq!(d.len(), 4, "expected BCHW tensor, got shape {:?}", d);
        Bchw {
            batch: d[0],
            channels: d[1],
            height: d[2],
            width: d[3],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}
