//! Dense rank-4 tensors in batch-channel-height-width layout, plus the
//! batched matrix type used by the affinity computations.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TensorError};

/// Extents of a rank-4 tensor, `(n, c, h, w)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Flat offset of `(n, c, h, w)`.
    #[inline]
    pub const fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Border handling for convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
}

/// Dense rank-4 tensor. Values are stored row-major, `w` fastest.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(TensorError::ElementCount {
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::new(1, 1, 1, 1), value)
    }

    /// Standard-normal samples scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor { shape, data }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor { shape, data }
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f64) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = value;
    }

    /// Single value of a `(1, 1, 1, 1)` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(TensorError::NotScalar(self.shape));
        }
        Ok(self.data[0])
    }

    /// Same data, new extents.
    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mirror along the width axis.
    pub fn flip_w(&self) -> Self {
        let s = self.shape;
        Tensor::from_fn(s, |n, c, h, w| self.at(n, c, h, s.w - 1 - w))
    }

    /// Mirror along the height axis.
    pub fn flip_h(&self) -> Self {
        let s = self.shape;
        Tensor::from_fn(s, |n, c, h, w| self.at(n, c, s.h - 1 - h, w))
    }

    /// Copies sample `i` out as a batch of one.
    pub fn sample(&self, i: usize) -> Self {
        let per = self.shape.c * self.shape.plane();
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    /// Stacks equally shaped single-sample tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items.first().ok_or(TensorError::Empty("stack"))?.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(TensorError::shape("stack", format!("{s} vs {first}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, first.c, first.h, first.w), data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

/// A batch of `n` dense `r x c` matrices.
///
/// Inside the tape a matrix batch travels as a tensor of shape `(n, 1, r, c)`,
/// which has the identical memory layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix3 {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Matrix3 {
    pub fn from_vec(n: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * rows * cols {
            return Err(TensorError::ElementCount {
                expected: n * rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix3 {
            n,
            rows,
            cols,
            data,
        })
    }

    pub fn zeros(n: usize, rows: usize, cols: usize) -> Self {
        Matrix3 {
            n,
            rows,
            cols,
            data: vec![0.0; n * rows * cols],
        }
    }

    /// `n` copies of the `size x size` identity.
    pub fn identity(n: usize, size: usize) -> Self {
        let mut m = Self::zeros(n, size, size);
        for b in 0..n {
            for i in 0..size {
                m.set(b, i, i, 1.0);
            }
        }
        m
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, b: usize, r: usize, c: usize) -> f64 {
        self.data[(b * self.rows + r) * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, b: usize, r: usize, c: usize, value: f64) {
        self.data[(b * self.rows + r) * self.cols + c] = value;
    }

    /// The tape representation, `(n, 1, rows, cols)`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: Shape::new(self.n, 1, self.rows, self.cols),
            data: self.data.clone(),
        }
    }

    /// Inverse of [`Matrix3::to_tensor`].
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.c != 1 {
            return Err(TensorError::shape(
                "matrix view",
                format!("expected singleton channel axis, got {s}"),
            ));
        }
        Matrix3::from_vec(s.n, s.h, s.w, t.data.clone())
    }

    pub fn max_abs_diff(&self, other: &Matrix3) -> f64 {
        assert_eq!(
            (self.n, self.rows, self.cols),
            (other.n, other.rows, other.cols)
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
