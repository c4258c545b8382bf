//! Dense NCHW tensors and the scalar types they are generic over.
//!
//! Training runs in `f32`; gradient verification runs the identical code paths
//! in `f64`. Every reduction is evaluated in a fixed order, so two evaluations
//! on identical inputs produce bit-identical outputs.

use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{shape_err, Result};

/// Floating-point element type of a [`Tensor4`].
pub trait Scalar:
    Float + Default + AddAssign + SubAssign + MulAssign + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` on strided row/column-major views.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; each operand is given by
    /// its slice plus row and column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs out of bounds");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs out of bounds");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output out of bounds");
                // SAFETY: every element addressed by the kernel lies inside the
                // spans asserted above, and `c` does not alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dimensions of a rank-4 tensor in (batch, channel, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major NCHW array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            values: vec![T::zero(); dims.len()],
            grad: None,
        }
    }

    pub fn full(dims: Dims, value: T) -> Self {
        Self {
            dims,
            values: vec![value; dims.len()],
            grad: None,
        }
    }

    pub fn from_vec(dims: Dims, values: Vec<T>) -> Result<Self> {
        if values.len() != dims.len() {
            return shape_err(format!(
                "{} values cannot fill a tensor of dims {dims}",
                values.len()
            ));
        }
        Ok(Self {
            dims,
            values,
            grad: None,
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        values.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self {
            dims,
            values,
            grad: None,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.values[self.dims.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.dims.index(n, c, y, x);
        self.values[i] = v;
    }

    /// Contiguous values of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.dims.sample();
        &self.values[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.dims.sample();
        &mut self.values[n * s..(n + 1) * s]
    }

    /// Contiguous `h x w` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.values[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &mut self.values[start..start + p]
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Allocates a zeroed gradient buffer if none is present.
    pub fn require_grad(&mut self) -> &mut [T] {
        let len = self.values.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn drop_grad(&mut self) {
        self.grad = None;
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.values.len() {
            return shape_err(format!(
                "gradient of length {} for tensor of dims {}",
                grad.len(),
                self.dims
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn reshape(mut self, dims: Dims) -> Result<Self> {
        if dims.len() != self.dims.len() {
            return shape_err(format!("cannot reshape {} into {dims}", self.dims));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            values: self.values.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Converts element type, dropping any gradient.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn expect_dims(&self, dims: Dims, what: &str) -> Result<()> {
        if self.dims != dims {
            return shape_err(format!("{what}: expected {dims}, got {}", self.dims));
        }
        Ok(())
    }
}
