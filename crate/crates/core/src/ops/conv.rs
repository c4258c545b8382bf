//! 2-D cross-correlation via im2col and a strided GEMM.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Dims, Scalar, Tensor4};

/// Weights `(c_out, c_in, k, k)`, one bias per output channel, and geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

/// Gradients with respect to the weights and bias of a [`ConvParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvGrads<T> {
    pub fn zeros_like(params: &ConvParams<T>) -> Self {
        Self {
            weight: vec![T::zero(); params.weight.dims().len()],
            bias: vec![T::zero(); params.bias.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        let d = weight.dims();
        if d.h != d.w || d.h == 0 {
            return Err(Error::Argument(format!(
                "kernel must be square and non-empty, got {d}"
            )));
        }
        if stride == 0 {
            return Err(Error::Argument("stride must be at least 1".into()));
        }
        if bias.len() != d.n {
            return shape_err(format!(
                "{} bias values for {} output channels",
                bias.len(),
                d.n
            ));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// He-normal weights scaled by fan-in, zero bias.
    pub fn he_init<R: Rng + ?Sized>(
        c_out: usize,
        c_in: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (c_in * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let dims = Dims::new(c_out, c_in, kernel, kernel);
        let values = (0..dims.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Self {
            weight: Tensor4::from_vec(dims, values).expect("length matches dims"),
            bias: vec![T::zero(); c_out],
            stride,
            padding,
        }
    }

    pub fn zeroed(c_out: usize, c_in: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            weight: Tensor4::zeros(Dims::new(c_out, c_in, kernel, kernel)),
            bias: vec![T::zero(); c_out],
            stride,
            padding,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.dims().n
    }

    pub fn c_in(&self) -> usize {
        self.weight.dims().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims().h
    }

    pub fn num_params(&self) -> usize {
        self.weight.dims().len() + self.bias.len()
    }

    /// Output dims for an input of dims `input`.
    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        if input.c != self.c_in() {
            return shape_err(format!(
                "conv input {input} has {} channels, kernel {} expects {}",
                input.c,
                self.weight.dims(),
                self.c_in()
            ));
        }
        let k = self.kernel();
        let ph = input.h + 2 * self.padding;
        let pw = input.w + 2 * self.padding;
        if ph < k || pw < k {
            return shape_err(format!(
                "conv input {input} smaller than kernel {} with padding {}",
                self.weight.dims(),
                self.padding
            ));
        }
        Ok(Dims::new(
            input.n,
            self.c_out(),
            (ph - k) / self.stride + 1,
            (pw - k) / self.stride + 1,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.padding == 0
    }
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Maps an output coordinate and kernel tap to an input coordinate.
    #[inline]
    fn source(&self, o: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + tap) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Output positions `lo..hi` whose tap lands inside `0..extent`.
    fn valid(&self, tap: usize, extent: usize, outputs: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.pad.saturating_sub(tap).div_ceil(s);
        let reach = extent + self.pad;
        let hi = if reach > tap { ((reach - tap - 1) / s + 1).min(outputs) } else { 0 };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Scalar>(g: &Geometry, input: &[T], col: &mut [T]) {
    let cols = g.cols();
    let s = g.stride;
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = g.valid(kx, g.w, g.ow);
                for oy in 0..g.oh {
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        out_row.fill(T::zero());
                        continue;
                    };
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let first = iy * g.w + lo * s + kx - g.pad;
                    if s == 1 {
                        out_row[lo..hi].copy_from_slice(&plane[first..first + hi - lo]);
                    } else {
                        let src = plane[first..].iter().step_by(s);
                        out_row[lo..hi].iter_mut().zip(src).for_each(|(v, &x)| *v = x);
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &Geometry, col: &[T], grad_input: &mut [T]) {
    let cols = g.cols();
    let s = g.stride;
    for ci in 0..g.c_in {
        let plane = &mut grad_input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = g.valid(kx, g.w, g.ow);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    let first = iy * g.w + lo * s + kx - g.pad;
                    let from = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if s == 1 {
                        plane[first..first + hi - lo]
                            .iter_mut()
                            .zip(from)
                            .for_each(|(v, &x)| *v += x);
                    } else {
                        plane[first..]
                            .iter_mut()
                            .step_by(s)
                            .zip(from)
                            .for_each(|(v, &x)| *v += x);
                    }
                }
            }
        }
    }
}

fn geometry<T: Scalar>(input: Dims, params: &ConvParams<T>, out: Dims) -> Geometry {
    Geometry {
        c_in: input.c,
        h: input.h,
        w: input.w,
        k: params.kernel(),
        stride: params.stride,
        pad: params.padding,
        oh: out.h,
        ow: out.w,
    }
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    let in_dims = input.dims();
    let out_dims = params.output_dims(in_dims)?;
    let g = geometry(in_dims, params, out_dims);
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = Tensor4::zeros(out_dims);
    let mut col = if params.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * cols]
    };
    let weight = params.weight.values();
    for n in 0..in_dims.n {
        let sample = input.sample(n);
        let lhs: &[T] = if params.is_pointwise() {
            sample
        } else {
            im2col(&g, sample, &mut col);
            &col
        };
        let dst = out.sample_mut(n);
        for (o, plane) in dst.chunks_exact_mut(cols).enumerate() {
            plane.iter_mut().for_each(|v| *v = params.bias[o]);
        }
        T::gemm(
            out_dims.c, rows, cols, T::one(), weight, rows, 1, lhs, cols, 1, T::one(), dst, cols, 1,
        );
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * conv2d_forward(input, params))`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, ConvGrads<T>)> {
    let in_dims = input.dims();
    let out_dims = params.output_dims(in_dims)?;
    grad_out.expect_dims(out_dims, "conv2d_backward grad_out")?;
    let g = geometry(in_dims, params, out_dims);
    let (rows, cols) = (g.rows(), g.cols());
    let c_out = out_dims.c;
    let weight = params.weight.values();

    let mut grads = ConvGrads::zeros_like(params);
    let mut grad_input = Tensor4::zeros(in_dims);
    let pointwise = params.is_pointwise();
    let mut col = vec![T::zero(); if pointwise { 0 } else { rows * cols }];
    let mut grad_col = vec![T::zero(); if pointwise { 0 } else { rows * cols }];

    for n in 0..in_dims.n {
        let go = grad_out.sample(n);
        for (o, plane) in go.chunks_exact(cols).enumerate() {
            grads.bias[o] += plane.iter().fold(T::zero(), |acc, &v| acc + v);
        }
        let lhs: &[T] = if pointwise {
            input.sample(n)
        } else {
            im2col(&g, input.sample(n), &mut col);
            &col
        };
        // dW += G * col^T
        T::gemm(
            c_out,
            cols,
            rows,
            T::one(),
            go,
            cols,
            1,
            lhs,
            1,
            cols,
            T::one(),
            &mut grads.weight,
            rows,
            1,
        );
        // dcol = W^T * G
        if pointwise {
            T::gemm(
                rows,
                c_out,
                cols,
                T::one(),
                weight,
                1,
                rows,
                go,
                cols,
                1,
                T::zero(),
                grad_input.sample_mut(n),
                cols,
                1,
            );
        } else {
            T::gemm(
                rows,
                c_out,
                cols,
                T::one(),
                weight,
                1,
                rows,
                go,
                cols,
                1,
                T::zero(),
                &mut grad_col,
                cols,
                1,
            );
            col2im(&g, &grad_col, grad_input.sample_mut(n));
        }
    }
    Ok((grad_input, grads))
}
