use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor4};

/// Partition `[start, end)` of cell `i` when splitting `extent` into `cells`.
fn bounds(i: usize, extent: usize, cells: usize) -> (usize, usize) {
    let start = (i * extent) / cells;
    let end = ((i + 1) * extent).div_ceil(cells);
    (start, end)
}

fn check(d: Dims, out_h: usize, out_w: usize) -> Result<Dims> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(format!(
            "adaptive pool output {out_h}x{out_w} must be non-empty"
        )));
    }
    if out_h > d.h || out_w > d.w {
        return Err(Error::Argument(format!(
            "adaptive pool output {out_h}x{out_w} exceeds input {}x{}",
            d.h, d.w
        )));
    }
    Ok(Dims::new(d.n, d.c, out_h, out_w))
}

pub fn adaptive_avg_pool<T: Scalar>(
    input: &Tensor4<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor4<T>> {
    let out_dims = check(input.dims(), out_h, out_w)?;
    let d = input.dims();
    let mut out = Tensor4::zeros(out_dims);
    for n in 0..d.n {
        for c in 0..d.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..out_h {
                let (y0, y1) = bounds(oy, d.h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = bounds(ox, d.w, out_w);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for &v in &src[y * d.w + x0..y * d.w + x1] {
                            acc += v;
                        }
                    }
                    dst[oy * out_w + ox] = acc / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool_backward<T: Scalar>(
    input_dims: Dims,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let go = grad_out.dims();
    let (out_h, out_w) = (go.h, go.w);
    check(input_dims, out_h, out_w)?;
    grad_out.expect_dims(
        Dims::new(input_dims.n, input_dims.c, out_h, out_w),
        "adaptive_avg_pool_backward grad_out",
    )?;
    let d = input_dims;
    let mut grad = Tensor4::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            let src = grad_out.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for oy in 0..out_h {
                let (y0, y1) = bounds(oy, d.h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = bounds(ox, d.w, out_w);
                    let share =
                        src[oy * out_w + ox] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    for y in y0..y1 {
                        for v in &mut dst[y * d.w + x0..y * d.w + x1] {
                            *v += share;
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}
