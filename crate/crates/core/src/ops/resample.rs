//! Bilinear (half-pixel centres, no corner alignment) and nearest resampling.

use crate::error::{Error, Result};
use crate::mask::nearest_indices;
use crate::tensor::{Dims, Scalar, Tensor4};

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: s - lo as f64,
            }
        })
        .collect()
}

fn check(out_h: usize, out_w: usize, input: Dims) -> Result<()> {
    if out_h == 0 || out_w == 0 || input.h == 0 || input.w == 0 {
        return Err(Error::Argument(format!(
            "bilinear resize from {}x{} to {out_h}x{out_w}",
            input.h, input.w
        )));
    }
    Ok(())
}

pub fn bilinear_upsample<T: Scalar>(
    input: &Tensor4<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor4<T>> {
    let d = input.dims();
    check(out_h, out_w, d)?;
    if (out_h, out_w) == (d.h, d.w) {
        return Ok(Tensor4::from_vec(d, input.values().to_vec())?);
    }
    let ys = taps(d.h, out_h);
    let xs = taps(d.w, out_w);
    let xw: Vec<(T, T)> = xs
        .iter()
        .map(|t| (T::from_f64(1.0 - t.frac), T::from_f64(t.frac)))
        .collect();
    let mut out = Tensor4::zeros(Dims::new(d.n, d.c, out_h, out_w));
    for n in 0..d.n {
        for c in 0..d.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, ty) in ys.iter().enumerate() {
                let wy0 = T::from_f64(1.0 - ty.frac);
                let wy1 = T::from_f64(ty.frac);
                let r0 = &src[ty.lo * d.w..(ty.lo + 1) * d.w];
                let r1 = &src[ty.hi * d.w..(ty.hi + 1) * d.w];
                for (ox, (tx, &(wx0, wx1))) in xs.iter().zip(&xw).enumerate() {
                    let top = r0[tx.lo] * wx0 + r0[tx.hi] * wx1;
                    let bottom = r1[tx.lo] * wx0 + r1[tx.hi] * wx1;
                    dst[oy * out_w + ox] = top * wy0 + bottom * wy1;
                }
            }
        }
    }
    Ok(out)
}

pub fn bilinear_upsample_backward<T: Scalar>(
    input_dims: Dims,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let d = input_dims;
    let go = grad_out.dims();
    check(go.h, go.w, d)?;
    grad_out.expect_dims(Dims::new(d.n, d.c, go.h, go.w), "bilinear_upsample_backward grad_out")?;
    if (go.h, go.w) == (d.h, d.w) {
        return Ok(Tensor4::from_vec(d, grad_out.values().to_vec())?);
    }
    let ys = taps(d.h, go.h);
    let xs = taps(d.w, go.w);
    let mut grad = Tensor4::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            let src = grad_out.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for (oy, ty) in ys.iter().enumerate() {
                let wy0 = T::from_f64(1.0 - ty.frac);
                let wy1 = T::from_f64(ty.frac);
                for (ox, tx) in xs.iter().enumerate() {
                    let g = src[oy * go.w + ox];
                    let wx0 = T::from_f64(1.0 - tx.frac);
                    let wx1 = T::from_f64(tx.frac);
                    dst[ty.lo * d.w + tx.lo] += g * wy0 * wx0;
                    dst[ty.lo * d.w + tx.hi] += g * wy0 * wx1;
                    dst[ty.hi * d.w + tx.lo] += g * wy1 * wx0;
                    dst[ty.hi * d.w + tx.hi] += g * wy1 * wx1;
                }
            }
        }
    }
    Ok(grad)
}

/// Nearest-neighbour resize of every channel plane.
pub fn nearest_resize<T: Scalar>(input: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    let d = input.dims();
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(format!(
            "nearest resize to {out_h}x{out_w}"
        )));
    }
    let ys = nearest_indices(d.h, out_h);
    let xs = nearest_indices(d.w, out_w);
    Ok(Tensor4::from_fn(Dims::new(d.n, d.c, out_h, out_w), |n, c, y, x| {
        input.at(n, c, ys[y], xs[x])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let t = Tensor4::from_fn(Dims::new(1, 2, 3, 4), |_, c, y, x| (c + y * x) as f32 * 0.3);
        assert_eq!(bilinear_upsample(&t, 3, 4).unwrap(), t);
    }

    #[test]
    fn constant_stays_constant() {
        let t = Tensor4::full(Dims::new(2, 1, 3, 5), 0.75f64);
        let up = bilinear_upsample(&t, 12, 7).unwrap();
        assert!(up.values().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn doubling_matches_half_pixel_convention() {
        // [0, 1] -> [0, 0.25, 0.75, 1]
        let t = Tensor4::from_vec(Dims::new(1, 1, 1, 2), vec![0.0f64, 1.0]).unwrap();
        let up = bilinear_upsample(&t, 1, 4).unwrap();
        assert_eq!(up.values(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn backward_conserves_mass() {
        let g = Tensor4::full(Dims::new(1, 1, 8, 6), 1.0f64);
        let gi = bilinear_upsample_backward(Dims::new(1, 1, 3, 2), &g).unwrap();
        assert!((gi.sum() - 48.0).abs() < 1e-12);
    }

    #[test]
    fn zero_target_rejected() {
        let t = Tensor4::<f32>::zeros(Dims::new(1, 1, 2, 2));
        assert!(bilinear_upsample(&t, 0, 2).is_err());
        assert!(nearest_resize(&t, 2, 0).is_err());
    }
}
