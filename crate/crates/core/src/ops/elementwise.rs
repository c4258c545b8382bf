use crate::error::{shape_err, Result};
use crate::tensor::{Dims, Scalar, Tensor4};

pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    grad_out.expect_dims(input.dims(), "relu_backward grad_out")?;
    let values = input
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(input.dims(), values)
}

pub fn add<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    b.expect_dims(a.dims(), "add")?;
    let values = a.values().iter().zip(b.values()).map(|(&x, &y)| x + y).collect();
    Tensor4::from_vec(a.dims(), values)
}

/// Both summands receive the upstream gradient unchanged.
pub fn add_backward<T: Scalar>(grad_out: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>) {
    (grad_out.clone(), grad_out.clone())
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (da, db) = (a.dims(), b.dims());
    if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
        return shape_err(format!("concat_channels: {da} vs {db}"));
    }
    let dims = Dims::new(da.n, da.c + db.c, da.h, da.w);
    let mut values = Vec::with_capacity(dims.len());
    for n in 0..da.n {
        values.extend_from_slice(a.sample(n));
        values.extend_from_slice(b.sample(n));
    }
    Tensor4::from_vec(dims, values)
}

/// Splits a tensor at channel `at` into the two concatenated parts.
pub fn split_channels<T: Scalar>(t: &Tensor4<T>, at: usize) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let d = t.dims();
    if at > d.c {
        return shape_err(format!("split at channel {at} of {d}"));
    }
    let da = Dims::new(d.n, at, d.h, d.w);
    let db = Dims::new(d.n, d.c - at, d.h, d.w);
    let mut a = Vec::with_capacity(da.len());
    let mut b = Vec::with_capacity(db.len());
    for n in 0..d.n {
        let s = t.sample(n);
        a.extend_from_slice(&s[..da.sample()]);
        b.extend_from_slice(&s[da.sample()..]);
    }
    Ok((Tensor4::from_vec(da, a)?, Tensor4::from_vec(db, b)?))
}

pub fn concat_channels_backward<T: Scalar>(
    a_channels: usize,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    split_channels(grad_out, a_channels)
}

/// Channel concatenation of several tensors, in order.
pub fn concat_many<T: Scalar>(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let Some(first) = parts.first() else {
        return shape_err("concat of zero tensors");
    };
    let d0 = first.dims();
    let mut c = 0;
    for p in parts {
        let d = p.dims();
        if (d.n, d.h, d.w) != (d0.n, d0.h, d0.w) {
            return shape_err(format!("concat_channels: {d0} vs {d}"));
        }
        c += d.c;
    }
    let dims = Dims::new(d0.n, c, d0.h, d0.w);
    let mut values = Vec::with_capacity(dims.len());
    for n in 0..d0.n {
        for p in parts {
            values.extend_from_slice(p.sample(n));
        }
    }
    Tensor4::from_vec(dims, values)
}

/// Inverse of [`concat_many`] given the channel count of each part.
pub fn split_many<T: Scalar>(t: &Tensor4<T>, channels: &[usize]) -> Result<Vec<Tensor4<T>>> {
    let d = t.dims();
    if channels.iter().sum::<usize>() != d.c {
        return shape_err(format!("split {d} into channel groups {channels:?}"));
    }
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(d.n * c * d.plane()))
        .collect();
    for n in 0..d.n {
        let mut rest = t.sample(n);
        for (part, &c) in parts.iter_mut().zip(channels) {
            let (head, tail) = rest.split_at(c * d.plane());
            part.extend_from_slice(head);
            rest = tail;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(v, &c)| Tensor4::from_vec(Dims::new(d.n, c, d.h, d.w), v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let t = Tensor4::from_vec(Dims::new(1, 1, 1, 3), vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).values(), &[0.0, 0.0, 2.0]);
        let g = Tensor4::full(t.dims(), 5.0);
        // zero input gets zero gradient
        assert_eq!(relu_backward(&t, &g).unwrap().values(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn add_negation_is_zero() {
        let a = Tensor4::from_fn(Dims::new(2, 2, 2, 2), |n, c, y, x| (n + 2 * c + y) as f64 - x as f64);
        let z = add(&a, &a.map(|v| -v)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert_eq!(add(&a, &Tensor4::zeros(a.dims())).unwrap(), a);
        assert!(add(&a, &Tensor4::zeros(Dims::new(2, 1, 2, 2))).is_err());
    }

    #[test]
    fn concat_orders_a_then_b() {
        let a = Tensor4::full(Dims::new(2, 2, 3, 3), 1.0f32);
        let b = Tensor4::full(Dims::new(2, 3, 3, 3), 2.0f32);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), Dims::new(2, 5, 3, 3));
        assert_eq!(c.at(1, 1, 2, 2), 1.0);
        assert_eq!(c.at(1, 2, 0, 0), 2.0);
        let (ra, rb) = split_channels(&c, 2).unwrap();
        assert_eq!((ra, rb), (a.clone(), b));
        let empty = Tensor4::zeros(Dims::new(2, 0, 3, 3));
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor4::<f32>::zeros(Dims::new(1, 2, 3, 3));
        let b = Tensor4::<f32>::zeros(Dims::new(1, 2, 3, 4));
        assert!(concat_channels(&a, &b).is_err());
    }
}
