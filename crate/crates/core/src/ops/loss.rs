use crate::error::{shape_err, Error, Result};
use crate::mask::LabelMask;
use crate::tensor::{Scalar, Tensor4};

/// Mean softmax cross-entropy over pixels whose target is not `ignore`.
///
/// Returns the loss and its gradient with respect to `logits`. When every
/// pixel is ignored both are zero.
pub fn softmax_ce_ignore<T: Scalar>(
    logits: &Tensor4<T>,
    targets: &[LabelMask],
    ignore: u8,
) -> Result<(T, Tensor4<T>)> {
    let d = logits.dims();
    if targets.len() != d.n {
        return shape_err(format!("{} targets for logits {d}", targets.len()));
    }
    for t in targets {
        if (t.height(), t.width()) != (d.h, d.w) {
            return shape_err(format!(
                "target {}x{} for logits {d}",
                t.width(),
                t.height()
            ));
        }
    }
    let plane = d.plane();
    let mut count = 0usize;
    for (n, t) in targets.iter().enumerate() {
        for (i, &label) in t.labels().iter().enumerate() {
            if label == ignore {
                continue;
            }
            if usize::from(label) >= d.c {
                return Err(Error::Data(format!(
                    "target class {label} at sample {n} pixel ({}, {}) outside [0, {})",
                    i % d.w,
                    i / d.w,
                    d.c
                )));
            }
            count += 1;
        }
    }

    let mut grad = Tensor4::zeros(d);
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::from_f64(count as f64);
    let mut total = T::zero();
    let mut probs = vec![T::zero(); d.c];
    for (n, t) in targets.iter().enumerate() {
        let src = logits.sample(n);
        for (i, &label) in t.labels().iter().enumerate() {
            if label == ignore {
                continue;
            }
            let mut max = T::neg_infinity();
            for c in 0..d.c {
                max = max.max(src[c * plane + i]);
            }
            let mut z = T::zero();
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (src[c * plane + i] - max).exp();
                z += *p;
            }
            let k = usize::from(label);
            total += z.ln() - (src[k * plane + i] - max);
            let g = grad.sample_mut(n);
            for (c, &p) in probs.iter().enumerate() {
                let target = if c == k { T::one() } else { T::zero() };
                g[c * plane + i] = (p / z - target) * inv;
            }
        }
    }
    Ok((total * inv, grad))
}

/// Per-pixel argmax over channels; ties resolve to the lowest class index.
pub fn argmax_labels<T: Scalar>(logits: &Tensor4<T>) -> Vec<LabelMask> {
    let d = logits.dims();
    let plane = d.plane();
    (0..d.n)
        .map(|n| {
            let src = logits.sample(n);
            let labels = (0..plane)
                .map(|i| {
                    let mut best = 0usize;
                    for c in 1..d.c {
                        if src[c * plane + i] > src[best * plane + i] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMask::new(d.w, d.h, labels).expect("plane size matches")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::IGNORE;
    use crate::tensor::Dims;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor4::zeros(Dims::new(2, 5, 3, 3));
        let targets = vec![LabelMask::filled(3, 3, 2), LabelMask::filled(3, 3, 4)];
        let (loss, _) = softmax_ce_ignore::<f64>(&logits, &targets, IGNORE).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fully_ignored_is_zero() {
        let logits = Tensor4::full(Dims::new(1, 3, 2, 2), 1.5f64);
        let targets = vec![LabelMask::filled(2, 2, IGNORE)];
        let (loss, grad) = softmax_ce_ignore(&logits, &targets, IGNORE).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_target_is_data_error() {
        let logits = Tensor4::<f32>::zeros(Dims::new(1, 3, 2, 2));
        let targets = vec![LabelMask::from_rows(&[&[0, 1], &[3, 0]]).unwrap()];
        let err = softmax_ce_ignore(&logits, &targets, IGNORE).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn argmax_ties_pick_lowest_class() {
        let mut logits = Tensor4::<f32>::zeros(Dims::new(1, 4, 1, 2));
        logits.set(0, 2, 0, 1, 1.0);
        logits.set(0, 3, 0, 1, 1.0);
        let labels = argmax_labels(&logits);
        assert_eq!(labels[0].labels(), &[0, 2]);
    }
}
