//! Elementwise operators, reductions, channel concatenation and the
//! pairwise softmax readout, each with its gradient rule.

use super::Tensor;
use crate::error::{Error, Result};

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|args| {
            vec![
                Some(args.cotangent.to_vec()),
                Some(args.cotangent.to_vec()),
            ]
        }),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|args| {
            vec![
                Some(args.cotangent.to_vec()),
                Some(args.cotangent.iter().map(|c| -c).collect()),
            ]
        }),
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|args| {
            let a = &args.parents[0];
            let b = &args.parents[1];
            let da = args
                .cotangent
                .iter()
                .zip(b.data())
                .map(|(c, y)| c * y)
                .collect();
            let db = args
                .cotangent
                .iter()
                .zip(a.data())
                .map(|(c, x)| c * x)
                .collect();
            vec![Some(da), Some(db)]
        }),
    ))
}

pub fn neg(a: &Tensor) -> Tensor {
    scale(a, -1.0)
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    let data = a.data().iter().map(|x| factor * x).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |args| vec![Some(args.cotangent.iter().map(|c| factor * c).collect())]),
    )
}

pub fn add_scalar(a: &Tensor, value: f64) -> Tensor {
    let data = a.data().iter().map(|x| x + value).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|args| vec![Some(args.cotangent.to_vec())]),
    )
}

/// `value - a`, elementwise.
pub fn rsub_scalar(value: f64, a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| value - x).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|args| vec![Some(args.cotangent.iter().map(|c| -c).collect())]),
    )
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| x.max(0.0)).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|args| {
            let d = args
                .cotangent
                .iter()
                .zip(args.output)
                .map(|(c, y)| if *y > 0.0 { *c } else { 0.0 })
                .collect();
            vec![Some(d)]
        }),
    )
}

fn sigmoid_scalar(x: f64) -> f64 {
    // Split on sign so the exponential never overflows.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| sigmoid_scalar(*x)).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|args| {
            let d = args
                .cotangent
                .iter()
                .zip(args.output)
                .map(|(c, y)| c * y * (1.0 - y))
                .collect();
            vec![Some(d)]
        }),
    )
}

/// Natural log; callers clamp away from 0 beforehand (see `clamp`).
pub fn log(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| x.ln()).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|args| {
            let a = &args.parents[0];
            let d = args
                .cotangent
                .iter()
                .zip(a.data())
                .map(|(c, x)| c / x)
                .collect();
            vec![Some(d)]
        }),
    )
}

pub fn sqrt(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| x.sqrt()).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|args| {
            // Subgradient 0 at the cone tip (y == 0).
            let d = args
                .cotangent
                .iter()
                .zip(args.output)
                .map(|(c, y)| if *y > 0.0 { 0.5 * c / y } else { 0.0 })
                .collect();
            vec![Some(d)]
        }),
    )
}

/// Clamp into `[lo, hi]`; gradient passes through strictly inside the band.
pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Tensor {
    let data = a.data().iter().map(|x| x.clamp(lo, hi)).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |args| {
            let a = &args.parents[0];
            let d = args
                .cotangent
                .iter()
                .zip(a.data())
                .map(|(c, x)| if *x > lo && *x < hi { *c } else { 0.0 })
                .collect();
            vec![Some(d)]
        }),
    )
}

/// Per-element smoothed absolute value: `d^2/(2e) + e/2` for `|d| < e`,
/// `|d|` otherwise. The derivative (`d/e` vs `sign(d)`) is continuous at the
/// branch boundary.
pub fn huber(a: &Tensor, epsilon: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .map(|d| {
            if d.abs() < epsilon {
                d * d / (2.0 * epsilon) + epsilon / 2.0
            } else {
                d.abs()
            }
        })
        .collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |args| {
            let a = &args.parents[0];
            let d = args
                .cotangent
                .iter()
                .zip(a.data())
                .map(|(c, x)| {
                    if x.abs() < epsilon {
                        c * x / epsilon
                    } else {
                        c * x.signum()
                    }
                })
                .collect();
            vec![Some(d)]
        }),
    )
}

/// Sum of all elements, as a scalar tensor.
pub fn sum(a: &Tensor) -> Tensor {
    let total: f64 = a.data().iter().sum();
    let n = a.numel();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![a.clone()],
        Box::new(move |args| vec![Some(vec![args.cotangent[0]; n])]),
    )
}

pub fn mean(a: &Tensor) -> Tensor {
    scale(&sum(a), 1.0 / a.numel() as f64)
}

/// Sum per leading-axis slice: an (N, ...) tensor reduces to (N,).
pub fn sum_per_sample(a: &Tensor) -> Tensor {
    let n = a.shape().first().copied().unwrap_or(1);
    let stride = a.numel() / n.max(1);
    let data = (0..n)
        .map(|i| a.data()[i * stride..(i + 1) * stride].iter().sum())
        .collect();
    Tensor::from_op(
        vec![n],
        data,
        vec![a.clone()],
        Box::new(move |args| {
            let mut g = vec![0.0; n * stride];
            for (i, c) in args.cotangent.iter().enumerate() {
                g[i * stride..(i + 1) * stride].fill(*c);
            }
            vec![Some(g)]
        }),
    )
}

/// Channel-wise concatenation of NCHW tensors sharing batch and spatial
/// extents; gradient splits back by slice.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Data("concat_channels: empty part list".into()))?;
    if first.shape().len() != 4 {
        return Err(Error::Rank {
            op: "concat_channels",
            expected: 4,
            got: first.shape().len(),
        });
    }
    let (n, h, w) = (first.shape()[0], first.shape()[2], first.shape()[3]);
    let mut channels = Vec::with_capacity(parts.len());
    for (idx, p) in parts.iter().enumerate() {
        let s = p.shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(Error::ConcatMismatch {
                part: idx,
                expected: vec![n, h, w],
                got: s.to_vec(),
            });
        }
        channels.push(s[1]);
    }
    let c_total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = vec![0.0; n * c_total * plane];
    for b in 0..n {
        let mut c_off = 0;
        for p in parts {
            let pc = p.shape()[1];
            let src = &p.data()[b * pc * plane..(b + 1) * pc * plane];
            let dst_start = (b * c_total + c_off) * plane;
            data[dst_start..dst_start + pc * plane].copy_from_slice(src);
            c_off += pc;
        }
    }
    Ok(Tensor::from_op(
        vec![n, c_total, h, w],
        data,
        parts.to_vec(),
        Box::new(move |args| {
            let mut grads: Vec<Option<Vec<f64>>> = channels
                .iter()
                .map(|pc| Some(vec![0.0; n * pc * plane]))
                .collect();
            for b in 0..n {
                let mut c_off = 0;
                for (pi, pc) in channels.iter().enumerate() {
                    let src_start = (b * c_total + c_off) * plane;
                    let g = grads[pi].as_mut().unwrap();
                    g[b * pc * plane..(b + 1) * pc * plane]
                        .copy_from_slice(&args.cotangent[src_start..src_start + pc * plane]);
                    c_off += pc;
                }
            }
            grads
        }),
    ))
}

/// Slice `len` channels starting at `start` out of an NCHW tensor.
pub fn narrow_channels(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if a.shape().len() != 4 {
        return Err(Error::Rank {
            op: "narrow_channels",
            expected: 4,
            got: a.shape().len(),
        });
    }
    let (n, c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    if start + len > c {
        return Err(Error::ChannelMismatch {
            op: "narrow_channels",
            what: "slice end",
            expected: c,
            got: start + len,
        });
    }
    let plane = h * w;
    let mut data = vec![0.0; n * len * plane];
    for b in 0..n {
        let src_start = (b * c + start) * plane;
        data[b * len * plane..(b + 1) * len * plane]
            .copy_from_slice(&a.data()[src_start..src_start + len * plane]);
    }
    Ok(Tensor::from_op(
        vec![n, len, h, w],
        data,
        vec![a.clone()],
        Box::new(move |args| {
            let mut g = vec![0.0; n * c * plane];
            for b in 0..n {
                let dst_start = (b * c + start) * plane;
                g[dst_start..dst_start + len * plane]
                    .copy_from_slice(&args.cotangent[b * len * plane..(b + 1) * len * plane]);
            }
            vec![Some(g)]
        }),
    ))
}

/// Two-class softmax over per-pixel score planes.
///
/// Returns `(Pr(y=1), Pr(y=0))`. Computed as a stable sigmoid of the score
/// difference, which is the max-subtracted two-class softmax; outputs are in
/// (0,1) and sum to 1 per pixel.
pub fn softmax_pairwise(z0: &Tensor, z1: &Tensor) -> Result<(Tensor, Tensor)> {
    check_same_shape("softmax_pairwise", z0, z1)?;
    let p1 = sigmoid(&sub(z1, z0)?);
    let p0 = rsub_scalar(1.0, &p1);
    Ok((p1, p0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn softmax_equal_scores_give_half() {
        let z = Tensor::new(&[1, 1, 2, 2], vec![3.0; 4]).unwrap();
        let (p1, p0) = softmax_pairwise(&z, &z).unwrap();
        for (a, b) in p1.data().iter().zip(p0.data()) {
            assert_eq!(*a, 0.5);
            assert_eq!(*b, 0.5);
        }
    }

    #[test]
    fn softmax_log3_margin_gives_three_quarters() {
        let z0 = Tensor::new(&[1, 1, 1, 1], vec![0.0]).unwrap();
        let z1 = Tensor::new(&[1, 1, 1, 1], vec![3.0f64.ln()]).unwrap();
        let (p1, p0) = softmax_pairwise(&z0, &z1).unwrap();
        assert!((p1.data()[0] - 0.75).abs() < 1e-12);
        assert!((p0.data()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance_on_exact_values() {
        // Dyadic scores stay exact under the +1000 shift, so the outputs
        // must be bit-identical.
        let z0 = Tensor::new(&[1, 1, 1, 2], vec![1.25, -0.5]).unwrap();
        let z1 = Tensor::new(&[1, 1, 1, 2], vec![3.5, 0.75]).unwrap();
        let (p1, _) = softmax_pairwise(&z0, &z1).unwrap();
        let shift = |t: &Tensor| add_scalar(t, 1000.0);
        let (q1, _) = softmax_pairwise(&shift(&z0), &shift(&z1)).unwrap();
        assert_eq!(p1.data(), q1.data());
    }

    #[test]
    fn softmax_outputs_sum_to_one_and_stay_open_interval() {
        let z0 = Tensor::new(&[1, 1, 1, 3], vec![15.0, -15.0, 0.0]).unwrap();
        let z1 = Tensor::new(&[1, 1, 1, 3], vec![-15.0, 15.0, 1e-9]).unwrap();
        let (p1, p0) = softmax_pairwise(&z0, &z1).unwrap();
        for (a, b) in p1.data().iter().zip(p0.data()) {
            assert!((a + b - 1.0).abs() < 1e-12);
            assert!(*a > 0.0 && *a < 1.0, "p1 = {a}");
            assert!(*b > 0.0 && *b < 1.0, "p0 = {b}");
        }
    }

    #[test]
    fn softmax_saturating_scores_stay_finite_and_sum_to_one() {
        let z0 = Tensor::new(&[1, 1, 1, 2], vec![500.0, -740.0]).unwrap();
        let z1 = Tensor::new(&[1, 1, 1, 2], vec![-500.0, 740.0]).unwrap();
        let (p1, p0) = softmax_pairwise(&z0, &z1).unwrap();
        for (a, b) in p1.data().iter().zip(p0.data()) {
            assert!(a.is_finite() && b.is_finite());
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_single_part_is_identity() {
        let a = Tensor::new(&[1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let c = concat_channels(std::slice::from_ref(&a)).unwrap();
        assert_eq!(c.shape(), a.shape());
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn concat_orders_parts_and_narrow_recovers_them() {
        let mk = |c: usize, fill: f64| Tensor::full(&[2, c, 3, 2], fill);
        let parts = [mk(3, 1.0), mk(5, 2.0), mk(2, 3.0)];
        let cat = concat_channels(&parts).unwrap();
        assert_eq!(cat.shape(), &[2, 10, 3, 2]);
        let offsets = [0usize, 3, 8];
        for (i, p) in parts.iter().enumerate() {
            let back = narrow_channels(&cat, offsets[i], p.shape()[1]).unwrap();
            assert_eq!(back.data(), p.data());
        }
    }

    #[test]
    fn concat_reports_mismatched_part_index() {
        let a = Tensor::zeros(&[1, 2, 4, 4]);
        let b = Tensor::zeros(&[1, 2, 4, 3]);
        match concat_channels(&[a, b]) {
            Err(Error::ConcatMismatch { part: 1, .. }) => {}
            other => panic!("expected ConcatMismatch for part 1, got {other:?}"),
        }
    }

    #[test]
    fn concat_gradient_splits_by_slice() {
        let a = Tensor::param(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::param(&[1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let cat = concat_channels(&[a.clone(), b.clone()]).unwrap();
        let weights = Tensor::new(&[1, 3, 1, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let loss = sum(&mul(&cat, &weights).unwrap());
        backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn huber_branches_agree_at_epsilon() {
        let eps = 0.1;
        let d = Tensor::new(&[3], vec![0.0, eps, 0.5]).unwrap();
        let h = huber(&d, eps);
        assert!((h.data()[0] - eps / 2.0).abs() < 1e-15);
        assert!((h.data()[1] - eps).abs() < 1e-15);
        assert!((h.data()[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clamp_blocks_gradient_outside_band() {
        let x = Tensor::param(&[3], vec![0.5, 2.0, -1.0]).unwrap();
        let loss = sum(&clamp(&x, 0.0, 1.0));
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0]);
    }
}
