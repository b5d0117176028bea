//! Layer kernels over flat row-major buffers.
//!
//! Feature maps are laid out `[channels, height, width]`. The public
//! tensor-level wrappers at the bottom validate shapes and call the same
//! kernels the model uses.

use super::{NnError, Tensor};
use crate::Scalar;

/// Valid 2-D convolution (cross-correlation), stride 1.
///
/// `input` is `[c, h, w]`, `weights` is `[f, c, k, k]`, `out` is `[f, h-k+1, w-k+1]`.
pub(crate) fn conv_forward<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
    weights: &[T],
    bias: &[T],
    filters: usize,
    k: usize,
    out: &mut [T],
) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    debug_assert_eq!(out.len(), filters * oh * ow);
    for f in 0..filters {
        let plane = &mut out[f * oh * ow..(f + 1) * oh * ow];
        plane.fill(bias[f]);
        for ch in 0..c {
            let src = &input[ch * h * w..(ch + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let wv = weights[((f * c + ch) * k + ki) * k + kj];
                    for y in 0..oh {
                        let row = &src[(y + ki) * w + kj..(y + ki) * w + kj + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, &s) in dst.iter_mut().zip(row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients and, when `grad_input` is given,
/// the gradient with respect to the input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
    weights: &[T],
    filters: usize,
    k: usize,
    grad_out: &[T],
    grad_weights: &mut [T],
    grad_bias: &mut [T],
    mut grad_input: Option<&mut [T]>,
) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    for f in 0..filters {
        let g = &grad_out[f * oh * ow..(f + 1) * oh * ow];
        grad_bias[f] += g.iter().copied().sum::<T>();
        for ch in 0..c {
            let src = &input[ch * h * w..(ch + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let widx = ((f * c + ch) * k + ki) * k + kj;
                    let mut acc = T::zero();
                    for y in 0..oh {
                        let row = &src[(y + ki) * w + kj..(y + ki) * w + kj + ow];
                        let grow = &g[y * ow..(y + 1) * ow];
                        acc += row.iter().zip(grow).map(|(&a, &b)| a * b).sum::<T>();
                    }
                    grad_weights[widx] += acc;
                    if let Some(gi) = grad_input.as_deref_mut() {
                        let wv = weights[widx];
                        let dst_plane = &mut gi[ch * h * w..(ch + 1) * h * w];
                        for y in 0..oh {
                            let dst = &mut dst_plane[(y + ki) * w + kj..(y + ki) * w + kj + ow];
                            let grow = &g[y * ow..(y + 1) * ow];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2. A trailing odd row or column is dropped.
///
/// `argmax` receives, per output cell, the flat input index of the first
/// row-major maximum in its window.
pub(crate) fn pool_forward<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
    out: &mut [T],
    argmax: &mut [usize],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + (2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (ch * oh + y) * ow + x;
                out[o] = input[best];
                argmax[o] = best;
            }
        }
    }
}

pub(crate) fn pool_backward<T: Scalar>(grad_out: &[T], argmax: &[usize], grad_input: &mut [T]) {
    grad_input.fill(T::zero());
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        grad_input[idx] += g;
    }
}

/// `out = weights · input + bias`, with `weights` laid out `[units, in]`.
pub(crate) fn dense_forward<T: Scalar>(input: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    let n = input.len();
    for (u, o) in out.iter_mut().enumerate() {
        let row = &weights[u * n..(u + 1) * n];
        *o = bias[u] + row.iter().zip(input).map(|(&a, &b)| a * b).sum::<T>();
    }
}

pub(crate) fn dense_backward<T: Scalar>(
    input: &[T],
    weights: &[T],
    grad_out: &[T],
    grad_weights: &mut [T],
    grad_bias: &mut [T],
    mut grad_input: Option<&mut [T]>,
) {
    let n = input.len();
    if let Some(gi) = grad_input.as_deref_mut() {
        gi.fill(T::zero());
    }
    for (u, &g) in grad_out.iter().enumerate() {
        grad_bias[u] += g;
        if g == T::zero() {
            continue;
        }
        let gw = &mut grad_weights[u * n..(u + 1) * n];
        for (d, &x) in gw.iter_mut().zip(input) {
            *d += g * x;
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            let row = &weights[u * n..(u + 1) * n];
            for (d, &wv) in gi.iter_mut().zip(row) {
                *d += g * wv;
            }
        }
    }
}

/// 2-D convolution of a `[c, h, w]` (or `[h, w]`) input with `[f, c, k, k]`
/// kernels and `[f]` biases; valid padding, stride 1.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (c, h, w) = chw(input)?;
    let ks = kernels.shape();
    if ks.len() != 4 || ks[1] != c || ks[2] != ks[3] {
        return Err(NnError::Shape {
            expected: vec![ks.first().copied().unwrap_or(0), c, 3, 3],
            actual: ks.to_vec(),
        });
    }
    let (filters, k) = (ks[0], ks[2]);
    if bias.shape() != [filters] {
        return Err(NnError::Shape {
            expected: vec![filters],
            actual: bias.shape().to_vec(),
        });
    }
    if k == 0 || k > h || k > w {
        return Err(NnError::KernelTooLarge {
            kernel: k,
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![T::zero(); filters * oh * ow];
    conv_forward(
        input.data(),
        (c, h, w),
        kernels.data(),
        bias.data(),
        filters,
        k,
        &mut out,
    );
    Ok(Tensor::from_parts_unchecked(vec![filters, oh, ow], out))
}

/// 2x2/stride-2 max pooling; returns the pooled map and the flat input index
/// chosen for every output cell.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let (c, h, w) = chw(input)?;
    if c == 0 || h < 2 || w < 2 {
        return Err(NnError::EmptyInput);
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); c * oh * ow];
    let mut argmax = vec![0; c * oh * ow];
    pool_forward(input.data(), (c, h, w), &mut out, &mut argmax);
    Ok((Tensor::from_parts_unchecked(vec![c, oh, ow], out), argmax))
}

fn chw<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
    match *t.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(NnError::Shape {
            expected: vec![1, 0, 0],
            actual: t.shape().to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_crops_interior() {
        let input = Tensor::from_fn(vec![1, 5, 6], |i| i as f64 * 0.5);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let kernels = Tensor::new(vec![1, 1, 3, 3], k).unwrap();
        let out = conv2d(&input, &kernels, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(out.shape(), &[1, 3, 4]);
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(out.at(&[0, y, x]), input.at(&[0, y + 1, x + 1]));
            }
        }
    }

    #[test]
    fn zero_input_gives_bias() {
        let input = Tensor::<f64>::zeros(vec![2, 4, 4]);
        let kernels = Tensor::from_fn(vec![3, 2, 3, 3], |i| (i as f64).sin());
        let bias = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let out = conv2d(&input, &kernels, &bias).unwrap();
        for f in 0..3 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(out.at(&[f, y, x]), bias.data()[f]);
                }
            }
        }
    }

    #[test]
    fn kernel_larger_than_input_rejected() {
        let input = Tensor::<f64>::zeros(vec![1, 2, 2]);
        let kernels = Tensor::zeros(vec![1, 1, 3, 3]);
        let err = conv2d(&input, &kernels, &Tensor::zeros(vec![1])).unwrap_err();
        assert!(matches!(err, NnError::KernelTooLarge { .. }));
    }

    #[test]
    fn pool_ascending_grid() {
        let input = Tensor::from_fn(vec![1, 4, 4], |i| (i + 1) as f64);
        let (out, _) = maxpool2d(&input).unwrap();
        assert_eq!(out.data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn pool_constant_and_odd_truncation() {
        let input = Tensor::filled(vec![2, 5, 5], 3.25);
        let (out, _) = maxpool2d(&input).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn pool_tie_routes_to_first_maximum() {
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 7.0, 7.0, 7.0]).unwrap();
        let (_, argmax) = maxpool2d(&input).unwrap();
        assert_eq!(argmax, vec![1]);
        let mut grad = vec![0.0; 4];
        pool_backward(&[2.5], &argmax, &mut grad);
        assert_eq!(grad, vec![0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn pool_rejects_empty() {
        let input = Tensor::<f64>::zeros(vec![1, 1, 4]);
        assert_eq!(maxpool2d(&input).unwrap_err(), NnError::EmptyInput);
    }
}
