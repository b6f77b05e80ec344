//! Primitive kernels: forward and reverse-mode passes for every op the
//! compiled networks use. All kernels are single-threaded and evaluate in a
//! fixed order so results are bit-reproducible.

use super::tensor::Tensor;

/// Output spatial extent of a convolution: `(in + 2*pad - k) / stride + 1`.
#[inline]
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Valid output-column range such that `ow*stride + kw - pad` stays inside
/// `0..in_w`.
#[inline]
fn col_bounds(out_w: usize, in_w: usize, stride: usize, pad: usize, kw: usize) -> (usize, usize) {
    let lo = if kw >= pad {
        0
    } else {
        (pad - kw).div_ceil(stride)
    };
    let max_i = in_w as i64 - 1 + pad as i64 - kw as i64;
    if max_i < 0 {
        return (0, 0);
    }
    let hi = ((max_i / stride as i64) + 1).min(out_w as i64) as usize;
    (lo.min(hi), hi)
}

/// Dense 2-D convolution. `w` has shape `(cout, cin, k, k)`, `b` shape
/// `(cout, 1, 1, 1)`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, cin, ih, iw] = x.shape();
    let [cout, wcin, k, _] = w.shape();
    debug_assert_eq!(cin, wcin);
    let oh = conv_out_extent(ih, k, stride, pad);
    let ow = conv_out_extent(iw, k, stride, pad);
    let mut y = Tensor::zeros([n, cout, oh, ow]);
    for bi in 0..n {
        for oc in 0..cout {
            let bias = b.data()[oc];
            let y_base = y.plane(bi, oc);
            y.data_mut()[y_base..y_base + oh * ow].fill(bias);
            for ic in 0..cin {
                let x_base = x.plane(bi, ic);
                let w_base = w.plane(oc, ic);
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = w.data()[w_base + kh * k + kw];
                        let (lo, hi) = col_bounds(ow, iw, stride, pad, kw);
                        for orow in 0..oh {
                            let irow = (orow * stride + kh) as i64 - pad as i64;
                            if irow < 0 || irow >= ih as i64 {
                                continue;
                            }
                            let x_row = x_base + irow as usize * iw;
                            let y_row = y_base + orow * ow;
                            for oc_w in lo..hi {
                                let icol = oc_w * stride + kw - pad;
                                y.data_mut()[y_row + oc_w] +=
                                    wv * x.data()[x_row + icol];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv2d`]: returns `(dx, dw, db)`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let [n, cin, ih, iw] = x.shape();
    let [cout, _, k, _] = w.shape();
    let [_, _, oh, ow] = dy.shape();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([cout, 1, 1, 1]);
    for bi in 0..n {
        for oc in 0..cout {
            let dy_base = dy.plane(bi, oc);
            let mut bias_sum = 0.0;
            for v in &dy.data()[dy_base..dy_base + oh * ow] {
                bias_sum += v;
            }
            db.data_mut()[oc] += bias_sum;
            for ic in 0..cin {
                let x_base = x.plane(bi, ic);
                let w_base = w.plane(oc, ic);
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = w.data()[w_base + kh * k + kw];
                        let mut dwv = 0.0;
                        let (lo, hi) = col_bounds(ow, iw, stride, pad, kw);
                        for orow in 0..oh {
                            let irow = (orow * stride + kh) as i64 - pad as i64;
                            if irow < 0 || irow >= ih as i64 {
                                continue;
                            }
                            let x_row = x_base + irow as usize * iw;
                            let dy_row = dy_base + orow * ow;
                            for oc_w in lo..hi {
                                let icol = oc_w * stride + kw - pad;
                                let g = dy.data()[dy_row + oc_w];
                                dx.data_mut()[x_row + icol] += wv * g;
                                dwv += x.data()[x_row + icol] * g;
                            }
                        }
                        dw.data_mut()[w_base + kh * k + kw] += dwv;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Depthwise 2-D convolution. `w` has shape `(c, 1, k, k)`, `b` shape
/// `(c, 1, 1, 1)`; channel `c` of the output only sees channel `c` of the
/// input.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c, ih, iw] = x.shape();
    let [wc, _, k, _] = w.shape();
    debug_assert_eq!(c, wc);
    let oh = conv_out_extent(ih, k, stride, pad);
    let ow = conv_out_extent(iw, k, stride, pad);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for bi in 0..n {
        for ch in 0..c {
            let bias = b.data()[ch];
            let y_base = y.plane(bi, ch);
            y.data_mut()[y_base..y_base + oh * ow].fill(bias);
            let x_base = x.plane(bi, ch);
            let w_base = w.plane(ch, 0);
            for kh in 0..k {
                for kw in 0..k {
                    let wv = w.data()[w_base + kh * k + kw];
                    let (lo, hi) = col_bounds(ow, iw, stride, pad, kw);
                    for orow in 0..oh {
                        let irow = (orow * stride + kh) as i64 - pad as i64;
                        if irow < 0 || irow >= ih as i64 {
                            continue;
                        }
                        let x_row = x_base + irow as usize * iw;
                        let y_row = y_base + orow * ow;
                        for oc_w in lo..hi {
                            let icol = oc_w * stride + kw - pad;
                            y.data_mut()[y_row + oc_w] += wv * x.data()[x_row + icol];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`depthwise_conv2d`]: returns `(dx, dw, db)`.
pub fn depthwise_conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let [n, c, ih, iw] = x.shape();
    let [_, _, k, _] = w.shape();
    let [_, _, oh, ow] = dy.shape();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([c, 1, 1, 1]);
    for bi in 0..n {
        for ch in 0..c {
            let dy_base = dy.plane(bi, ch);
            let mut bias_sum = 0.0;
            for v in &dy.data()[dy_base..dy_base + oh * ow] {
                bias_sum += v;
            }
            db.data_mut()[ch] += bias_sum;
            let x_base = x.plane(bi, ch);
            let w_base = w.plane(ch, 0);
            for kh in 0..k {
                for kw in 0..k {
                    let wv = w.data()[w_base + kh * k + kw];
                    let mut dwv = 0.0;
                    let (lo, hi) = col_bounds(ow, iw, stride, pad, kw);
                    for orow in 0..oh {
                        let irow = (orow * stride + kh) as i64 - pad as i64;
                        if irow < 0 || irow >= ih as i64 {
                            continue;
                        }
                        let x_row = x_base + irow as usize * iw;
                        let dy_row = dy_base + orow * ow;
                        for oc_w in lo..hi {
                            let icol = oc_w * stride + kw - pad;
                            let g = dy.data()[dy_row + oc_w];
                            dx.data_mut()[x_row + icol] += wv * g;
                            dwv += x.data()[x_row + icol] * g;
                        }
                    }
                    dw.data_mut()[w_base + kh * k + kw] += dwv;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Rectifier. Pre-activations of exactly zero stay zero and report an
/// inactive trace bit.
pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    y
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &pre) in dx.data_mut().iter_mut().zip(x.data()) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Logistic sigmoid.
pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    y
}

/// Gradient of [`sigmoid`] given its output `y`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= s * (1.0 - s);
    }
    dx
}

/// Global average pooling to `(n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros([n, c, 1, 1]);
    let area = (h * w) as f64;
    for bi in 0..n {
        for ch in 0..c {
            let base = x.plane(bi, ch);
            let mut sum = 0.0;
            for v in &x.data()[base..base + h * w] {
                sum += v;
            }
            y.data_mut()[bi * c + ch] = sum / area;
        }
    }
    y
}

pub fn global_avg_pool_backward(x_shape: [usize; 4], dy: &Tensor) -> Tensor {
    let [n, c, h, w] = x_shape;
    let mut dx = Tensor::zeros(x_shape);
    let area = (h * w) as f64;
    for bi in 0..n {
        for ch in 0..c {
            let g = dy.data()[bi * c + ch] / area;
            let base = dx.plane(bi, ch);
            for v in &mut dx.data_mut()[base..base + h * w] {
                *v = g;
            }
        }
    }
    dx
}

/// Per-channel gating: `y[b,c,h,w] = x[b,c,h,w] * g[b,c,0,0]`.
pub fn channel_scale(x: &Tensor, gate: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut y = x.clone();
    for bi in 0..n {
        for ch in 0..c {
            let gv = gate.data()[bi * c + ch];
            let base = y.plane(bi, ch);
            for v in &mut y.data_mut()[base..base + h * w] {
                *v *= gv;
            }
        }
    }
    y
}

/// Gradients of [`channel_scale`]: returns `(dx, dgate)`.
pub fn channel_scale_backward(x: &Tensor, gate: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let [n, c, h, w] = x.shape();
    let mut dx = dy.clone();
    let mut dgate = Tensor::zeros([n, c, 1, 1]);
    for bi in 0..n {
        for ch in 0..c {
            let gv = gate.data()[bi * c + ch];
            let base = x.plane(bi, ch);
            let mut acc = 0.0;
            for i in base..base + h * w {
                acc += dy.data()[i] * x.data()[i];
                dx.data_mut()[i] *= gv;
            }
            dgate.data_mut()[bi * c + ch] = acc;
        }
    }
    (dx, dgate)
}

/// Element-wise addition of same-shaped tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let mut y = a.clone();
    for (v, &bv) in y.data_mut().iter_mut().zip(b.data()) {
        *v += bv;
    }
    y
}

/// Channel alignment by truncation or zero-padding to `to` channels.
pub fn channel_resize(x: &Tensor, to: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros([n, to, h, w]);
    let keep = c.min(to);
    for bi in 0..n {
        for ch in 0..keep {
            let src = x.plane(bi, ch);
            let dst = y.plane(bi, ch);
            y.data_mut()[dst..dst + h * w].copy_from_slice(&x.data()[src..src + h * w]);
        }
    }
    y
}

/// Gradient of [`channel_resize`]: truncated channels receive exactly zero.
pub fn channel_resize_backward(x_shape: [usize; 4], dy: &Tensor) -> Tensor {
    let [n, c, h, w] = x_shape;
    let to = dy.shape()[1];
    let mut dx = Tensor::zeros(x_shape);
    let keep = c.min(to);
    for bi in 0..n {
        for ch in 0..keep {
            let src = dy.plane(bi, ch);
            let dst = dx.plane(bi, ch);
            dx.data_mut()[dst..dst + h * w].copy_from_slice(&dy.data()[src..src + h * w]);
        }
    }
    dx
}

/// Nearest-neighbour spatial upsampling by 2.
pub fn nearest_up2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros([n, c, h * 2, w * 2]);
    for bi in 0..n {
        for ch in 0..c {
            let src = x.plane(bi, ch);
            let dst = y.plane(bi, ch);
            for row in 0..h * 2 {
                let x_row = src + (row / 2) * w;
                let y_row = dst + row * w * 2;
                for col in 0..w * 2 {
                    y.data_mut()[y_row + col] = x.data()[x_row + col / 2];
                }
            }
        }
    }
    y
}

pub fn nearest_up2_backward(x_shape: [usize; 4], dy: &Tensor) -> Tensor {
    let [n, c, h, w] = x_shape;
    let mut dx = Tensor::zeros(x_shape);
    for bi in 0..n {
        for ch in 0..c {
            let src = dy.plane(bi, ch);
            let dst = dx.plane(bi, ch);
            for row in 0..h * 2 {
                let dx_row = dst + (row / 2) * w;
                let dy_row = src + row * w * 2;
                for col in 0..w * 2 {
                    dx.data_mut()[dx_row + col / 2] += dy.data()[dy_row + col];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv2d_identity_kernel_passes_input_through() {
        // 1x1 kernel with identity channel mixing and zero bias.
        let x = Tensor::from_vec([1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
            .unwrap();
        let w = Tensor::from_vec([2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros([2, 1, 1, 1]);
        let y = conv2d(&x, &w, &b, 1, 0);
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_matches_nested_loop_reference() {
        // Direct definition-level reference on an asymmetric case.
        let x = Tensor::from_vec(
            [1, 1, 3, 4],
            vec![
                0.5, -1.0, 2.0, 0.0, 1.5, 3.0, -2.0, 1.0, 0.25, -0.75, 0.5, 2.5,
            ],
        )
        .unwrap();
        let w = Tensor::from_vec(
            [1, 1, 3, 3],
            vec![1.0, 0.0, -1.0, 2.0, 0.5, -0.5, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let b = Tensor::from_vec([1, 1, 1, 1], vec![0.1]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 1);
        let mut expect = Tensor::zeros([1, 1, 3, 4]);
        for oh in 0..3i64 {
            for ow in 0..4i64 {
                let mut acc = 0.1;
                for kh in 0..3i64 {
                    for kw in 0..3i64 {
                        let ih = oh + kh - 1;
                        let iw = ow + kw - 1;
                        if (0..3).contains(&ih) && (0..4).contains(&iw) {
                            acc += x.at(0, 0, ih as usize, iw as usize)
                                * w.at(0, 0, kh as usize, kw as usize);
                        }
                    }
                }
                *expect.at_mut(0, 0, oh as usize, ow as usize) = acc;
            }
        }
        for (a, e) in y.data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn strided_conv_halves_even_extents() {
        for (k, pad) in [(3usize, 1usize), (5, 2)] {
            let x = Tensor::zeros([1, 1, 16, 8]);
            let w = Tensor::zeros([1, 1, k, k]);
            let b = Tensor::zeros([1, 1, 1, 1]);
            let y = conv2d(&x, &w, &b, 2, pad);
            assert_eq!(y.shape(), [1, 1, 8, 4]);
        }
    }

    #[test]
    fn relu_zero_maps_to_zero() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn nearest_up2_replicates_blocks() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![3.0, 7.0]).unwrap();
        let y = nearest_up2(&x);
        assert_eq!(y.shape(), [1, 1, 2, 4]);
        assert_eq!(y.data(), &[3.0, 3.0, 7.0, 7.0, 3.0, 3.0, 7.0, 7.0]);
    }

    #[test]
    fn channel_resize_truncates_and_pads() {
        let x = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let truncated = channel_resize(&x, 1);
        assert_eq!(truncated.data(), &[1.0, 2.0]);
        let padded = channel_resize(&x, 3);
        assert_eq!(padded.data(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn global_avg_pool_means_each_plane() {
        let x = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 3.0, 10.0, 20.0]).unwrap();
        let y = global_avg_pool(&x);
        assert_eq!(y.data(), &[2.0, 15.0]);
    }
}
