//! MATLAB-compatible antialiased bicubic resampling (`imresize` convention).

use crate::error::{shape_err, Result};
use crate::numeric::Tensor;

/// Keys cubic kernel with `a = −0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Taps (input indices, normalized weights) for every output sample of a
/// `in_len → out_len` resize. When shrinking, the kernel is stretched by the
/// downscale factor; out-of-range taps reflect symmetrically.
pub fn contributions(in_len: usize, out_len: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let scale = out_len as f64 / in_len as f64;
    let (kernel_scale, width) = if scale < 1.0 {
        (scale, 4.0 / scale)
    } else {
        (1.0, 4.0)
    };
    let taps = width.ceil() as isize + 2;
    (1..=out_len)
        .map(|o| {
            // 1-based continuous input coordinate of this output sample
            let u = o as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as isize;
            let mut idx = Vec::new();
            let mut wts = Vec::new();
            for p in 0..taps {
                let j = left + p;
                let w = kernel_scale * cubic(kernel_scale * (u - j as f64));
                if w != 0.0 {
                    idx.push(reflect(j, in_len));
                    wts.push(w);
                }
            }
            let sum: f64 = wts.iter().sum();
            wts.iter_mut().for_each(|w| *w /= sum);
            (idx, wts)
        })
        .collect()
}

/// 1-based index `j` folded into `0..len` by symmetric reflection.
fn reflect(j: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let m = (j - 1).rem_euclid(period) as usize;
    if m < len {
        m
    } else {
        period as usize - 1 - m
    }
}

fn resize_axis(
    data: &[f64],
    outer: usize,
    len: usize,
    inner: usize,
    taps: &[(Vec<usize>, Vec<f64>)],
) -> Vec<f64> {
    let out_len = taps.len();
    let mut out = vec![0.0; outer * out_len * inner];
    for o in 0..outer {
        for (k, (idx, wts)) in taps.iter().enumerate() {
            let dst = &mut out[(o * out_len + k) * inner..(o * out_len + k + 1) * inner];
            for (&j, &w) in idx.iter().zip(wts) {
                let src = &data[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    out
}

/// Shrinks a `[C, H, W]` image by an integer factor: rows first, then columns.
pub fn bicubic_downsample(img: &Tensor, scale: usize) -> Result<Tensor> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(shape_err(format!("expected [C,H,W], got {s:?}"))),
    };
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(shape_err(format!("{h}x{w} is not divisible by {scale}")));
    }
    let (oh, ow) = (h / scale, w / scale);
    let along_w = resize_axis(img.data(), c * h, w, 1, &contributions(w, ow));
    let along_h = resize_axis(&along_w, c, h, ow, &contributions(h, oh));
    Tensor::new(&[c, oh, ow], along_h)
}
