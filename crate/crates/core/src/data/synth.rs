//! Procedural training images: smooth colored gradients and sinusoids with
//! hard-edged rectangles and discs on top.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numeric::Tensor;

/// One `[3, size, size]` image in `[0, 1]`, a pure function of `seed`.
pub fn synthetic_image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let mut img = vec![0.0; 3 * size * size];

    for c in 0..3 {
        let base: f64 = rng.random_range(0.2..0.8);
        let (gx, gy): (f64, f64) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let freq = rng.random_range(0.5..6.0) * 2.0 * PI / n;
                let angle = rng.random_range(0.0..PI);
                (
                    freq * angle.cos(),
                    freq * angle.sin(),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.02..0.12),
                )
            })
            .collect();
        for y in 0..size {
            for x in 0..size {
                let (xf, yf) = (x as f64, y as f64);
                let mut v = base + gx * (xf / n - 0.5) + gy * (yf / n - 0.5);
                for &(kx, ky, phase, amp) in &waves {
                    v += amp * (kx * xf + ky * yf + phase).sin();
                }
                img[(c * size + y) * size + x] = v;
            }
        }
    }

    let shapes = rng.random_range(2..7);
    for _ in 0..shapes {
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let alpha: f64 = rng.random_range(0.5..1.0);
        let cx = rng.random_range(0.0..n);
        let cy = rng.random_range(0.0..n);
        let r = rng.random_range(n / 16.0..n / 3.0);
        let disc = rng.random_bool(0.5);
        let aspect: f64 = rng.random_range(0.4..2.5);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disc {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r * aspect && dy.abs() <= r / aspect
                };
                if inside {
                    for (c, &col) in color.iter().enumerate() {
                        let p = &mut img[(c * size + y) * size + x];
                        *p = (1.0 - alpha) * *p + alpha * col;
                    }
                }
            }
        }
    }

    Tensor::new(
        &[3, size, size],
        img.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
    .expect("consistent shape")
}
