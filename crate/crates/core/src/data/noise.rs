use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numeric::Tensor;

/// Adds i.i.d. `N(0, (sigma255/255)²)` noise from a ChaCha8 stream seeded by
/// `seed`. The result is not clamped.
pub fn add_gaussian_noise(img: &Tensor, sigma255: f64, seed: u64) -> Tensor {
    if sigma255 == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma255 / 255.0).expect("finite sigma");
    let data = img
        .data()
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    Tensor::new(img.shape(), data).expect("same shape")
}
