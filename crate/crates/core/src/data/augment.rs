//! Aligned random crops with flip/rotation augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImagePair;
use crate::error::{shape_err, Error, Result};
use crate::numeric::Tensor;

fn chw(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(shape_err(format!("expected [C,H,W], got {s:?}"))),
    }
}

pub fn crop(img: &Tensor, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
    let (c, h, w) = chw(img)?;
    if top + height > h || left + width > w {
        return Err(shape_err(format!(
            "crop {height}x{width} at ({top},{left}) exceeds {h}x{w}"
        )));
    }
    Ok(Tensor::from_fn(&[c, height, width], |i| {
        let (ch, y, x) = (i / (height * width), (i / width) % height, i % width);
        img.data()[(ch * h + top + y) * w + left + x]
    }))
}

/// Mirrors columns.
pub fn hflip(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(img)?;
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (row, x) = (i / w, i % w);
        img.data()[row * w + (w - 1 - x)]
    }))
}

/// Rotates by `k` quarter turns counter-clockwise.
pub fn rot90(img: &Tensor, k: usize) -> Result<Tensor> {
    let mut out = img.clone();
    for _ in 0..k % 4 {
        let (c, h, w) = chw(&out)?;
        let src = out;
        // new[y][x] = old[x][w - 1 - y], new shape [c, w, h]
        out = Tensor::from_fn(&[c, w, h], |i| {
            let (ch, y, x) = (i / (w * h), (i / h) % w, i % h);
            src.data()[(ch * h + x) * w + (w - 1 - y)]
        });
    }
    Ok(out)
}

/// Augmentation drawn for one patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchDraw {
    /// Crop origin in low-quality pixels.
    pub top: usize,
    pub left: usize,
    pub flip: bool,
    pub rotations: usize,
}

pub fn draw_patch(lq_h: usize, lq_w: usize, lq_patch: usize, seed: u64) -> PatchDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = rng.random_range(0..=lq_h - lq_patch);
    let left = rng.random_range(0..=lq_w - lq_patch);
    let flip = rng.random_bool(0.5);
    let rotations = rng.random_range(0..4);
    PatchDraw {
        top,
        left,
        flip,
        rotations,
    }
}

/// Crops a `patch × patch` high-quality region and the aligned
/// `patch/scale` low-quality region, then applies the same random
/// horizontal flip and quarter-turn rotation to both.
pub fn sample_patch(pair: &ImagePair, patch: usize, seed: u64) -> Result<ImagePair> {
    let s = pair.task.scale();
    let (_, h, w) = chw(&pair.lq)?;
    if patch == 0 || !patch.is_multiple_of(s) {
        return Err(Error::Domain(format!(
            "patch {patch} is not a positive multiple of scale {s}"
        )));
    }
    let lp = patch / s;
    if lp > h || lp > w {
        return Err(Error::Domain(format!(
            "patch {patch} exceeds image {}x{}",
            h * s,
            w * s
        )));
    }
    let d = draw_patch(h, w, lp, seed);
    let apply = |img: &Tensor, f: usize| -> Result<Tensor> {
        let mut t = crop(img, d.top * f, d.left * f, lp * f, lp * f)?;
        if d.flip {
            t = hflip(&t)?;
        }
        rot90(&t, d.rotations)
    };
    Ok(ImagePair {
        hq: apply(&pair.hq, s)?,
        lq: apply(&pair.lq, 1)?,
        task: pair.task,
    })
}
