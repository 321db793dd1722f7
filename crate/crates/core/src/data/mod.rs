//! Degradation pipelines, patch sampling, datasets and fidelity metrics.

mod augment;
mod io;
mod metrics;
mod noise;
mod resize;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub use augment::{crop, draw_patch, hflip, rot90, sample_patch, PatchDraw};
pub use io::{read_png, write_png};
pub use metrics::{psnr, ssim};
pub use noise::add_gaussian_noise;
pub use resize::bicubic_downsample;
pub use synth::synthetic_image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "sr2")]
    Sr2,
    #[serde(rename = "sr4")]
    Sr4,
    #[serde(rename = "dn15")]
    Dn15,
    #[serde(rename = "dn25")]
    Dn25,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Sr2, Task::Sr4, Task::Dn15, Task::Dn25];

    pub fn name(self) -> &'static str {
        match self {
            Task::Sr2 => "sr2",
            Task::Sr4 => "sr4",
            Task::Dn15 => "dn15",
            Task::Dn25 => "dn25",
        }
    }

    /// Upscaling factor the model must provide.
    pub fn scale(self) -> usize {
        match self {
            Task::Sr2 => 2,
            Task::Sr4 => 4,
            Task::Dn15 | Task::Dn25 => 1,
        }
    }

    /// Noise level on the 0–255 scale, zero for super-resolution.
    pub fn sigma255(self) -> f64 {
        match self {
            Task::Dn15 => 15.0,
            Task::Dn25 => 25.0,
            Task::Sr2 | Task::Sr4 => 0.0,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task `{s}` (expected sr2, sr4, dn15 or dn25)"))
    }
}

/// A high-quality target and its degraded observation.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub hq: Tensor,
    pub lq: Tensor,
    pub task: Task,
}

/// Degrades `hq` for `task`. Super-resolution inputs are clamped to `[0, 1]`;
/// noisy inputs are left unclamped.
pub fn degrade(hq: &Tensor, task: Task, seed: u64) -> Result<ImagePair> {
    let lq = match task {
        Task::Sr2 | Task::Sr4 => bicubic_downsample(hq, task.scale())?.map(|v| v.clamp(0.0, 1.0)),
        Task::Dn15 | Task::Dn25 => add_gaussian_noise(hq, task.sigma255(), seed),
    };
    Ok(ImagePair {
        hq: hq.clone(),
        lq,
        task,
    })
}

/// SplitMix64 finalizer of `base ^ index`-mixed state; used to derive
/// per-sample and per-step seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic,
    /// A directory holding `hq/*.png`.
    Dir(PathBuf),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synthetic => f.write_str("synthetic"),
            DataSource::Dir(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub task: Task,
    /// Synthetic training images.
    pub train_images: usize,
    /// Held-out images (synthetic count, or the last N files of a directory).
    pub eval_images: usize,
    /// Side of synthetic training images.
    pub image_size: usize,
    /// Side of synthetic held-out images.
    pub eval_size: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            task: Task::Sr2,
            train_images: 16,
            eval_images: 8,
            image_size: 64,
            eval_size: 32,
            seed: 0,
        }
    }
}

/// Training images plus a fixed held-out evaluation set.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub task: Task,
    train_hq: Vec<Tensor>,
    /// Pre-degraded training inputs for super-resolution; noise is drawn
    /// per sample instead.
    train_lq: Option<Vec<Tensor>>,
    pub eval: Vec<ImagePair>,
}

fn crop_to_multiple(img: &Tensor, m: usize) -> Result<Tensor> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    crop(img, 0, 0, h - h % m, w - w % m)
}

impl Dataset {
    /// Builds a dataset whose held-out images are cropped so that the
    /// degraded input is a multiple of `align` pixels on each side.
    pub fn build(cfg: &DataConfig, align: usize) -> Result<Self> {
        let s = cfg.task.scale();
        let eval_multiple = s * align.max(1);
        let bad = |key: &str, reason: String| Error::Config {
            key: key.into(),
            reason,
        };
        let (train, eval) = match &cfg.source {
            DataSource::Synthetic => {
                if cfg.train_images == 0 {
                    return Err(bad("data.train_images", "must be positive".into()));
                }
                if cfg.image_size == 0 || !cfg.image_size.is_multiple_of(s) {
                    return Err(bad(
                        "data.image_size",
                        format!("must be a positive multiple of scale {s}"),
                    ));
                }
                if cfg.eval_size == 0 || !cfg.eval_size.is_multiple_of(eval_multiple) {
                    return Err(bad(
                        "data.eval_size",
                        format!("must be a positive multiple of {eval_multiple}"),
                    ));
                }
                let train = (0..cfg.train_images as u64)
                    .map(|i| synthetic_image(cfg.image_size, derive_seed(cfg.seed, i)))
                    .collect();
                let eval = (0..cfg.eval_images as u64)
                    .map(|i| synthetic_image(cfg.eval_size, derive_seed(cfg.seed ^ 0xE7A1, i)))
                    .collect();
                (train, eval)
            }
            DataSource::Dir(dir) => {
                let hq_dir = dir.join("hq");
                let mut files: Vec<PathBuf> = std::fs::read_dir(&hq_dir)
                    .map_err(|e| bad("data.source", format!("{}: {e}", hq_dir.display())))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                    .collect();
                files.sort();
                if files.len() <= cfg.eval_images {
                    return Err(bad(
                        "data.eval_images",
                        format!(
                            "{} holds {} images, need more than {}",
                            hq_dir.display(),
                            files.len(),
                            cfg.eval_images
                        ),
                    ));
                }
                let split = files.len() - cfg.eval_images;
                let train = files[..split]
                    .iter()
                    .map(|p| crop_to_multiple(&read_png(p)?, s))
                    .collect::<Result<Vec<_>>>()?;
                let eval = files[split..]
                    .iter()
                    .map(|p| crop_to_multiple(&read_png(p)?, eval_multiple))
                    .collect::<Result<Vec<_>>>()?;
                (train, eval)
            }
        };
        let train_lq = match cfg.task.scale() {
            1 => None,
            _ => Some(
                train
                    .iter()
                    .map(|hq| Ok(degrade(hq, cfg.task, 0)?.lq))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let eval = eval
            .iter()
            .enumerate()
            .map(|(i, hq)| degrade(hq, cfg.task, derive_seed(cfg.seed ^ 0x7E57, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            task: cfg.task,
            train_hq: train,
            train_lq,
            eval,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train_hq.len()
    }

    /// Smallest training image side, the largest admissible patch.
    pub fn min_side(&self) -> usize {
        self.train_hq
            .iter()
            .map(|t| t.shape()[1].min(t.shape()[2]))
            .min()
            .unwrap_or(0)
    }

    /// Draws `batch` training pairs (with replacement) and stacks their
    /// patches into `([B,3,p/s,p/s], [B,3,p,p])`.
    pub fn sample_batch(&self, batch: usize, patch: usize, seed: u64) -> Result<(Tensor, Tensor)> {
        if self.train_hq.is_empty() {
            return Err(Error::Domain("empty training set".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lq = Vec::new();
        let mut hq = Vec::new();
        for i in 0..batch {
            let idx = rng.random_range(0..self.train_hq.len());
            let sample_seed = derive_seed(seed, i as u64);
            let pair = match &self.train_lq {
                Some(lqs) => ImagePair {
                    hq: self.train_hq[idx].clone(),
                    lq: lqs[idx].clone(),
                    task: self.task,
                },
                None => degrade(&self.train_hq[idx], self.task, sample_seed ^ 0xD1)?,
            };
            let p = sample_patch(&pair, patch, sample_seed)?;
            lq.extend_from_slice(p.lq.data());
            hq.extend_from_slice(p.hq.data());
        }
        let lp = patch / self.task.scale();
        Ok((
            Tensor::new(&[batch, 3, lp, lp], lq)?,
            Tensor::new(&[batch, 3, patch, patch], hq)?,
        ))
    }
}
