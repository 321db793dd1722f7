//! Flat `key = value` run configuration with dotted keys.
//!
//! Lines starting with `#` and blank lines are ignored. Lists are
//! comma-separated; optional numbers accept `none`.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DataConfig, DataSource, Task};
use crate::error::{config_err, Result};
use crate::model::ModelConfig;
use crate::norms::NormKind;
use crate::train::TrainConfig;

/// Every recognized key, in snapshot order.
pub const KEYS: &[&str] = &[
    "model.embed_dim",
    "model.depths",
    "model.heads",
    "model.window",
    "model.mlp_ratio",
    "model.rpe",
    "norm.kind",
    "norm.eps",
    "train.iters",
    "train.lr",
    "train.betas",
    "train.batch",
    "train.patch",
    "train.seed",
    "train.grad_clip",
    "train.kld_weight",
    "train.milestones",
    "train.gamma",
    "train.trace_every",
    "data.source",
    "data.task",
    "data.train_images",
    "data.eval_images",
    "data.image_size",
    "data.eval_size",
    "data.seed",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse::<T>()
        .map_err(|e| config_err(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_opt(key: &str, value: &str) -> Result<Option<f64>> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(key, format!("`{value}` is not a boolean"))),
    }
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// Parses config text on top of the defaults and validates the result.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.finish()
    }

    /// Applies `key = value` lines without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("line {} is not `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| config_err(kv, "override must be `key=value`"))?;
        self.set(key.trim(), value.trim())
    }

    /// Derives dependent fields and validates everything.
    pub fn finish(mut self) -> Result<Self> {
        self.model.scale = self.data.task.scale();
        self.model.validate()?;
        self.train.validate()?;
        crate::train::check_compat(&self.model, &self.train, self.data.task)?;
        Ok(self)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t, d) = (&mut self.model, &mut self.train, &mut self.data);
        match key {
            "model.embed_dim" => m.embed_dim = parse(key, value)?,
            "model.depths" => m.depths = parse_list(key, value)?,
            "model.heads" => m.heads = parse_list(key, value)?,
            "model.window" => m.window = parse(key, value)?,
            "model.mlp_ratio" => m.mlp_ratio = parse(key, value)?,
            "model.rpe" => m.rpe = parse_bool(key, value)?,
            "norm.kind" => m.norm = parse::<NormKind>(key, value)?,
            "norm.eps" => m.norm_eps = parse(key, value)?,
            "train.iters" => t.iters = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.betas" => match parse_list::<f64>(key, value)?[..] {
                [b1, b2] => t.betas = (b1, b2),
                _ => return Err(config_err(key, "expected two comma-separated values")),
            },
            "train.batch" => t.batch = parse(key, value)?,
            "train.patch" => t.patch = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.grad_clip" => t.grad_clip = parse_opt(key, value)?,
            "train.kld_weight" => t.kld_weight = parse_opt(key, value)?,
            "train.milestones" => t.milestones = parse_list(key, value)?,
            "train.gamma" => t.gamma = parse(key, value)?,
            "train.trace_every" => t.trace_every = parse(key, value)?,
            "data.source" => {
                d.source = match value {
                    "synthetic" => DataSource::Synthetic,
                    "" => return Err(config_err(key, "empty source")),
                    dir => DataSource::Dir(PathBuf::from(dir)),
                }
            }
            "data.task" => d.task = parse::<Task>(key, value)?,
            "data.train_images" => d.train_images = parse(key, value)?,
            "data.eval_images" => d.eval_images = parse(key, value)?,
            "data.image_size" => d.image_size = parse(key, value)?,
            "data.eval_size" => d.eval_size = parse(key, value)?,
            "data.seed" => d.seed = parse(key, value)?,
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// The full resolved key/value set, in [`KEYS`] order.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let (m, t, d) = (&self.model, &self.train, &self.data);
        let values = [
            m.embed_dim.to_string(),
            join(&m.depths),
            join(&m.heads),
            m.window.to_string(),
            m.mlp_ratio.to_string(),
            m.rpe.to_string(),
            m.norm.to_string(),
            m.norm_eps.to_string(),
            t.iters.to_string(),
            t.lr.to_string(),
            format!("{},{}", t.betas.0, t.betas.1),
            t.batch.to_string(),
            t.patch.to_string(),
            t.seed.to_string(),
            opt(t.grad_clip),
            opt(t.kld_weight),
            join(&t.milestones),
            t.gamma.to_string(),
            t.trace_every.to_string(),
            d.source.to_string(),
            d.task.to_string(),
            d.train_images.to_string(),
            d.eval_images.to_string(),
            d.image_size.to_string(),
            d.eval_size.to_string(),
            d.seed.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    /// Config text that parses back to `self`.
    pub fn to_text(&self) -> String {
        self.snapshot()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
