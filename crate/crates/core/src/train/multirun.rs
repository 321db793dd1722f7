use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::report::lossless_f64;
use super::{train, DivergenceReport, TrainConfig, TrainOutcome};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged,
}

/// Per-seed row of a multi-seed study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub run_id: String,
    pub status: RunStatus,
    /// Iteration of the non-finite loss for diverged runs.
    pub diverged_at: Option<usize>,
    #[serde(with = "lossless_f64")]
    pub psnr: f64,
    #[serde(with = "lossless_f64")]
    pub ssim: f64,
    #[serde(with = "lossless_f64")]
    pub max_sqmean: f64,
    #[serde(with = "lossless_f64")]
    pub min_entropy: f64,
}

/// Mean and population standard deviation over completed runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub completed: usize,
    pub diverged: usize,
    #[serde(with = "lossless_f64")]
    pub psnr_mean: f64,
    #[serde(with = "lossless_f64")]
    pub psnr_std: f64,
    #[serde(with = "lossless_f64")]
    pub ssim_mean: f64,
    #[serde(with = "lossless_f64")]
    pub ssim_std: f64,
    #[serde(with = "lossless_f64")]
    pub max_sqmean_mean: f64,
    #[serde(with = "lossless_f64")]
    pub max_sqmean_std: f64,
    #[serde(with = "lossless_f64")]
    pub min_entropy_mean: f64,
    #[serde(with = "lossless_f64")]
    pub min_entropy_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultirunReport {
    pub runs: Vec<RunSummary>,
    pub aggregate: Aggregate,
}

/// One seed's full result, kept so callers can write its artifacts.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub run_id: String,
    pub result: std::result::Result<TrainOutcome, DivergenceReport>,
}

impl SeedRun {
    pub fn summary(&self) -> RunSummary {
        match &self.result {
            Ok(o) => RunSummary {
                seed: self.seed,
                run_id: self.run_id.clone(),
                status: RunStatus::Ok,
                diverged_at: None,
                psnr: o.report.psnr,
                ssim: o.report.ssim,
                max_sqmean: o.report.max_sqmean,
                min_entropy: o.report.min_entropy,
            },
            Err(d) => {
                let (max_sqmean, min_entropy) = super::summarize(&d.last_trace);
                RunSummary {
                    seed: self.seed,
                    run_id: self.run_id.clone(),
                    status: RunStatus::Diverged,
                    diverged_at: Some(d.iteration),
                    psnr: f64::NAN,
                    ssim: f64::NAN,
                    max_sqmean,
                    min_entropy,
                }
            }
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates the completed rows of `runs`; diverged rows are only counted.
pub fn aggregate(runs: &[RunSummary]) -> Aggregate {
    let ok: Vec<&RunSummary> = runs.iter().filter(|r| r.status == RunStatus::Ok).collect();
    let col = |f: fn(&RunSummary) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
    let (psnr_mean, psnr_std) = col(|r| r.psnr);
    let (ssim_mean, ssim_std) = col(|r| r.ssim);
    let (max_sqmean_mean, max_sqmean_std) = col(|r| r.max_sqmean);
    let (min_entropy_mean, min_entropy_std) = col(|r| r.min_entropy);
    Aggregate {
        completed: ok.len(),
        diverged: runs.len() - ok.len(),
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
        max_sqmean_mean,
        max_sqmean_std,
        min_entropy_mean,
        min_entropy_std,
    }
}

/// Run ids `<label>-s<seed>`, with `-<k>` appended to the k-th repeat of a seed.
pub fn seed_run_ids(label: &str, seeds: &[u64]) -> Vec<String> {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    seeds
        .iter()
        .map(|&s| {
            let k = seen.entry(s).or_insert(0);
            let id = if *k == 0 {
                format!("{label}-s{s}")
            } else {
                format!("{label}-s{s}-{k}")
            };
            *k += 1;
            id
        })
        .collect()
}

/// Trains one run per seed on up to `threads` workers. Runs are isolated, so
/// results do not depend on the worker count. Divergence is recorded per run;
/// any other error aborts.
pub fn run_seeds(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
    label: &str,
    threads: usize,
) -> Result<Vec<SeedRun>> {
    let ids = seed_run_ids(label, seeds);
    let jobs: Vec<(u64, String)> = seeds.iter().copied().zip(ids).collect();
    let run_one = |(seed, run_id): &(u64, String)| -> Result<SeedRun> {
        let cfg = TrainConfig {
            seed: *seed,
            ..cfg.clone()
        };
        let result = match train(model_cfg, &cfg, data, run_id) {
            Ok(o) => Ok(o),
            Err(Error::Diverged(d)) => Err(*d),
            Err(e) => return Err(e),
        };
        Ok(SeedRun {
            seed: *seed,
            run_id: run_id.clone(),
            result,
        })
    };
    let workers = threads.clamp(1, jobs.len().max(1));
    let results: Vec<Result<SeedRun>> = if workers == 1 {
        jobs.iter().map(run_one).collect()
    } else {
        let mut slots: Vec<Option<Result<SeedRun>>> = (0..jobs.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let jobs = &jobs;
                    let run_one = &run_one;
                    scope.spawn(move || {
                        (w..jobs.len())
                            .step_by(workers)
                            .map(|i| (i, run_one(&jobs[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every job ran"))
            .collect()
    };
    results.into_iter().collect()
}

/// [`run_seeds`] over at least two seeds, plus the aggregate report.
pub fn multirun(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
    label: &str,
    threads: usize,
) -> Result<(MultirunReport, Vec<SeedRun>)> {
    if seeds.len() < 2 {
        return Err(Error::Config {
            key: "seeds".into(),
            reason: "need at least two seeds".into(),
        });
    }
    let runs = run_seeds(model_cfg, cfg, data, seeds, label, threads)?;
    let summaries: Vec<RunSummary> = runs.iter().map(SeedRun::summary).collect();
    let aggregate = aggregate(&summaries);
    Ok((
        MultirunReport {
            runs: summaries,
            aggregate,
        },
        runs,
    ))
}
