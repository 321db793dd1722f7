//! Training loop: Adam with step decay, L1 loss with an optional
//! feature-statistics KL term, optional global-norm clipping, periodic
//! tracing and held-out evaluation.

mod adam;
mod multirun;
mod report;

use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, psnr, ssim, Dataset, Task};
use crate::diagnostics::{Metric, TraceRecord};
use crate::error::{config_err, Error, Result};
use crate::model::{BlockTrace, Model, ModelConfig};
use crate::norms::Mode;
use crate::numeric::{Graph, Precision, Tensor, Var};

pub use adam::{adam_step, AdamState};
pub use multirun::{
    aggregate, multirun, run_seeds, seed_run_ids, Aggregate, MultirunReport, RunStatus, RunSummary,
    SeedRun,
};
pub use report::EvalReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iters: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub batch: usize,
    /// High-quality crop side; the input patch is `patch / scale`.
    pub patch: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub kld_weight: Option<f64>,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    /// Trace every N-th iteration; 0 disables tracing.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 3000,
            lr: 2e-4,
            betas: (0.9, 0.99),
            batch: 4,
            patch: 32,
            seed: 0,
            grad_clip: None,
            kld_weight: None,
            milestones: vec![2500],
            gamma: 0.5,
            trace_every: 50,
        }
    }
}

pub const ADAM_EPS: f64 = 1e-8;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err("train.lr", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(config_err("train.gamma", "must lie in [0, 1]"));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err(
                "train.milestones",
                "must be strictly increasing",
            ));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(config_err("train.betas", "each beta must lie in [0, 1)"));
        }
        if self.batch == 0 {
            return Err(config_err("train.batch", "must be positive"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(config_err("train.grad_clip", "must be positive"));
        }
        if self
            .kld_weight
            .is_some_and(|w| !(w >= 0.0 && w.is_finite()))
        {
            return Err(config_err(
                "train.kld_weight",
                "must be a finite non-negative number",
            ));
        }
        Ok(())
    }
}

/// Step-decayed learning rate: `lr · gamma^(milestones ≤ step)`.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| m <= step).count();
    cfg.lr * cfg.gamma.powi(passed as i32)
}

/// Why and where a run stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub run_id: String,
    pub iteration: usize,
    pub loss: f64,
    /// Records emitted up to the failure, including the failing step's.
    pub last_trace: Vec<TraceRecord>,
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<TraceRecord>,
    /// Training loss of every step.
    pub losses: Vec<f64>,
    pub report: EvalReport,
}

fn trace_records(run_id: &str, iteration: usize, traces: &[BlockTrace]) -> Vec<TraceRecord> {
    traces
        .iter()
        .flat_map(|t| {
            [(Metric::SqMean, t.sqmean), (Metric::Entropy, t.entropy)].map(|(metric, value)| {
                TraceRecord {
                    run_id: run_id.to_string(),
                    iteration: iteration as u64,
                    layer_index: t.layer_index,
                    metric,
                    value,
                }
            })
        })
        .collect()
}

/// KL divergence of `N(μ, σ²)` fitted to all elements of `f` from `N(0, 1)`.
fn kld_term(g: &mut Graph, f: Var) -> Result<Var> {
    let mu = g.mean(f);
    let sq = g.square(f);
    let second = g.mean(sq);
    let mu2 = g.square(mu);
    let var = g.sub(second, mu2)?;
    let log_var = g.ln(var);
    let t = g.add_scalar(second, -1.0);
    let t = g.sub(t, log_var)?;
    Ok(g.scale(t, 0.5))
}

pub(crate) fn check_compat(model: &ModelConfig, train: &TrainConfig, task: Task) -> Result<()> {
    model.validate()?;
    train.validate()?;
    if model.scale != task.scale() {
        return Err(config_err(
            "model.scale",
            format!(
                "task {task} needs scale {}, got {}",
                task.scale(),
                model.scale
            ),
        ));
    }
    let unit = task.scale() * model.window;
    if train.patch == 0 || !train.patch.is_multiple_of(unit) {
        return Err(config_err(
            "train.patch",
            format!("must be a positive multiple of scale × window = {unit}"),
        ));
    }
    Ok(())
}

/// Trains a fresh model seeded by `cfg.seed`.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    run_id: &str,
) -> Result<TrainOutcome> {
    check_compat(model_cfg, cfg, data.task)?;
    if data.train_len() == 0 {
        return Err(Error::Domain("empty training set".into()));
    }
    if cfg.patch > data.min_side() {
        return Err(config_err(
            "train.patch",
            format!("exceeds the smallest training image ({})", data.min_side()),
        ));
    }
    let mut model = Model::new(model_cfg.clone(), cfg.seed)?;
    let shapes: Vec<Vec<usize>> = model
        .named_params()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let mut adam = AdamState::new(&shapes, cfg.betas, ADAM_EPS);
    let mut trace = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iters);

    for step in 0..cfg.iters {
        let iteration = step + 1;
        let (lq, hq) =
            data.sample_batch(cfg.batch, cfg.patch, derive_seed(cfg.seed, step as u64))?;
        let mut g = Graph::new(Precision::F64);
        let vars = model.bind(&mut g);
        let x = g.constant(&lq);
        let target = g.constant(&hq);
        let fwd = model.forward_graph(&mut g, &vars, x, Mode::Train)?;
        let diff = g.sub(fwd.output, target)?;
        let abs = g.abs(diff);
        let mut loss = g.mean(abs);
        if let Some(w) = cfg.kld_weight.filter(|&w| w != 0.0) {
            for &f in &fwd.block_outputs {
                let k = kld_term(&mut g, f)?;
                let k = g.scale(k, w);
                loss = g.add(loss, k)?;
            }
        }
        let loss_value = g.value(loss).data()[0];
        losses.push(loss_value);
        let trace_step = cfg.trace_every > 0 && iteration % cfg.trace_every == 0;
        if trace_step || !loss_value.is_finite() {
            trace.extend(trace_records(
                run_id,
                iteration,
                &model.block_traces(&g, &fwd),
            ));
        }
        if !loss_value.is_finite() {
            return Err(Error::Diverged(Box::new(DivergenceReport {
                run_id: run_id.to_string(),
                iteration,
                loss: loss_value,
                last_trace: trace,
            })));
        }

        let mut grads = g.backward(loss)?;
        let mut flat: Vec<Vec<f64>> = vars
            .named
            .iter()
            .map(|(_, v)| {
                grads
                    .take(*v)
                    .unwrap_or_else(|| vec![0.0; g.value(*v).numel()])
            })
            .collect();
        if let Some(clip) = cfg.grad_clip {
            let norm = flat.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            if norm > clip {
                let k = clip / norm;
                flat.iter_mut().flatten().for_each(|v| *v *= k);
            }
        }
        drop(g);
        let mut params: Vec<&mut Tensor> = model
            .named_params_mut()
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        adam_step(&mut params, &flat, &mut adam, lr_at(cfg, step));
    }

    let report = evaluate(&mut model, data, run_id, &trace)?;
    Ok(TrainOutcome {
        model,
        trace,
        losses,
        report,
    })
}

/// Eval-mode inference; BatchNorm without running statistics falls back to
/// batch statistics on a throwaway copy.
pub fn eval_forward(
    model: &mut Model,
    lq: &Tensor,
    precision: Precision,
    trace: bool,
) -> Result<crate::model::ForwardOutput> {
    match model.forward(lq, Mode::Eval, precision, trace) {
        Err(Error::UninitializedRunningStats) => {
            model.clone().forward(lq, Mode::Train, precision, trace)
        }
        other => other,
    }
}

/// PSNR/SSIM over the held-out set plus feature statistics. `max_sqmean`
/// and `min_entropy` summarize `trace`; with an empty trace they come from
/// the held-out forward passes instead.
pub fn evaluate(
    model: &mut Model,
    data: &Dataset,
    run_id: &str,
    trace: &[TraceRecord],
) -> Result<EvalReport> {
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut nonfinite = 0;
    let mut eval_traces = Vec::new();
    for pair in &data.eval {
        let out = eval_forward(model, &pair.lq, Precision::F64, trace.is_empty())?;
        psnr_sum += psnr(&out.output, &pair.hq)?;
        ssim_sum += ssim(&out.output, &pair.hq)?;
        nonfinite += out.nonfinite;
        eval_traces.extend(trace_records(run_id, 0, &out.traces));
    }
    let n = data.eval.len() as f64;
    let source = if trace.is_empty() {
        &eval_traces[..]
    } else {
        trace
    };
    let (max_sqmean, min_entropy) = summarize(source);
    Ok(EvalReport {
        run_id: run_id.to_string(),
        task: data.task,
        psnr: psnr_sum / n,
        ssim: ssim_sum / n,
        max_sqmean,
        min_entropy,
        nonfinite_count: nonfinite,
    })
}

/// Largest squared mean and smallest entropy among `records`
/// (NaN when there are none).
pub fn summarize(records: &[TraceRecord]) -> (f64, f64) {
    let pick = |m: Metric| {
        records
            .iter()
            .filter(move |r| r.metric == m)
            .map(|r| r.value)
    };
    let max = pick(Metric::SqMean).fold(f64::NAN, f64::max);
    let min = pick(Metric::Entropy).fold(f64::NAN, f64::min);
    (max, min)
}
