use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use irnorm::config::RunConfig;
use irnorm::data::{psnr, ssim, Dataset};
use irnorm::diagnostics::{bias_alignment, fmt_f64, Metric, TraceRecord};
use irnorm::model::{checkpoint, Model};
use irnorm::norms::{Mode, NormKind};
use irnorm::numeric::Precision;
use irnorm::quantize::{infer_quantized, QuantPolicy, WeightBits};
use irnorm::train::{self, aggregate, RunSummary, SeedRun};
use irnorm::{Error, Tensor};
use serde_json::{json, Value};

use crate::artifacts::*;
use crate::ConfigArgs;

fn dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    Ok(Dataset::build(&cfg.data, cfg.model.window)?)
}

fn train_label(cfg: &RunConfig) -> String {
    format!("{}-{}-s{}", cfg.model.norm, cfg.data.task, cfg.train.seed)
}

pub fn train(args: &ConfigArgs) -> CliResult {
    let cfg = load_config(args)?;
    let data = dataset(&cfg)?;
    let label = train_label(&cfg);
    let started = unix_now();
    let (run_id, dir) = create_run_dir(&args.out, &label)?;
    match train::train(&cfg.model, &cfg.train, &data, &label) {
        Ok(out) => {
            let artifacts = write_run(&dir, &out.model, &out.trace, &out.report)?;
            let manifest = write_manifest(&dir, &run_id, "train", &cfg, started, "ok", artifacts)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Err(Error::Diverged(d)) => {
            write_trace(&dir.join("trace.csv"), &d.last_trace)?;
            write_json(&dir.join("report.json"), &diverged_json(&d))?;
            let artifacts =
                json!({ "trace": dir.join("trace.csv"), "report": dir.join("report.json") });
            let manifest =
                write_manifest(&dir, &run_id, "train", &cfg, started, "diverged", artifacts)?;
            println!("{}", manifest.display());
            Err(Error::Diverged(d).into())
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&dir);
            Err(e.into())
        }
    }
}

/// Writes one directory per seed run and returns the manifest entries.
fn write_seed_runs(root: &Path, runs: &[SeedRun]) -> CliResult<Vec<Value>> {
    let mut entries = Vec::new();
    for r in runs {
        let dir = root.join(&r.run_id);
        fs::create_dir_all(&dir)?;
        let artifacts = match &r.result {
            Ok(o) => write_run(&dir, &o.model, &o.trace, &o.report)?,
            Err(d) => {
                write_trace(&dir.join("trace.csv"), &d.last_trace)?;
                write_json(&dir.join("report.json"), &diverged_json(d))?;
                json!({ "trace": dir.join("trace.csv"), "report": dir.join("report.json") })
            }
        };
        entries.push(json!({ "run_id": r.run_id, "seed": r.seed, "artifacts": artifacts }));
    }
    Ok(entries)
}

const CELL_HEADER: &str = "kind,seed,run_id,status,psnr,ssim,max_sqmean,min_entropy";
const TABLE_HEADER: &str = "kind,completed,diverged,psnr_mean,psnr_std,ssim_mean,ssim_std,max_sqmean_mean,max_sqmean_std,min_entropy_mean,min_entropy_std";

pub fn compare(args: &ConfigArgs, kinds: &[String], seeds: &[u64]) -> CliResult {
    let cfg = load_config(args)?;
    let kinds = kinds
        .iter()
        .map(|k| {
            k.parse::<NormKind>()
                .map_err(|e| CliError::Config(format!("--kinds: {e}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if kinds.len() < 2 {
        return Err(CliError::Config(
            "--kinds: need at least two norm kinds".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(CliError::Config("--seeds: need at least one seed".into()));
    }
    let data = dataset(&cfg)?;
    let threads = threads()?;
    let started = unix_now();
    let (run_id, dir) = create_run_dir(&args.out, &format!("compare-{}", cfg.data.task))?;

    let mut cells_csv = format!("{CELL_HEADER}\n");
    let mut table_csv = format!("{TABLE_HEADER}\n");
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for kind in kinds {
        let mut model_cfg = cfg.model.clone();
        model_cfg.norm = kind;
        let runs = train::run_seeds(&model_cfg, &cfg.train, &data, seeds, kind.name(), threads)?;
        cells.extend(write_seed_runs(&dir, &runs)?);
        let summaries: Vec<RunSummary> = runs.iter().map(SeedRun::summary).collect();
        for s in &summaries {
            let status = serde_json::to_value(s.status)?;
            let status = status.as_str().unwrap_or("?");
            let _ = writeln!(
                cells_csv,
                "{kind},{},{},{status},{},{},{},{}",
                s.seed,
                s.run_id,
                fmt_f64(s.psnr),
                fmt_f64(s.ssim),
                fmt_f64(s.max_sqmean),
                fmt_f64(s.min_entropy)
            );
        }
        let a = aggregate(&summaries);
        let _ = writeln!(
            table_csv,
            "{kind},{},{},{},{},{},{},{},{},{},{}",
            a.completed,
            a.diverged,
            fmt_f64(a.psnr_mean),
            fmt_f64(a.psnr_std),
            fmt_f64(a.ssim_mean),
            fmt_f64(a.ssim_std),
            fmt_f64(a.max_sqmean_mean),
            fmt_f64(a.max_sqmean_std),
            fmt_f64(a.min_entropy_mean),
            fmt_f64(a.min_entropy_std)
        );
        rows.push(json!({ "kind": kind.name(), "runs": summaries, "aggregate": a }));
    }
    fs::write(dir.join("comparison.csv"), table_csv)?;
    fs::write(dir.join("cells.csv"), cells_csv)?;
    write_json(
        &dir.join("comparison.json"),
        &json!({ "run_id": run_id, "rows": rows }),
    )?;
    let artifacts = json!({
        "comparison_json": dir.join("comparison.json"),
        "comparison_csv": dir.join("comparison.csv"),
        "cells_csv": dir.join("cells.csv"),
        "cells": cells,
    });
    let manifest = write_manifest(&dir, &run_id, "compare", &cfg, started, "ok", artifacts)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn multirun(args: &ConfigArgs, seeds: &[u64]) -> CliResult {
    let cfg = load_config(args)?;
    let data = dataset(&cfg)?;
    let threads = threads()?;
    let label = format!("{}-{}", cfg.model.norm, cfg.data.task);
    let started = unix_now();
    let (run_id, dir) = create_run_dir(&args.out, &format!("multirun-{label}"))?;
    let (report, runs) =
        match train::multirun(&cfg.model, &cfg.train, &data, seeds, &label, threads) {
            Ok(r) => r,
            Err(e) => {
                let _ = fs::remove_dir_all(&dir);
                return Err(e.into());
            }
        };
    let entries = write_seed_runs(&dir, &runs)?;
    let mut value = serde_json::to_value(&report)?;
    value["run_id"] = json!(run_id);
    write_json(&dir.join("multirun.json"), &value)?;
    let artifacts = json!({ "report": dir.join("multirun.json"), "runs": entries });
    let manifest = write_manifest(&dir, &run_id, "multirun", &cfg, started, "ok", artifacts)?;
    println!("{}", manifest.display());
    Ok(())
}

fn load_model(cfg: &RunConfig, path: &Path) -> CliResult<Model> {
    let state = checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => CliError::Config(format!("checkpoint `{}`: {io}", path.display())),
        other => other.into(),
    })?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    model.load_state(&state)?;
    Ok(model)
}

/// Held-out inputs sharing the first image's shape, stacked into a batch.
fn eval_batch(data: &Dataset) -> CliResult<Tensor> {
    let first = data
        .eval
        .first()
        .ok_or_else(|| CliError::Config("data.eval_images: the held-out set is empty".into()))?;
    let shape = first.lq.shape().to_vec();
    let same: Vec<&Tensor> = data
        .eval
        .iter()
        .map(|p| &p.lq)
        .filter(|t| t.shape() == shape)
        .collect();
    let mut values = Vec::new();
    for t in &same {
        values.extend_from_slice(t.data());
    }
    Ok(Tensor::new(
        &[same.len(), shape[0], shape[1], shape[2]],
        values,
    )?)
}

pub fn diagnose(args: &ConfigArgs, ckpt: &Path) -> CliResult {
    let cfg = load_config(args)?;
    let mut model = load_model(&cfg, ckpt)?;
    let data = dataset(&cfg)?;
    let batch = eval_batch(&data)?;
    let label = format!("diagnose-{}", cfg.model.norm);
    let started = unix_now();
    let (run_id, dir) = create_run_dir(&args.out, &label)?;

    let inspection = match model.inspect(&batch, Mode::Eval) {
        Err(Error::UninitializedRunningStats) => model.clone().inspect(&batch, Mode::Train)?,
        other => other?,
    };
    let trace: Vec<TraceRecord> = inspection
        .traces
        .iter()
        .flat_map(|t| {
            [(Metric::SqMean, t.sqmean), (Metric::Entropy, t.entropy)].map(|(metric, value)| {
                TraceRecord {
                    run_id: label.clone(),
                    iteration: 0,
                    layer_index: t.layer_index,
                    metric,
                    value,
                }
            })
        })
        .collect();
    write_trace(&dir.join("trace.csv"), &trace)?;

    let mut align_csv = String::from("layer,correlation\n");
    let mut align = Vec::new();
    for n in &inspection.norms {
        let Some(beta) = &n.beta else { continue };
        let value = match bias_alignment(beta, &n.channel_mag) {
            Ok(c) => fmt_f64(c),
            Err(Error::UndefinedCorrelation(_)) => "undefined".to_string(),
            Err(e) => return Err(e.into()),
        };
        let _ = writeln!(align_csv, "{},{value}", n.name);
        align.push(json!({ "layer": n.name, "correlation": value, "channel_mag": n.channel_mag, "beta": beta }));
    }
    fs::write(dir.join("bias_alignment.csv"), align_csv)?;
    write_json(&dir.join("bias_alignment.json"), &json!(align))?;
    let rpe = write_rpe_exports(&dir.join("rpe"), &model)?;

    let artifacts = json!({
        "checkpoint": ckpt,
        "trace": dir.join("trace.csv"),
        "bias_alignment": dir.join("bias_alignment.csv"),
        "rpe": rpe,
    });
    let manifest = write_manifest(&dir, &run_id, "diagnose", &cfg, started, "ok", artifacts)?;
    println!("{}", manifest.display());
    Ok(())
}

fn parse_policy(text: &str) -> CliResult<QuantPolicy> {
    let bad = |why: String| CliError::Config(format!("--policy `{text}`: {why}"));
    let (w, f) = text
        .split_once(':')
        .ok_or_else(|| bad("expected <weights>:<features>".into()))?;
    let weights = w.parse::<WeightBits>().map_err(bad)?;
    let features =
        Precision::parse(f).ok_or_else(|| bad(format!("unknown feature precision `{f}`")))?;
    QuantPolicy::new(weights, features).map_err(|e| bad(e.to_string()))
}

const DEFAULT_POLICIES: &[&str] = &[
    "none:f32", "none:f16", "int8:f32", "int4:f32", "int8:f16", "int4:f16",
];

pub fn quant_eval(args: &ConfigArgs, ckpt: &Path, policies: &[String]) -> CliResult {
    let cfg = load_config(args)?;
    let model = load_model(&cfg, ckpt)?;
    let data = dataset(&cfg)?;
    if data.eval.is_empty() {
        return Err(CliError::Config(
            "data.eval_images: the held-out set is empty".into(),
        ));
    }
    let mut list = vec![QuantPolicy::IDENTITY];
    let requested: Vec<String> = if policies.is_empty() {
        DEFAULT_POLICIES.iter().map(|s| s.to_string()).collect()
    } else {
        policies.to_vec()
    };
    for p in &requested {
        let p = parse_policy(p)?;
        if !list.contains(&p) {
            list.push(p);
        }
    }
    let started = unix_now();
    let (run_id, dir) = create_run_dir(&args.out, &format!("quant-{}", cfg.model.norm))?;
    let outputs_dir = dir.join("outputs");
    fs::create_dir_all(&outputs_dir)?;

    let mut rows = Vec::new();
    let mut baseline = f64::NAN;
    let mut csv = String::from("policy,weights,features,psnr,ssim,delta_psnr,nonfinite_count\n");
    for policy in list {
        let (mut psnr_sum, mut ssim_sum, mut nonfinite) = (0.0, 0.0, 0usize);
        let mut saved = Vec::new();
        for (i, pair) in data.eval.iter().enumerate() {
            let (out, nf) = infer_quantized(&model, policy, &pair.lq)?;
            psnr_sum += psnr(&out, &pair.hq)?;
            ssim_sum += ssim(&out, &pair.hq)?;
            nonfinite += nf;
            saved.push((format!("eval.{i}"), out));
        }
        let n = data.eval.len() as f64;
        let (p, s) = (psnr_sum / n, ssim_sum / n);
        if policy == QuantPolicy::IDENTITY {
            baseline = p;
        }
        let delta = baseline - p;
        let name = format!(
            "{}_{}",
            policy.weight_bits.name(),
            policy.feature_mode.name()
        );
        let out_path = outputs_dir.join(format!("{name}.irln"));
        checkpoint::save(&out_path, &saved)?;
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{},{nonfinite}",
            policy.weight_bits.name(),
            policy.feature_mode.name(),
            fmt_f64(p),
            fmt_f64(s),
            fmt_f64(delta)
        );
        rows.push(json!({
            "policy": name,
            "weights": policy.weight_bits.name(),
            "features": policy.feature_mode.name(),
            "psnr": fmt_f64(p),
            "ssim": fmt_f64(s),
            "delta_psnr": fmt_f64(delta),
            "nonfinite_count": nonfinite,
            "outputs": out_path,
        }));
    }
    fs::write(dir.join("quant.csv"), csv)?;
    let report =
        json!({ "run_id": run_id, "task": cfg.data.task, "checkpoint": ckpt, "rows": rows });
    write_json(&dir.join("quant.json"), &report)?;
    let artifacts = json!({ "report": dir.join("quant.json"), "csv": dir.join("quant.csv"), "outputs": outputs_dir });
    let manifest = write_manifest(&dir, &run_id, "quant-eval", &cfg, started, "ok", artifacts)?;
    println!("{}", manifest.display());
    Ok(())
}
