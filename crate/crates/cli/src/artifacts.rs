//! Run directories, manifests and file writers shared by the commands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use irnorm::config::RunConfig;
use irnorm::diagnostics::{write_trace_csv, TraceRecord};
use irnorm::model::{checkpoint, rpe, Model};
use irnorm::train::{DivergenceReport, EvalReport};
use serde_json::{json, Map, Value};

use crate::ConfigArgs;

pub enum CliError {
    Config(String),
    Diverged(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Diverged(m) | CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<irnorm::Error> for CliError {
    fn from(e: irnorm::Error) -> Self {
        match e {
            irnorm::Error::Config { .. } | irnorm::Error::Checkpoint(_) => {
                CliError::Config(e.to_string())
            }
            irnorm::Error::Diverged(_) => CliError::Diverged(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Reads the config file and applies `--set` overrides in order.
pub fn load_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("config `{}`: {e}", args.config.display())))?;
    let mut cfg = RunConfig::default();
    cfg.apply_text(&text)?;
    for kv in &args.overrides {
        cfg.apply_override(kv)?;
    }
    Ok(cfg.finish()?)
}

/// Worker cap from `IRNORM_THREADS`, default 1.
pub fn threads() -> CliResult<usize> {
    match std::env::var("IRNORM_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                CliError::Config(format!("IRNORM_THREADS `{v}` is not a positive integer"))
            }),
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// A fresh `<out>/<label>-<millis>-<pid>[-n]` directory. The suffix makes the
/// run id unique per invocation; the label alone keys the trace rows.
pub fn create_run_dir(out: &Path, label: &str) -> CliResult<(String, PathBuf)> {
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let base = format!("{label}-{millis}-{}", std::process::id());
    fs::create_dir_all(out)?;
    for n in 0.. {
        let id = if n == 0 {
            base.clone()
        } else {
            format!("{base}-{n}")
        };
        let dir = out.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

pub fn config_json(cfg: &RunConfig) -> Value {
    Value::Object(
        cfg.snapshot()
            .into_iter()
            .map(|(k, v)| (k, Value::String(v)))
            .collect::<Map<_, _>>(),
    )
}

pub fn write_json(path: &Path, value: &Value) -> CliResult {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> CliResult {
    let file = fs::File::create(path)?;
    write_trace_csv(std::io::BufWriter::new(file), records)?;
    Ok(())
}

pub fn report_json(report: &EvalReport) -> CliResult<Value> {
    let mut v = serde_json::to_value(report)?;
    v["status"] = json!("ok");
    Ok(v)
}

pub fn diverged_json(d: &DivergenceReport) -> Value {
    json!({
        "run_id": d.run_id,
        "status": "diverged",
        "iteration": d.iteration,
        "loss": d.loss.to_string(),
    })
}

/// Writes every RPE table of `model` under `dir`; empty when RPE is disabled.
pub fn write_rpe_exports(dir: &Path, model: &Model) -> CliResult<Vec<PathBuf>> {
    if !model.cfg.rpe {
        return Ok(Vec::new());
    }
    let mut paths = Vec::new();
    for (i, b) in model.blocks.iter().enumerate() {
        paths.extend(rpe::write_rpe(dir, i, b)?);
    }
    Ok(paths)
}

/// Checkpoint, trace, report and RPE exports of one finished run. Returns
/// the artifact map for the manifest.
pub fn write_run(
    dir: &Path,
    model: &Model,
    trace: &[TraceRecord],
    report: &EvalReport,
) -> CliResult<Value> {
    let ckpt = dir.join("checkpoint.irln");
    checkpoint::save(&ckpt, &model.state())?;
    let trace_path = dir.join("trace.csv");
    write_trace(&trace_path, trace)?;
    let report_path = dir.join("report.json");
    write_json(&report_path, &report_json(report)?)?;
    let rpe = write_rpe_exports(&dir.join("rpe"), model)?;
    Ok(json!({
        "checkpoint": ckpt,
        "trace": trace_path,
        "report": report_path,
        "rpe": rpe,
    }))
}

pub fn write_manifest(
    dir: &Path,
    run_id: &str,
    command: &str,
    cfg: &RunConfig,
    started: f64,
    status: &str,
    artifacts: Value,
) -> CliResult<PathBuf> {
    fs::write(dir.join("config.cfg"), cfg.to_text())?;
    let manifest = json!({
        "run_id": run_id,
        "command": command,
        "status": status,
        "config": config_json(cfg),
        "started_unix": started,
        "finished_unix": unix_now(),
        "artifacts": artifacts,
    });
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
