//! Measurement instruments: inter-pixel structure (homothety) checks,
//! channel entropy, feature magnitude and bias alignment, plus the trace CSV
//! they are recorded in.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numeric::Tensor;

/// Default stabilizer inside the entropy logarithm.
pub const ENTROPY_EPS: f64 = 1e-12;
/// Denominator floor of the relative homothety residual.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

pub const TRACE_HEADER: &str = "run_id,iteration,layer_index,metric,value";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    SqMean,
    Entropy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SqMean => "sqmean",
            Metric::Entropy => "entropy",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sqmean" => Ok(Metric::SqMean),
            "entropy" => Ok(Metric::Entropy),
            _ => Err(format!("unknown metric `{s}`")),
        }
    }
}

/// One diagnostic sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run_id: String,
    pub iteration: u64,
    pub layer_index: usize,
    pub metric: Metric,
    pub value: f64,
}

/// Formats an `f64` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn write_trace_csv<W: Write>(mut w: W, records: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.run_id,
            r.iteration,
            r.layer_index,
            r.metric,
            fmt_f64(r.value)
        )?;
    }
    Ok(())
}

pub fn trace_csv_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

pub fn read_trace_csv<R: BufRead>(r: R) -> Result<Vec<TraceRecord>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == TRACE_HEADER => {}
        _ => return Err(Error::Domain("trace CSV is missing its header".into())),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Domain(format!("malformed trace row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        out.push(TraceRecord {
            run_id: f[0].to_string(),
            iteration: f[1].parse().map_err(|_| bad())?,
            layer_index: f[2].parse().map_err(|_| bad())?,
            metric: f[3].parse().map_err(|_| bad())?,
            value: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Whether `Y` is a homothety image of `X` on the token set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HomothetyVerdict {
    pub fits: bool,
    /// Least-squares scale over all pairwise token differences.
    pub a_hat: f64,
    /// Largest relative residual over token pairs.
    pub max_residual: f64,
}

/// Tests whether `y_ℓ − y_k = a (x_ℓ − x_k)` for one `a > 0` and all token
/// pairs of two `[L, C]` maps.
///
/// `a_hat` minimizes the squared residual over all pairs, which equals the
/// fit over token-mean-centered maps. Each pair's residual is measured
/// relative to `a_hat · ‖x_ℓ − x_k‖` (floored at [`RESIDUAL_FLOOR`]); the
/// verdict fits when the largest one is within `tol`.
pub fn check_homothety(x: &Tensor, y: &Tensor, tol: f64) -> Result<HomothetyVerdict> {
    if x.rank() != 2 || x.shape() != y.shape() {
        return Err(shape_err(format!(
            "expected equal [L,C] maps, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let (l, c) = (x.shape()[0], x.shape()[1]);
    if l < 2 {
        return Err(Error::Domain("need at least two tokens".into()));
    }
    let (xd, yd) = (x.data(), y.data());
    let token = |d: &'_ [f64], i: usize| -> Vec<f64> { d[i * c..(i + 1) * c].to_vec() };
    if (1..l).all(|i| token(xd, i) == token(xd, 0)) {
        return Err(Error::Degenerate("all tokens are identical".into()));
    }

    let center = |d: &[f64]| {
        let mut mean = vec![0.0; c];
        for i in 0..l {
            for (m, v) in mean.iter_mut().zip(&d[i * c..(i + 1) * c]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= l as f64);
        let mut out = d.to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v -= mean[i % c];
        }
        out
    };
    let (xc, yc) = (center(xd), center(yd));
    let sxy: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum();
    let sxx: f64 = xc.iter().map(|a| a * a).sum();
    let a_hat = sxy / sxx;

    let scale = if a_hat > 0.0 { a_hat } else { 1.0 };
    let mut max_residual: f64 = 0.0;
    for i in 0..l {
        for k in (i + 1)..l {
            let mut res2 = 0.0;
            let mut dx2 = 0.0;
            for ch in 0..c {
                let dx = xd[i * c + ch] - xd[k * c + ch];
                let dy = yd[i * c + ch] - yd[k * c + ch];
                let r = dy - a_hat * dx;
                res2 += r * r;
                dx2 += dx * dx;
            }
            let rel = res2.sqrt() / (scale * dx2.sqrt()).max(RESIDUAL_FLOOR);
            max_residual = max_residual.max(rel);
        }
    }
    Ok(HomothetyVerdict {
        fits: a_hat > 0.0 && max_residual <= tol,
        a_hat,
        max_residual,
    })
}

/// Entropy of the softmax over per-channel mean magnitudes.
///
/// Magnitudes are summed in sorted order, so the result is bitwise
/// invariant to channel permutation.
pub fn entropy_of_magnitudes(magnitudes: &[f64], eps: f64) -> f64 {
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted.last().copied().unwrap_or(0.0);
    let exps: Vec<f64> = sorted.iter().map(|m| (m - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    // The eps shift can push a one-hot distribution a hair below zero.
    let h = -exps
        .iter()
        .map(|e| e / sum)
        .map(|p| p * (p + eps).ln())
        .sum::<f64>();
    h.max(0.0)
}

/// Channel entropy of a `[C, H, W]` activation: mean |x| over space per
/// channel, softmax over channels, then `−Σ p ln(p + eps)`.
pub fn channel_entropy(x: &Tensor, eps: f64) -> Result<f64> {
    if x.rank() != 3 || x.shape()[0] == 0 {
        return Err(shape_err(format!(
            "channel entropy expects [C,H,W], got {:?}",
            x.shape()
        )));
    }
    let c = x.shape()[0];
    let hw = x.shape()[1] * x.shape()[2];
    let mags: Vec<f64> = x
        .data()
        .chunks(hw.max(1))
        .map(|ch| ch.iter().map(|v| v.abs()).sum::<f64>() / hw as f64)
        .take(c)
        .collect();
    Ok(entropy_of_magnitudes(&mags, eps))
}

/// Per-channel mean |x| of a channel-last `[.., C]` feature map.
pub fn channel_magnitudes(tokens: &[f64], channels: usize) -> Vec<f64> {
    let mut mags = vec![0.0; channels];
    for (i, v) in tokens.iter().enumerate() {
        mags[i % channels] += v.abs();
    }
    let n = (tokens.len() / channels.max(1)).max(1) as f64;
    mags.iter_mut().for_each(|m| *m /= n);
    mags
}

/// Mean of squares over all elements.
pub fn feature_sqmean(x: &Tensor) -> f64 {
    sqmean(x.data())
}

pub(crate) fn sqmean(data: &[f64]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64
}

/// Pearson correlation of `|beta|` against per-channel magnitude.
pub fn bias_alignment(beta: &[f64], channel_mag: &[f64]) -> Result<f64> {
    if beta.len() != channel_mag.len() || beta.len() < 2 {
        return Err(shape_err(format!(
            "need equal lengths >= 2, got {} and {}",
            beta.len(),
            channel_mag.len()
        )));
    }
    let a: Vec<f64> = beta.iter().map(|b| b.abs()).collect();
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = channel_mag.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(channel_mag) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "an input has zero variance".into(),
        ));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}
