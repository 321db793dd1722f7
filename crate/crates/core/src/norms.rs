//! Normalization and residual-stabilization schemes.
//!
//! Every scheme operates on token features laid out as `[B, L, C]` (a bare
//! `[L, C]` map is treated as `B = 1`). Statistics are computed inside the
//! differentiation graph, so gradients flow through the mean and variance.
//!
//! | kind | statistic granularity |
//! |------|-----------------------|
//! | `LN`, `LayerScale` | per token, over channels |
//! | `RMSNorm` | per token, root mean square, no centering |
//! | `LNStar`, `iLN` | per image, over all tokens and channels |
//! | `InstanceNorm` | per image and channel, over tokens |
//! | `BatchNorm` | per channel, over batch and tokens |
//! | `ReZero`, `NoneNorm` | none |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numeric::{Graph, Precision, Tensor, Var};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const LAYERSCALE_INIT: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "LN")]
    Ln,
    #[serde(rename = "LNStar")]
    LnStar,
    #[serde(rename = "iLN")]
    ILn,
    #[serde(rename = "RMSNorm")]
    RmsNorm,
    InstanceNorm,
    BatchNorm,
    ReZero,
    LayerScale,
    NoneNorm,
}

impl NormKind {
    pub const ALL: [NormKind; 9] = [
        NormKind::Ln,
        NormKind::LnStar,
        NormKind::ILn,
        NormKind::RmsNorm,
        NormKind::InstanceNorm,
        NormKind::BatchNorm,
        NormKind::ReZero,
        NormKind::LayerScale,
        NormKind::NoneNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormKind::Ln => "LN",
            NormKind::LnStar => "LNStar",
            NormKind::ILn => "iLN",
            NormKind::RmsNorm => "RMSNorm",
            NormKind::InstanceNorm => "InstanceNorm",
            NormKind::BatchNorm => "BatchNorm",
            NormKind::ReZero => "ReZero",
            NormKind::LayerScale => "LayerScale",
            NormKind::NoneNorm => "NoneNorm",
        }
    }

    fn has_gamma(self) -> bool {
        !matches!(self, NormKind::ReZero | NormKind::NoneNorm)
    }

    fn has_beta(self) -> bool {
        self.has_gamma() && self != NormKind::RmsNorm
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NormKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown normalization `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One normalization layer: its scheme, hyperparameters and state.
#[derive(Clone, Debug)]
pub struct NormSpec {
    pub kind: NormKind,
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub layerscale_diag: Tensor,
    pub rezero_scalar: Tensor,
    pub running_mean: Option<Tensor>,
    pub running_var: Option<Tensor>,
}

/// Graph handles of a [`NormSpec`]'s learnable parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct NormVars {
    pub gamma: Option<Var>,
    pub beta: Option<Var>,
    pub layerscale_diag: Option<Var>,
    pub rezero_scalar: Option<Var>,
}

/// Result of [`NormSpec::normalize`] on a graph.
#[derive(Clone, Copy, Debug)]
pub struct NormOutputVars {
    /// Normalized and affine-transformed features.
    pub y: Var,
    /// Normalized features before the affine step.
    pub xhat: Var,
    pub mu: Option<Var>,
    pub sigma2: Option<Var>,
    /// `sqrt(sigma2 + eps)` per statistic group; `None` means 1.
    pub rescale: Option<Var>,
}

/// Value-level counterpart of [`NormOutputVars`].
#[derive(Clone, Debug)]
pub struct NormOutput {
    pub y: Tensor,
    pub xhat: Tensor,
    pub mu: Option<Tensor>,
    pub sigma2: Option<Tensor>,
    pub rescale: Tensor,
}

/// Output of [`NormSpec::block_combine`].
#[derive(Clone, Copy, Debug)]
pub struct Combined {
    pub out: Var,
    /// Output of the sub-layer before any rescaling or residual add.
    pub branch: Var,
    pub norm: NormOutputVars,
}

/// Which elements of a `[B, L, C]` tensor share a statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Granularity {
    PerToken,
    PerImage,
    PerImageChannel,
    PerChannel,
}

struct Groups {
    map: Arc<[usize]>,
    groups: usize,
    count: usize,
}

fn groups(gran: Granularity, b: usize, l: usize, c: usize) -> Groups {
    let n = b * l * c;
    let (map, groups, count): (Vec<usize>, usize, usize) = match gran {
        Granularity::PerToken => ((0..n).map(|i| i / c).collect(), b * l, c),
        Granularity::PerImage => ((0..n).map(|i| i / (l * c)).collect(), b, l * c),
        Granularity::PerImageChannel => (
            (0..n).map(|i| (i / (l * c)) * c + i % c).collect(),
            b * c,
            l,
        ),
        Granularity::PerChannel => ((0..n).map(|i| i % c).collect(), c, b * l),
    };
    Groups {
        map: map.into(),
        groups,
        count,
    }
}

fn dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [l, c] => Ok((1, l, c)),
        [b, l, c] => Ok((b, l, c)),
        _ => Err(shape_err(format!(
            "normalization expects [L,C] or [B,L,C], got {shape:?}"
        ))),
    }
}

/// Per-channel broadcast index for a tensor with `numel` elements and `c` channels.
pub(crate) fn channel_index(numel: usize, c: usize) -> Arc<[usize]> {
    (0..numel).map(|i| i % c).collect()
}

/// Broadcasts a length-`c` vector over the trailing channel axis of `like`.
pub(crate) fn expand_channels(g: &mut Graph, v: Var, like: Var) -> Result<Var> {
    let c = g.value(v).numel();
    let shape = g.shape(like).to_vec();
    let numel = g.value(like).numel();
    g.gather(v, channel_index(numel, c), &shape)
}

impl NormSpec {
    pub fn new(kind: NormKind, channels: usize) -> Self {
        Self::with_epsilon(kind, channels, DEFAULT_EPSILON)
    }

    pub fn with_epsilon(kind: NormKind, channels: usize, epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        NormSpec {
            kind,
            channels,
            epsilon,
            momentum: DEFAULT_MOMENTUM,
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            layerscale_diag: Tensor::full(&[channels], LAYERSCALE_INIT),
            rezero_scalar: Tensor::zeros(&[1]),
            running_mean: None,
            running_var: None,
        }
    }

    fn granularity(&self) -> Option<Granularity> {
        match self.kind {
            NormKind::Ln | NormKind::LayerScale | NormKind::RmsNorm => Some(Granularity::PerToken),
            NormKind::LnStar | NormKind::ILn => Some(Granularity::PerImage),
            NormKind::InstanceNorm => Some(Granularity::PerImageChannel),
            NormKind::BatchNorm => Some(Granularity::PerChannel),
            NormKind::ReZero | NormKind::NoneNorm => None,
        }
    }

    /// Learnable tensors of this scheme, by local name.
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = Vec::new();
        if self.kind.has_gamma() {
            out.push(("gamma", &self.gamma));
        }
        if self.kind.has_beta() {
            out.push(("beta", &self.beta));
        }
        if self.kind == NormKind::LayerScale {
            out.push(("layerscale_diag", &self.layerscale_diag));
        }
        if self.kind == NormKind::ReZero {
            out.push(("rezero_scalar", &self.rezero_scalar));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let kind = self.kind;
        let mut out = Vec::new();
        if kind.has_gamma() {
            out.push(("gamma", &mut self.gamma));
        }
        if kind.has_beta() {
            out.push(("beta", &mut self.beta));
        }
        if kind == NormKind::LayerScale {
            out.push(("layerscale_diag", &mut self.layerscale_diag));
        }
        if kind == NormKind::ReZero {
            out.push(("rezero_scalar", &mut self.rezero_scalar));
        }
        out
    }

    /// Registers the learnable parameters on `g`.
    pub fn bind(&self, g: &mut Graph) -> NormVars {
        let mut vars = NormVars::default();
        for (name, t) in self.params() {
            let v = g.param(t);
            match name {
                "gamma" => vars.gamma = Some(v),
                "beta" => vars.beta = Some(v),
                "layerscale_diag" => vars.layerscale_diag = Some(v),
                _ => vars.rezero_scalar = Some(v),
            }
        }
        vars
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<(usize, usize, usize)> {
        let (b, l, c) = dims(g.shape(x))?;
        if c != self.channels {
            return Err(shape_err(format!(
                "expected {} channels, got {c}",
                self.channels
            )));
        }
        Ok((b, l, c))
    }

    /// Normalizes `x` on the graph. In train mode BatchNorm updates its
    /// running statistics from the batch.
    pub fn normalize(
        &mut self,
        g: &mut Graph,
        vars: &NormVars,
        x: Var,
        mode: Mode,
    ) -> Result<NormOutputVars> {
        let (b, l, c) = self.check_input(g, x)?;
        let Some(gran) = self.granularity() else {
            return Ok(NormOutputVars {
                y: x,
                xhat: x,
                mu: None,
                sigma2: None,
                rescale: None,
            });
        };
        let grp = groups(gran, b, l, c);
        let shape = g.shape(x).to_vec();
        let inv_count = 1.0 / grp.count as f64;

        let (xhat, mu, sigma2, rescale) = if self.kind == NormKind::RmsNorm {
            let sq = g.square(x);
            let ms = g.group_sum(sq, grp.map.clone(), grp.groups)?;
            let ms = g.scale(ms, inv_count);
            let shifted = g.add_scalar(ms, self.epsilon);
            let rms = g.sqrt(shifted);
            let rms_full = g.gather(rms, grp.map.clone(), &shape)?;
            (g.div(x, rms_full)?, None, ms, rms)
        } else if self.kind == NormKind::BatchNorm && mode == Mode::Eval {
            let (Some(rm), Some(rv)) = (&self.running_mean, &self.running_var) else {
                return Err(Error::UninitializedRunningStats);
            };
            let mu = g.constant(rm);
            let var = g.constant(rv);
            let mu_full = g.gather(mu, grp.map.clone(), &shape)?;
            let centered = g.sub(x, mu_full)?;
            let shifted = g.add_scalar(var, self.epsilon);
            let std = g.sqrt(shifted);
            let std_full = g.gather(std, grp.map.clone(), &shape)?;
            (g.div(centered, std_full)?, Some(mu), var, std)
        } else {
            let sum = g.group_sum(x, grp.map.clone(), grp.groups)?;
            let mu = g.scale(sum, inv_count);
            let mu_full = g.gather(mu, grp.map.clone(), &shape)?;
            let centered = g.sub(x, mu_full)?;
            let sq = g.square(centered);
            let ss = g.group_sum(sq, grp.map.clone(), grp.groups)?;
            let var = g.scale(ss, inv_count);
            let shifted = g.add_scalar(var, self.epsilon);
            let std = g.sqrt(shifted);
            let std_full = g.gather(std, grp.map.clone(), &shape)?;
            let xhat = g.div(centered, std_full)?;
            if self.kind == NormKind::BatchNorm {
                self.update_running(g.value(mu), g.value(var));
            }
            (xhat, Some(mu), var, std)
        };

        let mut y = xhat;
        if let Some(gamma) = vars.gamma {
            let gf = expand_channels(g, gamma, y)?;
            y = g.mul(y, gf)?;
        }
        if let Some(beta) = vars.beta {
            let bf = expand_channels(g, beta, y)?;
            y = g.add(y, bf)?;
        }
        Ok(NormOutputVars {
            y,
            xhat,
            mu,
            sigma2: Some(sigma2),
            rescale: Some(rescale),
        })
    }

    fn update_running(&mut self, mu: &Tensor, var: &Tensor) {
        let m = self.momentum;
        match (&mut self.running_mean, &mut self.running_var) {
            (Some(rm), Some(rv)) => {
                rm.update(|d| {
                    d.iter_mut()
                        .zip(mu.data())
                        .for_each(|(r, b)| *r = (1.0 - m) * *r + m * b)
                });
                rv.update(|d| {
                    d.iter_mut()
                        .zip(var.data())
                        .for_each(|(r, b)| *r = (1.0 - m) * *r + m * b)
                });
            }
            _ => {
                let p = Precision::F64;
                self.running_mean = Some(Tensor::from_parts(
                    mu.shape().to_vec(),
                    mu.data().to_vec(),
                    p,
                ));
                self.running_var = Some(Tensor::from_parts(
                    var.shape().to_vec(),
                    var.data().to_vec(),
                    p,
                ));
            }
        }
    }

    /// Wraps sub-layer `f` in this scheme's residual form:
    ///
    /// * `iLN`: `x + sqrt(σ² + ε) · f(LN*(x))`
    /// * `LayerScale`: `x + diag · f(LN(x))`
    /// * `ReZero`: `x + α · f(x)`
    /// * `NoneNorm`: `x + f(x)`
    /// * all others: `x + f(norm(x))`
    pub fn block_combine<F>(
        &mut self,
        g: &mut Graph,
        vars: &NormVars,
        x: Var,
        mode: Mode,
        f: F,
    ) -> Result<Combined>
    where
        F: FnOnce(&mut Graph, Var) -> Result<Var>,
    {
        let norm = self.normalize(g, vars, x, mode)?;
        let branch = f(g, norm.y)?;
        if g.shape(branch) != g.shape(x) {
            return Err(shape_err(format!(
                "sub-layer maps {:?} to {:?}",
                g.shape(x),
                g.shape(branch)
            )));
        }
        let scaled = match self.kind {
            NormKind::ILn => {
                let rescale = norm.rescale.expect("iLN keeps its rescale factor");
                let (b, l, c) = dims(g.shape(x))?;
                let grp = groups(Granularity::PerImage, b, l, c);
                let shape = g.shape(x).to_vec();
                let r = g.gather(rescale, grp.map, &shape)?;
                g.mul(branch, r)?
            }
            NormKind::LayerScale => {
                let diag = vars.layerscale_diag.expect("LayerScale binds its diagonal");
                let d = expand_channels(g, diag, branch)?;
                g.mul(branch, d)?
            }
            NormKind::ReZero => {
                let alpha = vars.rezero_scalar.expect("ReZero binds its scalar");
                let numel = g.value(branch).numel();
                let shape = g.shape(branch).to_vec();
                let a = g.gather(alpha, vec![0; numel].into(), &shape)?;
                g.mul(branch, a)?
            }
            _ => branch,
        };
        let out = g.add(x, scaled)?;
        Ok(Combined { out, branch, norm })
    }

    /// Value-level [`normalize`](Self::normalize) on a fresh f64 graph.
    pub fn normalize_tensor(&mut self, x: &Tensor, mode: Mode) -> Result<NormOutput> {
        let mut g = Graph::inference(x.precision());
        let vars = self.bind(&mut g);
        let xv = g.constant(x);
        let out = self.normalize(&mut g, &vars, xv, mode)?;
        let ones = Tensor::full(&[1], 1.0);
        Ok(NormOutput {
            y: g.value(out.y).clone(),
            xhat: g.value(out.xhat).clone(),
            mu: out.mu.map(|v| g.value(v).clone()),
            sigma2: out.sigma2.map(|v| g.value(v).clone()),
            rescale: out.rescale.map_or(ones, |v| g.value(v).clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::reduce_stats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn combine_value(
        spec: &mut NormSpec,
        x: &Tensor,
        f: impl FnOnce(&mut Graph, Var) -> Result<Var>,
    ) -> Tensor {
        let mut g = Graph::new(Precision::F64);
        let vars = spec.bind(&mut g);
        let xv = g.constant(x);
        let out = spec
            .block_combine(&mut g, &vars, xv, Mode::Train, f)
            .unwrap();
        g.value(out.out).clone()
    }

    #[test]
    fn parse_names() {
        for k in NormKind::ALL {
            assert_eq!(k.name().parse::<NormKind>().unwrap(), k);
        }
        assert!("Bogus".parse::<NormKind>().is_err());
    }

    #[test]
    fn lnstar_constant_input_gives_zero() {
        let mut spec = NormSpec::new(NormKind::LnStar, 2);
        let out = spec
            .normalize_tensor(&t2(&[&[1.0, 1.0], &[1.0, 1.0]]), Mode::Train)
            .unwrap();
        assert!(out.y.data().iter().all(|&v| v == 0.0));
        assert!(out.rescale.data()[0] > 0.0);
    }

    #[test]
    fn ln_standardizes_each_row() {
        let mut spec = NormSpec::new(NormKind::Ln, 2);
        let out = spec
            .normalize_tensor(&t2(&[&[1.0, 3.0], &[5.0, 9.0]]), Mode::Train)
            .unwrap();
        let expect = [-1.0, 1.0, -1.0, 1.0];
        for (a, b) in out.y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert_eq!(out.mu.unwrap().data(), &[2.0, 7.0]);
    }

    #[test]
    fn lnstar_reconstructs_input_from_two_pass_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(&[8, 4], |_| rng.random_range(-3.0..3.0));
        let mean = x.data().iter().sum::<f64>() / 32.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        let mut spec = NormSpec::new(NormKind::LnStar, 4);
        let out = spec.normalize_tensor(&x, Mode::Train).unwrap();
        let sigma = (var + spec.epsilon).sqrt();
        for (y, v) in out.y.data().iter().zip(x.data()) {
            assert!((y * sigma + mean - v).abs() < 1e-12);
        }
    }

    #[test]
    fn statistic_shapes_follow_granularity() {
        let x = Tensor::from_fn(&[2, 6, 3], |i| (i as f64 * 0.37).sin());
        let shape_of = |kind| {
            let mut spec = NormSpec::new(kind, 3);
            spec.normalize_tensor(&x, Mode::Train)
                .unwrap()
                .sigma2
                .unwrap()
                .shape()
                .to_vec()
        };
        assert_eq!(shape_of(NormKind::Ln), vec![12]);
        assert_eq!(shape_of(NormKind::RmsNorm), vec![12]);
        assert_eq!(shape_of(NormKind::LnStar), vec![2]);
        assert_eq!(shape_of(NormKind::ILn), vec![2]);
        assert_eq!(shape_of(NormKind::InstanceNorm), vec![6]);
        assert_eq!(shape_of(NormKind::BatchNorm), vec![3]);
        let mut spec = NormSpec::new(NormKind::ReZero, 3);
        let out = spec.normalize_tensor(&x, Mode::Train).unwrap();
        assert!(out.mu.is_none() && out.sigma2.is_none());
        assert!(out.y.bit_eq(&x));
        assert_eq!(out.rescale.data(), &[1.0]);
    }

    #[test]
    fn instance_and_batch_stats_match_reduce_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::from_fn(&[2, 5, 3], |_| rng.random_range(-1.0..1.0));
        let mut inorm = NormSpec::new(NormKind::InstanceNorm, 3);
        let out = inorm.normalize_tensor(&x, Mode::Train).unwrap();
        let (m, v) = reduce_stats(&x, &[1]).unwrap();
        assert!(out.mu.unwrap().max_abs_diff(&m.reshape(&[6]).unwrap()) < 1e-14);
        assert!(out.sigma2.unwrap().max_abs_diff(&v.reshape(&[6]).unwrap()) < 1e-14);
        let mut bn = NormSpec::new(NormKind::BatchNorm, 3);
        let out = bn.normalize_tensor(&x, Mode::Train).unwrap();
        let (m, v) = reduce_stats(&x, &[0, 1]).unwrap();
        assert!(out.mu.unwrap().max_abs_diff(&m) < 1e-14);
        assert!(out.sigma2.unwrap().max_abs_diff(&v) < 1e-14);
    }

    #[test]
    fn rmsnorm_has_no_shift() {
        let mut spec = NormSpec::new(NormKind::RmsNorm, 2);
        assert_eq!(spec.params().len(), 1);
        let out = spec
            .normalize_tensor(&t2(&[&[3.0, 4.0]]), Mode::Train)
            .unwrap();
        let rms = (12.5f64 + 1e-6).sqrt();
        assert!((out.y.data()[0] - 3.0 / rms).abs() < 1e-15);
        assert!((out.y.data()[1] - 4.0 / rms).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_eval_requires_running_stats() {
        let mut bn = NormSpec::new(NormKind::BatchNorm, 2);
        let x = t2(&[&[1.0, 2.0], &[3.0, 5.0]]);
        assert!(matches!(
            bn.normalize_tensor(&x, Mode::Eval),
            Err(Error::UninitializedRunningStats)
        ));
        bn.normalize_tensor(&x, Mode::Train).unwrap();
        assert_eq!(bn.running_mean.as_ref().unwrap().data(), &[2.0, 3.5]);
        bn.normalize_tensor(&x, Mode::Eval).unwrap();
    }

    #[test]
    fn batchnorm_train_and_eval_diverge_after_shifted_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bn = NormSpec::new(NormKind::BatchNorm, 4);
        for step in 0..20 {
            let shift = step as f64 * 0.5;
            let x = Tensor::from_fn(&[2, 8, 4], |_| rng.random_range(-1.0..1.0) + shift);
            bn.normalize_tensor(&x, Mode::Train).unwrap();
        }
        let x = Tensor::from_fn(&[2, 8, 4], |_| rng.random_range(-1.0..1.0) + 10.0);
        let train = bn.clone().normalize_tensor(&x, Mode::Train).unwrap().y;
        let eval = bn.normalize_tensor(&x, Mode::Eval).unwrap().y;
        assert!(train.max_abs_diff(&eval) > 0.1);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut spec = NormSpec::new(NormKind::Ln, 3);
        assert!(matches!(
            spec.normalize_tensor(&Tensor::zeros(&[2, 2]), Mode::Train),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn iln_with_zero_sublayer_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_fn(&[6, 4], |_| rng.random_range(-2.0..2.0));
        let mut spec = NormSpec::new(NormKind::ILn, 4);
        let out = combine_value(&mut spec, &x, |g, y| Ok(g.scale(y, 0.0)));
        assert!(out.bit_eq(&x));
    }

    #[test]
    fn rezero_at_init_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::from_fn(&[6, 4], |_| rng.random_range(-2.0..2.0));
        let mut spec = NormSpec::new(NormKind::ReZero, 4);
        let out = combine_value(&mut spec, &x, |g, y| {
            let sq = g.square(y);
            Ok(g.add_scalar(sq, 3.0))
        });
        assert!(out.bit_eq(&x));
    }

    #[test]
    fn iln_identity_sublayer_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::from_fn(&[5, 3], |_| rng.random_range(-2.0..2.0));
        let mut spec = NormSpec::new(NormKind::ILn, 3);
        spec.gamma = Tensor::new(&[3], vec![0.5, 1.5, -0.7]).unwrap();
        spec.beta = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let out = combine_value(&mut spec, &x, |_, y| Ok(y));
        let n = 15.0;
        let mu = x.data().iter().sum::<f64>() / n;
        let var = x.data().iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        let s = (var + spec.epsilon).sqrt();
        for (i, (&o, &v)) in out.data().iter().zip(x.data()).enumerate() {
            let c = i % 3;
            let (ga, be) = (spec.gamma.data()[c], spec.beta.data()[c]);
            let expect = v + s * (v - mu) / s * ga + s * be;
            assert!((o - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn iln_output_follows_input_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::from_fn(&[6, 4], |_| rng.random_range(-2.0..2.0));
        let shifted = x.map(|v| v + 3.25);
        let mut spec = NormSpec::new(NormKind::ILn, 4);
        let a = combine_value(&mut spec, &x, |_, y| Ok(y));
        let b = combine_value(&mut spec, &shifted, |_, y| Ok(y));
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((q - p - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn layerscale_scales_branch_by_diagonal() {
        let x = Tensor::from_fn(&[3, 2], |i| i as f64);
        let mut spec = NormSpec::new(NormKind::LayerScale, 2);
        let out = combine_value(&mut spec, &x, |g, _| {
            let ones = g.constant(&Tensor::full(&[3, 2], 1.0));
            Ok(ones)
        });
        for (o, v) in out.data().iter().zip(x.data()) {
            assert!((o - v - LAYERSCALE_INIT).abs() < 1e-15);
        }
    }

    #[test]
    fn sublayer_shape_change_is_rejected() {
        let mut spec = NormSpec::new(NormKind::Ln, 2);
        let mut g = Graph::new(Precision::F64);
        let vars = spec.bind(&mut g);
        let x = g.constant(&Tensor::zeros(&[3, 2]));
        let r = spec.block_combine(&mut g, &vars, x, Mode::Train, |g, _| Ok(g.scalar(1.0)));
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
