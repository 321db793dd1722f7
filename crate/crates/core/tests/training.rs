use irnorm::config::RunConfig;
use irnorm::data::Dataset;
use irnorm::diagnostics::trace_csv_string;
use irnorm::norms::NormKind;
use irnorm::train::{multirun, train, RunStatus};
use irnorm::Error;

const TOY_CFG: &str = include_str!("../../../configs/toy.cfg");

fn toy(overrides: &[&str]) -> (RunConfig, Dataset) {
    let mut cfg = RunConfig::default();
    cfg.apply_text(TOY_CFG).unwrap();
    for kv in overrides {
        cfg.apply_override(kv).unwrap();
    }
    let cfg = cfg.finish().unwrap();
    let data = Dataset::build(&cfg.data, cfg.model.window).unwrap();
    (cfg, data)
}

fn window_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn iln_smoothed_loss_decreases() {
    let (cfg, data) = toy(&["norm.kind=iLN", "train.iters=200", "train.milestones=1000"]);
    let out = train(&cfg.model, &cfg.train, &data, "smoke").unwrap();
    assert_eq!(out.losses.len(), 200);
    let first = window_mean(&out.losses[..50]);
    let last = window_mean(&out.losses[150..]);
    assert!(last < first, "loss went from {first} to {last}");
    assert!(out.report.psnr.is_finite());
    assert_eq!(out.report.nonfinite_count, 0);
}

#[test]
fn training_is_bitwise_deterministic() {
    let (cfg, data) = toy(&["norm.kind=LN"]);
    let a = train(&cfg.model, &cfg.train, &data, "det").unwrap();
    let b = train(&cfg.model, &cfg.train, &data, "det").unwrap();
    assert_eq!(trace_csv_string(&a.trace), trace_csv_string(&b.trace));
    assert!(a
        .losses
        .iter()
        .zip(&b.losses)
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    for ((n1, t1), (n2, t2)) in a.model.state().iter().zip(&b.model.state()) {
        assert_eq!(n1, n2);
        assert!(t1.bit_eq(t2), "{n1} differs");
    }
}

#[test]
fn trace_covers_every_block_at_each_trace_step() {
    let (cfg, data) = toy(&["train.iters=10", "train.trace_every=5"]);
    let out = train(&cfg.model, &cfg.train, &data, "tr").unwrap();
    // 2 trace steps x 2 blocks x {sqmean, entropy}
    assert_eq!(out.trace.len(), 8);
    assert!(out
        .trace
        .iter()
        .all(|r| r.iteration == 5 || r.iteration == 10));
    let ln_c = (cfg.model.embed_dim as f64).ln();
    for r in &out.trace {
        assert!(r.value >= 0.0 && r.value.is_finite());
        if r.metric.name() == "entropy" {
            assert!(r.value <= ln_c + 1e-12);
        }
    }
}

#[test]
fn zero_iterations_evaluates_the_initial_model() {
    let (cfg, data) = toy(&["train.iters=0"]);
    let out = train(&cfg.model, &cfg.train, &data, "init").unwrap();
    assert!(out.losses.is_empty() && out.trace.is_empty());
    assert!(out.report.psnr.is_finite());
    assert!(out.report.max_sqmean.is_finite() && out.report.min_entropy.is_finite());
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let (cfg, data) = toy(&["norm.kind=NoneNorm", "train.lr=1e30", "train.iters=50"]);
    match train(&cfg.model, &cfg.train, &data, "boom") {
        Err(Error::Diverged(d)) => {
            assert_eq!(d.run_id, "boom");
            assert!(d.iteration >= 1 && d.iteration <= 50);
            assert!(!d.loss.is_finite());
            assert!(d
                .last_trace
                .iter()
                .any(|r| r.iteration as usize == d.iteration));
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("expected divergence"),
    }
}

#[test]
fn clipping_and_kld_keep_training_finite() {
    let (cfg, data) = toy(&["train.grad_clip=0.01", "train.kld_weight=0.1"]);
    let out = train(&cfg.model, &cfg.train, &data, "reg").unwrap();
    assert!(out.losses.iter().all(|l| l.is_finite()));
}

#[test]
fn every_norm_kind_trains() {
    for kind in NormKind::ALL {
        let (cfg, data) = toy(&[&format!("norm.kind={kind}"), "train.iters=5"]);
        let out = train(&cfg.model, &cfg.train, &data, "k").unwrap();
        assert!(out.losses.iter().all(|l| l.is_finite()), "{kind}");
    }
}

#[test]
fn duplicate_seeds_aggregate_with_zero_spread() {
    let (cfg, data) = toy(&["train.iters=5"]);
    let (report, runs) = multirun(&cfg.model, &cfg.train, &data, &[4, 4], "dup", 1).unwrap();
    assert_ne!(runs[0].run_id, runs[1].run_id);
    assert!(report.runs.iter().all(|r| r.status == RunStatus::Ok));
    let a = &report.aggregate;
    assert_eq!(a.completed, 2);
    assert_eq!(
        (a.psnr_std, a.ssim_std, a.max_sqmean_std, a.min_entropy_std),
        (0.0, 0.0, 0.0, 0.0)
    );
}

#[test]
fn multirun_needs_two_seeds() {
    let (cfg, data) = toy(&["train.iters=1"]);
    let err = multirun(&cfg.model, &cfg.train, &data, &[1], "one", 1).unwrap_err();
    assert!(matches!(err, Error::Config { ref key, .. } if key == "seeds"));
}
