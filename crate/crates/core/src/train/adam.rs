use crate::numeric::Tensor;

/// First and second moment estimates per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[Vec<usize>], betas: (f64, f64), eps: f64) -> Self {
        let zeros = || {
            shapes
                .iter()
                .map(|s| vec![0.0; s.iter().product()])
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            betas,
            eps,
        }
    }
}

/// One bias-corrected Adam update without weight decay.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Vec<f64>], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    state.step += 1;
    let (b1, b2) = state.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let eps = state.eps;
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &grads[k]);
        assert_eq!(g.len(), p.numel(), "gradient length");
        p.update(|data| {
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}
