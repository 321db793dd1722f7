//! Deterministic value-level kernels. Reductions always run sequentially
//! over the flattened index so repeated calls are bitwise identical.

use crate::error::{shape_err, Error, Result};
use crate::numeric::{Precision, Tensor};

/// Batched row-major product: `a[batch,m,k] · b[batch,k,n]`.
pub(crate) fn bmm_raw(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let a = &a[bi * m * k..(bi + 1) * m * k];
        let b = &b[bi * k * n..(bi + 1) * k * n];
        let c = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    out
}

/// `a[batch,m,k] · b[batch,n,k]ᵀ`, i.e. `a · bᵀ` per batch.
pub(crate) fn bmm_nt_raw(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let a = &a[bi * m * k..(bi + 1) * m * k];
        let b = &b[bi * n * k..(bi + 1) * n * k];
        let c = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                let mut s = 0.0;
                for (x, y) in arow.iter().zip(brow) {
                    s += x * y;
                }
                c[i * n + j] = s;
            }
        }
    }
    out
}

/// `a[batch,k,m]ᵀ · b[batch,k,n]` per batch.
pub(crate) fn bmm_tn_raw(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let a = &a[bi * k * m..(bi + 1) * k * m];
        let b = &b[bi * k * n..(bi + 1) * k * n];
        let c = &mut out[bi * m * n..(bi + 1) * m * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            for i in 0..m {
                let av = a[p * m + i];
                if av == 0.0 {
                    continue;
                }
                let crow = &mut c[i * n..(i + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    out
}

pub(crate) fn softmax_rows_raw(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, orow) in x.chunks(n).zip(out.chunks_mut(n)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Matrix product of two rank-2 tensors of the same precision.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(shape_err(format!(
            "matmul expects rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(shape_err(format!(
            "inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.precision() != b.precision() {
        return Err(shape_err("matmul operands have different precision"));
    }
    let mut data = bmm_raw(a.data(), b.data(), 1, m, k, n);
    a.precision().round_slice(&mut data);
    Ok(Tensor::from_parts(vec![m, n], data, a.precision()))
}

/// Softmax over the last dimension with the row maximum subtracted first.
pub fn softmax_lastdim(x: &Tensor) -> Tensor {
    let n = *x.shape().last().expect("softmax needs rank >= 1");
    let mut data = softmax_rows_raw(x.data(), n.max(1));
    x.precision().round_slice(&mut data);
    Tensor::from_parts(x.shape().to_vec(), data, x.precision())
}

/// Population mean and variance over `axes`. The reduced axes are removed
/// from the output shape (a full reduction yields shape `[1]`).
pub fn reduce_stats(x: &Tensor, axes: &[usize]) -> Result<(Tensor, Tensor)> {
    let rank = x.rank();
    if axes.is_empty() {
        return Err(Error::Domain("empty reduction axis set".into()));
    }
    let mut reduced = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(shape_err(format!("axis {a} out of range for rank {rank}")));
        }
        reduced[a] = true;
    }
    let count: usize = (0..rank)
        .filter(|&a| reduced[a])
        .map(|a| x.shape()[a])
        .product();
    if count == 0 {
        return Err(Error::Domain("reduction over zero elements".into()));
    }
    let out_shape: Vec<usize> = (0..rank)
        .filter(|&a| !reduced[a])
        .map(|a| x.shape()[a])
        .collect();
    let groups: usize = out_shape.iter().product();
    let map = group_map(x.shape(), &reduced);

    let mut mean = vec![0.0; groups];
    for (v, &g) in x.data().iter().zip(&map) {
        mean[g] += v;
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; groups];
    for (v, &g) in x.data().iter().zip(&map) {
        let d = v - mean[g];
        var[g] += d * d;
    }
    for v in var.iter_mut() {
        *v /= count as f64;
    }
    let p = x.precision();
    p.round_slice(&mut mean);
    p.round_slice(&mut var);
    let out_shape = if out_shape.is_empty() {
        vec![1]
    } else {
        out_shape
    };
    Ok((
        Tensor::from_parts(out_shape.clone(), mean, p),
        Tensor::from_parts(out_shape, var, p),
    ))
}

/// For each flat element, the flat index of its group once `reduced` axes are dropped.
pub(crate) fn group_map(shape: &[usize], reduced: &[bool]) -> Vec<usize> {
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..numel {
        let mut g = 0;
        for (a, &i) in idx.iter().enumerate() {
            if !reduced[a] {
                g = g * shape[a] + i;
            }
        }
        map.push(g);
        for a in (0..shape.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    map
}

/// Rounds every value to `mode`. Returns the cast tensor and the number of
/// non-finite values it contains (overflow becomes ±infinity, never clamped).
pub fn cast_precision(x: &Tensor, mode: Precision) -> (Tensor, usize) {
    let mut data = x.data().to_vec();
    let nonfinite = mode.round_slice(&mut data);
    (
        Tensor::from_parts(x.shape().to_vec(), data, mode),
        nonfinite,
    )
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.numel()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.update(|d| d[i] = orig + h);
        let fp = f(&probe);
        probe.update(|d| d[i] = orig - h);
        let fm = f(&probe);
        probe.update(|d| d[i] = orig);
        *g = (fp - fm) / (2.0 * h);
    }
    Tensor::from_parts(x.shape().to_vec(), grad, Precision::F64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let i = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let v = Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap();
        assert_eq!(matmul(&i, &v).unwrap().data(), &[3.0, 4.0]);
        let r = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        assert_eq!(matmul(&r, &v).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&[4, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                assert!((c.get(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[2, 3, 4], &mut rng);
        let b = random(&[2, 4, 5], &mut rng);
        let direct = bmm_raw(a.data(), b.data(), 2, 3, 4, 5);
        // bt[bi, j, p] = b[bi, p, j]
        let bt: Vec<f64> = (0..2 * 5 * 4)
            .map(|i| {
                let (bi, j, p) = (i / 20, (i / 4) % 5, i % 4);
                b.data()[bi * 20 + p * 5 + j]
            })
            .collect();
        let nt = bmm_nt_raw(a.data(), &bt, 2, 3, 4, 5);
        let at: Vec<f64> = (0..2 * 4 * 3)
            .map(|i| {
                let (bi, p, r) = (i / 12, (i / 3) % 4, i % 3);
                a.data()[bi * 12 + r * 4 + p]
            })
            .collect();
        let tn = bmm_tn_raw(&at, b.data(), 2, 3, 4, 5);
        for ((x, y), z) in direct.iter().zip(&nt).zip(&tn) {
            assert!((x - y).abs() < 1e-14 && (x - z).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_lastdim(&Tensor::new(&[3], vec![0.0; 3]).unwrap());
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_lastdim(&Tensor::new(&[2], vec![1000.0, 1000.0]).unwrap());
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_lastdim(&Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let denom: f64 = [1f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, v) in s.data().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn reduce_stats_examples() {
        let (m, v) = reduce_stats(&Tensor::new(&[3], vec![1.0; 3]).unwrap(), &[0]).unwrap();
        assert_eq!((m.data()[0], v.data()[0]), (1.0, 0.0));
        let (m, v) = reduce_stats(&Tensor::new(&[2], vec![1.0, 3.0]).unwrap(), &[0]).unwrap();
        assert_eq!((m.data()[0], v.data()[0]), (2.0, 1.0));
        assert!(matches!(reduce_stats(&m, &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn reduce_stats_rows_match_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[6, 8], &mut rng);
        let (m, v) = reduce_stats(&x, &[1]).unwrap();
        assert_eq!(m.shape(), &[6]);
        for r in 0..6 {
            let row: Vec<f64> = (0..8).map(|c| x.get(&[r, c])).collect();
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 8.0;
            assert!((m.data()[r] - mean).abs() < 1e-13);
            assert!((v.data()[r] - var).abs() < 1e-13);
        }
        let (m2, v2) = reduce_stats(&x, &[1]).unwrap();
        assert!(m.bit_eq(&m2) && v.bit_eq(&v2));
        // column stats over a middle axis
        let y = random(&[2, 3, 4], &mut rng);
        let (m, _) = reduce_stats(&y, &[0, 2]).unwrap();
        let expect: f64 = (0..2)
            .flat_map(|a| (0..4).map(move |c| (a, c)))
            .map(|(a, c)| y.get(&[a, 1, c]))
            .sum::<f64>()
            / 8.0;
        assert!((m.data()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn cast_examples() {
        let x = Tensor::new(&[3], vec![1.0, 65520.0, 0.1]).unwrap();
        let (y, nonfinite) = cast_precision(&x, Precision::F16);
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[1], f64::INFINITY);
        assert_eq!(nonfinite, 1);
        assert_eq!(y.data()[2], half::f16::from_f64(0.1).to_f64());
        assert_eq!(y.precision(), Precision::F16);
    }

    #[test]
    fn finite_difference_examples() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = finite_difference_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-8 && (g.data()[1] - 4.0).abs() < 1e-8);
        let g = finite_difference_grad(|_| 3.0, &x, 1e-5);
        assert_eq!(g.data(), &[0.0, 0.0]);
    }
}
