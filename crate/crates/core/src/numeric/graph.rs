//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the tape once in reverse. Broadcasting, transposes, window
//! partitioning, im2col and pixel shuffle are all expressed with two index
//! primitives, [`Graph::gather`] and [`Graph::group_sum`], which are adjoint
//! to each other. Each primitive result is rounded to the graph's
//! [`Precision`] and non-finite outputs are counted.

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::numeric::kernels::{bmm_nt_raw, bmm_raw, bmm_tn_raw, softmax_rows_raw};
use crate::numeric::{Precision, Tensor};

/// Gather index that produces a zero instead of reading the source.
pub const ZERO_INDEX: usize = usize::MAX;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sqrt(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        n: usize,
    },
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    GroupSum {
        x: Var,
        map: Arc<[usize]>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A tape of tensor operations.
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
    record: bool,
    nonfinite: usize,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    /// A tape that records backward rules.
    pub fn new(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            precision,
            record: true,
            nonfinite: 0,
        }
    }

    /// A tape for inference only; no node requires gradients.
    pub fn inference(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            precision,
            record: false,
            nonfinite: 0,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Count of non-finite values produced by any node so far.
    pub fn nonfinite_count(&self) -> usize {
        self.nonfinite
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, shape: Vec<usize>, mut data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nonfinite += self.precision.round_slice(&mut data);
        let value = Tensor::from_parts(shape, data, self.precision);
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.record,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, t: &Tensor, needs_grad: bool) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, needs_grad)
    }

    /// A differentiable leaf (cast to the graph precision).
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t, true)
    }

    /// A constant leaf.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![1], vec![v], Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(self.shape(a).to_vec(), data, op, needs)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), data, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.binary(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.binary(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        Ok(self.binary(a, b, Op::Div(a, b), |x, y| x / y))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), gelu)
    }

    /// Softmax over contiguous rows of length `n` (the last dimension).
    pub fn softmax_lastdim(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().unwrap_or(&1);
        let data = softmax_rows_raw(self.data(x), n.max(1));
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), data, Op::Softmax { x, n }, needs)
    }

    /// `a[.., m, k] · b[k, n]`, or batched `a[B,m,k] · b[B,k,n]` when both are rank 3
    /// with equal leading size.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, k2, n, shape) = match (sa.as_slice(), sb.as_slice()) {
            ([b1, m, k], [b2, k2, n]) if b1 == b2 => (*b1, *m, *k, *k2, *n, vec![*b1, *m, *n]),
            // leading axes of a rank >= 2 lhs are flattened against a 2-D rhs
            ([lead @ .., k], [k2, n]) if !lead.is_empty() => {
                let m = lead.iter().product();
                let mut shape = lead.to_vec();
                shape.push(*n);
                (1, m, *k, *k2, *n, shape)
            }
            _ => return Err(shape_err(format!("matmul operands {sa:?} x {sb:?}"))),
        };
        if k != k2 {
            return Err(shape_err(format!(
                "matmul inner dimensions {sa:?} x {sb:?}"
            )));
        }
        let data = bmm_raw(self.data(a), self.data(b), batch, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            shape,
            data,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
            },
            needs,
        ))
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == ZERO_INDEX`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != index.len() {
            return Err(shape_err(format!(
                "gather index length {} for shape {shape:?}",
                index.len()
            )));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(numel);
        for &i in index.iter() {
            if i == ZERO_INDEX {
                data.push(0.0);
            } else {
                data.push(
                    *src.get(i)
                        .ok_or_else(|| shape_err(format!("gather index {i} out of range")))?,
                );
            }
        }
        let needs = self.needs(x);
        Ok(self.push(shape.to_vec(), data, Op::Gather { x, index }, needs))
    }

    /// `out[g] = Σ_{i: map[i] = g} x[i]`, summed in increasing `i`.
    pub fn group_sum(&mut self, x: Var, map: Arc<[usize]>, groups: usize) -> Result<Var> {
        if map.len() != self.value(x).numel() {
            return Err(shape_err("group map length differs from operand length"));
        }
        let mut data = vec![0.0; groups];
        for (&v, &g) in self.data(x).iter().zip(map.iter()) {
            *data
                .get_mut(g)
                .ok_or_else(|| shape_err(format!("group {g} out of range")))? += v;
        }
        let needs = self.needs(x);
        Ok(self.push(vec![groups], data, Op::GroupSum { x, map }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel = self.value(x).numel();
        let index: Arc<[usize]> = (0..numel).collect();
        self.gather(x, index, shape)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let map: Arc<[usize]> = vec![0; self.value(x).numel()].into();
        self.group_sum(x, map, 1).expect("full reduction")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Domain("backward requires a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Only leaves keep their gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).numel()]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[idx].value.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
            } => {
                if self.needs(a) {
                    let da = bmm_nt_raw(g, self.data(b), batch, m, n, k);
                    self.accumulate(grads, a, |s| add_into(s, &da));
                }
                if self.needs(b) {
                    let db = bmm_tn_raw(self.data(a), g, batch, k, m, n);
                    self.accumulate(grads, b, |s| add_into(s, &db));
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, |s| add_into(s, g));
                self.accumulate(grads, b, |s| add_into(s, g));
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, |s| add_into(s, g));
                self.accumulate(grads, b, |s| {
                    s.iter_mut().zip(g).for_each(|(d, gv)| *d -= gv)
                });
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.data(a), self.data(b));
                self.accumulate(grads, a, |s| {
                    for ((d, gv), y) in s.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                self.accumulate(grads, b, |s| {
                    for ((d, gv), x) in s.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            &Op::Div(a, b) => {
                let (av, bv) = (self.data(a), self.data(b));
                self.accumulate(grads, a, |s| {
                    for ((d, gv), y) in s.iter_mut().zip(g).zip(bv) {
                        *d += gv / y;
                    }
                });
                self.accumulate(grads, b, |s| {
                    for (((d, gv), x), y) in s.iter_mut().zip(g).zip(av).zip(bv) {
                        *d -= gv * x / (y * y);
                    }
                });
            }
            &Op::Scale(x, c) => self.accumulate(grads, x, |s| {
                s.iter_mut().zip(g).for_each(|(d, gv)| *d += c * gv)
            }),
            &Op::AddScalar(x) => self.accumulate(grads, x, |s| add_into(s, g)),
            &Op::Sqrt(x) => self.accumulate(grads, x, |s| {
                for ((d, gv), y) in s.iter_mut().zip(g).zip(out) {
                    *d += gv / (2.0 * y);
                }
            }),
            &Op::Ln(x) => {
                let xv = self.data(x);
                self.accumulate(grads, x, |s| {
                    for ((d, gv), v) in s.iter_mut().zip(g).zip(xv) {
                        *d += gv / v;
                    }
                })
            }
            &Op::Abs(x) => {
                let xv = self.data(x);
                self.accumulate(grads, x, |s| {
                    for ((d, gv), v) in s.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *d += gv;
                        } else if *v < 0.0 {
                            *d -= gv;
                        }
                    }
                })
            }
            &Op::Square(x) => {
                let xv = self.data(x);
                self.accumulate(grads, x, |s| {
                    for ((d, gv), v) in s.iter_mut().zip(g).zip(xv) {
                        *d += 2.0 * v * gv;
                    }
                })
            }
            &Op::Gelu(x) => {
                let xv = self.data(x);
                self.accumulate(grads, x, |s| {
                    for ((d, gv), v) in s.iter_mut().zip(g).zip(xv) {
                        *d += gv * gelu_grad(*v);
                    }
                })
            }
            &Op::Softmax { x, n } => self.accumulate(grads, x, |s| {
                for ((drow, grow), yrow) in s.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += y * (gv - dot);
                    }
                }
            }),
            Op::Gather { x, index } => self.accumulate(grads, *x, |s| {
                for (&i, gv) in index.iter().zip(g) {
                    if i != ZERO_INDEX {
                        s[i] += gv;
                    }
                }
            }),
            Op::GroupSum { x, map } => self.accumulate(grads, *x, |s| {
                for (d, &grp) in s.iter_mut().zip(map.iter()) {
                    *d += g[grp];
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
