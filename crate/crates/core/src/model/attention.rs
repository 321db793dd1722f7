//! Multi-head self-attention inside non-overlapping W×W windows with a
//! learned relative-position logit bias.

use super::index::IndexCache;
use super::{linear_raw, BlockState, BlockVars, LinearVars};
use crate::error::{shape_err, Result};
use crate::numeric::{Graph, Tensor, Var};

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_graph(
    g: &mut Graph,
    cache: &IndexCache,
    bv: &BlockVars,
    x: Var,
    h: usize,
    w: usize,
    heads: usize,
    win: usize,
) -> Result<Var> {
    let (b, l, c) = match *g.shape(x) {
        [b, l, c] => (b, l, c),
        ref s => return Err(shape_err(format!("attention expects [B,L,C], got {s:?}"))),
    };
    if l != h * w || !h.is_multiple_of(win) || !w.is_multiple_of(win) {
        return Err(shape_err(format!(
            "{l} tokens of a {h}x{w} map cannot be split into {win}x{win} windows"
        )));
    }
    let (n, hd) = (win * win, c / heads);
    let groups = b * (h / win) * (w / win) * heads;

    let qkv = linear_raw(g, x, bv.qkv)?;
    let q = g.gather(
        qkv,
        cache.split(b, h, w, c, heads, win, 0, false),
        &[groups, n, hd],
    )?;
    let q = g.scale(q, 1.0 / (hd as f64).sqrt());
    let kt = g.gather(
        qkv,
        cache.split(b, h, w, c, heads, win, 1, true),
        &[groups, hd, n],
    )?;
    let v = g.gather(
        qkv,
        cache.split(b, h, w, c, heads, win, 2, false),
        &[groups, n, hd],
    )?;

    let mut logits = g.matmul(q, kt)?;
    if let Some(table) = bv.rpe {
        let bias = g.gather(table, cache.rpe(b, h, w, heads, win), &[groups, n, n])?;
        logits = g.add(logits, bias)?;
    }
    let attn = g.softmax_lastdim(logits);
    let out = g.matmul(attn, v)?;
    let merged = g.gather(out, cache.merge(b, h, w, c, heads, win), &[b, l, c])?;
    linear_raw(g, merged, bv.proj)
}

/// Window attention of one block on a single `[L, C]` map of an `h × w` image.
pub fn window_attention(state: &BlockState, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (l, c) = match *x.shape() {
        [l, c] => (l, c),
        ref s => return Err(shape_err(format!("expected [L,C], got {s:?}"))),
    };
    let mut g = Graph::inference(x.precision());
    let lin = |g: &mut Graph, p: &super::Linear| LinearVars {
        w: g.param(&p.weight),
        b: g.param(&p.bias),
    };
    let bv = BlockVars {
        norm1: Default::default(),
        norm2: Default::default(),
        qkv: lin(&mut g, &state.qkv),
        proj: lin(&mut g, &state.proj),
        rpe: state.rpe_table.as_ref().map(|t| g.param(t)),
        fc1: lin(&mut g, &state.fc1),
        fc2: lin(&mut g, &state.fc2),
    };
    let xv = g.constant(&x.reshape(&[1, l, c])?);
    let out = attention_graph(
        &mut g,
        &IndexCache::default(),
        &bv,
        xv,
        h,
        w,
        state.heads,
        state.window,
    )?;
    g.value(out).reshape(&[l, c])
}
