//! Index maps for the gather-based layout transforms, memoized by shape.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::Index;
use crate::numeric::ZERO_INDEX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    Im2col {
        b: usize,
        h: usize,
        w: usize,
        c: usize,
    },
    ToTokens {
        b: usize,
        c: usize,
        h: usize,
        w: usize,
    },
    ToImage {
        b: usize,
        h: usize,
        w: usize,
        s: usize,
    },
    Split {
        b: usize,
        h: usize,
        w: usize,
        c: usize,
        heads: usize,
        win: usize,
        part: usize,
        transpose: bool,
    },
    Merge {
        b: usize,
        h: usize,
        w: usize,
        c: usize,
        heads: usize,
        win: usize,
    },
    Rpe {
        b: usize,
        h: usize,
        w: usize,
        heads: usize,
        win: usize,
    },
}

#[derive(Clone, Debug, Default)]
pub(crate) struct IndexCache(Arc<Mutex<HashMap<Key, Index>>>);

impl IndexCache {
    fn get(&self, key: Key, build: impl FnOnce() -> Vec<usize>) -> Index {
        let mut map = self.0.lock().expect("index cache poisoned");
        map.entry(key).or_insert_with(|| build().into()).clone()
    }

    /// `[B, L, C]` → `[B, L, 9C]` 3×3 patches with zero padding.
    pub fn im2col(&self, b: usize, h: usize, w: usize, c: usize) -> Index {
        self.get(Key::Im2col { b, h, w, c }, || {
            let l = h * w;
            let mut idx = Vec::with_capacity(b * l * 9 * c);
            for bi in 0..b {
                for y in 0..h {
                    for x in 0..w {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky - 1, x as isize + kx - 1);
                                let inside =
                                    sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w;
                                for ci in 0..c {
                                    idx.push(if inside {
                                        (bi * l + sy as usize * w + sx as usize) * c + ci
                                    } else {
                                        ZERO_INDEX
                                    });
                                }
                            }
                        }
                    }
                }
            }
            idx
        })
    }

    /// `[B, C, h, w]` → `[B, h·w, C]`.
    pub fn to_tokens(&self, b: usize, c: usize, h: usize, w: usize) -> Index {
        self.get(Key::ToTokens { b, c, h, w }, || {
            let l = h * w;
            let mut idx = Vec::with_capacity(b * l * c);
            for bi in 0..b {
                for p in 0..l {
                    for ci in 0..c {
                        idx.push((bi * c + ci) * l + p);
                    }
                }
            }
            idx
        })
    }

    /// `[B, h·w, 3s²]` → `[B, 3, h·s, w·s]` (pixel shuffle; plain transpose for `s = 1`).
    pub fn to_image(&self, b: usize, h: usize, w: usize, s: usize) -> Index {
        self.get(Key::ToImage { b, h, w, s }, || {
            let (l, cin) = (h * w, 3 * s * s);
            let (hh, ww) = (h * s, w * s);
            let mut idx = Vec::with_capacity(b * 3 * hh * ww);
            for bi in 0..b {
                for ch in 0..3 {
                    for y in 0..hh {
                        for x in 0..ww {
                            let tok = (y / s) * w + x / s;
                            idx.push((bi * l + tok) * cin + ch * s * s + (y % s) * s + x % s);
                        }
                    }
                }
            }
            idx
        })
    }

    /// Flat token index of the `t`-th token of window `win_id`.
    fn token(w: usize, win: usize, win_id: usize, t: usize) -> usize {
        let per_row = w / win;
        let (wy, wx) = (win_id / per_row, win_id % per_row);
        let (ty, tx) = (t / win, t % win);
        (wy * win + ty) * w + wx * win + tx
    }

    /// `[B, L, 3C]` → one of q/k/v as `[B·nW·heads, N, hd]`, or `[.., hd, N]` when transposed.
    #[allow(clippy::too_many_arguments)]
    pub fn split(
        &self,
        b: usize,
        h: usize,
        w: usize,
        c: usize,
        heads: usize,
        win: usize,
        part: usize,
        transpose: bool,
    ) -> Index {
        self.get(
            Key::Split {
                b,
                h,
                w,
                c,
                heads,
                win,
                part,
                transpose,
            },
            || {
                let (l, n, hd) = (h * w, win * win, c / heads);
                let nw = (h / win) * (w / win);
                let mut idx = Vec::with_capacity(b * nw * heads * n * hd);
                for bi in 0..b {
                    for wi in 0..nw {
                        for head in 0..heads {
                            let src = |t: usize, d: usize| {
                                let tok = Self::token(w, win, wi, t);
                                (bi * l + tok) * 3 * c + part * c + head * hd + d
                            };
                            if transpose {
                                for d in 0..hd {
                                    for t in 0..n {
                                        idx.push(src(t, d));
                                    }
                                }
                            } else {
                                for t in 0..n {
                                    for d in 0..hd {
                                        idx.push(src(t, d));
                                    }
                                }
                            }
                        }
                    }
                }
                idx
            },
        )
    }

    /// `[B·nW·heads, N, hd]` → `[B, L, C]`.
    pub fn merge(&self, b: usize, h: usize, w: usize, c: usize, heads: usize, win: usize) -> Index {
        self.get(
            Key::Merge {
                b,
                h,
                w,
                c,
                heads,
                win,
            },
            || {
                let (l, n, hd) = (h * w, win * win, c / heads);
                let per_row = w / win;
                let nw = (h / win) * per_row;
                let mut idx = Vec::with_capacity(b * l * c);
                for bi in 0..b {
                    for p in 0..l {
                        let (y, x) = (p / w, p % w);
                        let wi = (y / win) * per_row + x / win;
                        let t = (y % win) * win + x % win;
                        for ch in 0..c {
                            let (head, d) = (ch / hd, ch % hd);
                            idx.push((((bi * nw + wi) * heads + head) * n + t) * hd + d);
                        }
                    }
                }
                idx
            },
        )
    }

    /// RPE table `[(2W−1)², heads]` → logit bias `[B·nW·heads, N, N]`.
    pub fn rpe(&self, b: usize, h: usize, w: usize, heads: usize, win: usize) -> Index {
        self.get(
            Key::Rpe {
                b,
                h,
                w,
                heads,
                win,
            },
            || {
                let n = win * win;
                let nw = (h / win) * (w / win);
                let side = 2 * win - 1;
                let mut idx = Vec::with_capacity(b * nw * heads * n * n);
                for _ in 0..b * nw {
                    for head in 0..heads {
                        for i in 0..n {
                            for j in 0..n {
                                let dy = (i / win) as isize - (j / win) as isize + win as isize - 1;
                                let dx = (i % win) as isize - (j % win) as isize + win as isize - 1;
                                idx.push((dy as usize * side + dx as usize) * heads + head);
                            }
                        }
                    }
                }
                idx
            },
        )
    }
}

#[cfg(test)]
/// Relative-offset table slot of query token `i` and key token `j` in a window.
pub(crate) fn relative_slot(i: usize, j: usize, win: usize) -> usize {
    let side = 2 * win - 1;
    let dy = (i / win) + win - 1 - (j / win);
    let dx = (i % win) + win - 1 - (j % win);
    dy * side + dx
}
