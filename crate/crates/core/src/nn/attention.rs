use rand::Rng;

use super::ops::{dropout, linear, linear_backward, DropoutMask};
use super::tensor::{gemm_into, matmul, ParamLeaf, Tensor, Trans};
use crate::error::{Error, Result};
use crate::real::Real;

/// Multi-head scaled dot-product self-attention with key padding masks.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention<T> {
    pub n_heads: usize,
    pub wq: ParamLeaf<T>,
    pub bq: ParamLeaf<T>,
    pub wk: ParamLeaf<T>,
    pub bk: ParamLeaf<T>,
    pub wv: ParamLeaf<T>,
    pub bv: ParamLeaf<T>,
    pub wo: ParamLeaf<T>,
    pub bo: ParamLeaf<T>,
}

pub struct AttentionCache<T> {
    x: Tensor<T>,
    n_query: usize,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// Softmax weights per head, before dropout: `n_query x L`.
    probs: Vec<Tensor<T>>,
    drops: Vec<DropoutMask<T>>,
    concat: Tensor<T>,
}

impl<T: Real> AttentionCache<T> {
    /// Attention weights of head `h` (rows = queries, cols = keys).
    pub fn weights(&self, h: usize) -> &Tensor<T> {
        &self.probs[h]
    }
}

fn head_slice<T: Real>(t: &Tensor<T>, h: usize, dh: usize) -> Tensor<T> {
    Tensor::from_fn(t.rows(), dh, |r, c| t.get(r, h * dh + c))
}

fn merge_head<T: Real>(dst: &mut Tensor<T>, src: &Tensor<T>, h: usize) {
    let dh = src.cols();
    for r in 0..src.rows() {
        dst.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(src.row(r));
    }
}

impl<T: Real> MultiHeadAttention<T> {
    /// Zero-initialized projections named `{prefix}.wq`, `{prefix}.bq`, ...
    pub fn new(prefix: &str, d_model: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by n_heads {n_heads}"
            )));
        }
        let w = |n: &str| ParamLeaf::zeros(format!("{prefix}.{n}"), d_model, d_model, true);
        let b = |n: &str| ParamLeaf::zeros(format!("{prefix}.{n}"), 1, d_model, false);
        Ok(Self {
            n_heads,
            wq: w("wq"),
            bq: b("bq"),
            wk: w("wk"),
            bk: b("bk"),
            wv: w("wv"),
            bv: b("bv"),
            wo: w("wo"),
            bo: b("bo"),
        })
    }

    pub fn d_model(&self) -> usize {
        self.wq.shape().0
    }

    pub fn leaves(&self) -> [&ParamLeaf<T>; 8] {
        [&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo]
    }

    pub fn leaves_mut(&mut self) -> [&mut ParamLeaf<T>; 8] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]
    }

    /// Self-attention over all `L` rows of `x`; `mask[j] == false` marks key `j` as padding.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mask: &[bool],
        attn_dropout: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor<T>, AttentionCache<T>)> {
        self.forward_queries(x, x.rows(), mask, attn_dropout, training, rng)
    }

    /// Like [`forward`](Self::forward) but only produces outputs for the first
    /// `n_query` positions. Keys and values still cover every row.
    pub fn forward_queries<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        n_query: usize,
        mask: &[bool],
        attn_dropout: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor<T>, AttentionCache<T>)> {
        let (len, d) = x.shape();
        if d != self.d_model() {
            return Err(Error::Shape {
                op: "attention",
                left: x.shape(),
                right: self.wq.shape(),
            });
        }
        if mask.len() != len || n_query > len {
            return Err(Error::Shape {
                op: "attention mask",
                left: x.shape(),
                right: (mask.len(), n_query),
            });
        }
        let dh = d / self.n_heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let xq = if n_query == len { x.clone() } else { x.head_rows(n_query) };
        let q = linear(&xq, &self.wq, &self.bq)?;
        let k = linear(x, &self.wk, &self.bk)?;
        let v = linear(x, &self.wv, &self.bv)?;

        let mut concat = Tensor::zeros(n_query, d);
        let mut probs = Vec::with_capacity(self.n_heads);
        let mut drops = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = head_slice(&q, h, dh);
            let kh = head_slice(&k, h, dh);
            let vh = head_slice(&v, h, dh);
            let mut s = Tensor::zeros(n_query, len);
            gemm_into(scale, &qh, Trans::No, &kh, Trans::Yes, T::zero(), &mut s)?;
            masked_softmax_rows(&mut s, mask);
            let mut p = s.clone();
            let drop = dropout(&mut p, attn_dropout, training, rng);
            let oh = matmul(&p, Trans::No, &vh, Trans::No)?;
            merge_head(&mut concat, &oh, h);
            probs.push(s);
            drops.push(drop);
        }
        let out = linear(&concat, &self.wo, &self.bo)?;
        let cache = AttentionCache {
            x: x.clone(),
            n_query,
            q,
            k,
            v,
            probs,
            drops,
            concat,
        };
        Ok((out, cache))
    }

    /// Accumulates projection gradients; returns `dL/dx` for all `L` rows.
    pub fn backward(&mut self, cache: &AttentionCache<T>, dout: &Tensor<T>) -> Result<Tensor<T>> {
        let (len, d) = cache.x.shape();
        let nq = cache.n_query;
        let dh = d / self.n_heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let dconcat = linear_backward(&cache.concat, &mut self.wo, &mut self.bo, dout)?;

        let mut dq = Tensor::zeros(nq, d);
        let mut dk = Tensor::zeros(len, d);
        let mut dv = Tensor::zeros(len, d);
        for h in 0..self.n_heads {
            let qh = head_slice(&cache.q, h, dh);
            let kh = head_slice(&cache.k, h, dh);
            let vh = head_slice(&cache.v, h, dh);
            let doh = head_slice(&dconcat, h, dh);
            let p = &cache.probs[h];
            let mut p_drop = p.clone();
            cache.drops[h].apply(&mut p_drop);

            let dvh = matmul(&p_drop, Trans::Yes, &doh, Trans::No)?;
            let mut dp = matmul(&doh, Trans::No, &vh, Trans::Yes)?;
            cache.drops[h].apply(&mut dp);
            // softmax backward: dS = P * (dP - rowsum(P * dP))
            for r in 0..nq {
                let pr = p.row(r);
                let dpr = dp.row_mut(r);
                let dot: T = pr.iter().zip(dpr.iter()).map(|(&a, &b)| a * b).sum();
                for (g, &pv) in dpr.iter_mut().zip(pr) {
                    *g = pv * (*g - dot) * scale;
                }
            }
            let ds = dp;
            let dqh = matmul(&ds, Trans::No, &kh, Trans::No)?;
            let dkh = matmul(&ds, Trans::Yes, &qh, Trans::No)?;
            merge_head(&mut dq, &dqh, h);
            merge_head(&mut dk, &dkh, h);
            merge_head(&mut dv, &dvh, h);
        }

        let xq = if nq == len { cache.x.clone() } else { cache.x.head_rows(nq) };
        let dxq = linear_backward(&xq, &mut self.wq, &mut self.bq, &dq)?;
        let mut dx = linear_backward(&cache.x, &mut self.wk, &mut self.bk, &dk)?;
        dx.add_assign(&linear_backward(&cache.x, &mut self.wv, &mut self.bv, &dv)?);
        for r in 0..nq {
            for (a, &b) in dx.row_mut(r).iter_mut().zip(dxq.row(r)) {
                *a += b;
            }
        }
        Ok(dx)
    }
}

/// Row softmax where masked columns get weight exactly zero. A row with no
/// visible key becomes all zeros.
fn masked_softmax_rows<T: Real>(s: &mut Tensor<T>, mask: &[bool]) {
    for r in 0..s.rows() {
        let row = s.row_mut(r);
        let mut max = T::neg_infinity();
        for (v, &m) in row.iter_mut().zip(mask) {
            if m {
                max = max.max(*v);
            } else {
                *v = T::neg_infinity();
            }
        }
        if max == T::neg_infinity() {
            row.iter_mut().for_each(|v| *v = T::zero());
            continue;
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}
