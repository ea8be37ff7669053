use rand::Rng;

use super::config::Variant;
use super::params::{EnergyHead, LayerNormParams, ModelParams};
use crate::error::{Error, Result};
use crate::nn::{
    dropout, dropout_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward,
    AttentionCache, DropoutMask, LayerNormCache, Tensor, LN_EPS,
};
use crate::real::Real;
use crate::tokenizer::TokenBatch;

struct LayerTrace<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    n_query: usize,
    ln2: LayerNormCache<T>,
    ff_in: Tensor<T>,
    ff_pre: Tensor<T>,
    ff_drop: DropoutMask<T>,
    ff_act: Tensor<T>,
}

struct HeadTrace<T> {
    final_ln: LayerNormCache<T>,
    head_ln: LayerNormCache<T>,
    u: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
}

enum Body<T> {
    Encoder(Vec<LayerTrace<T>>),
    MeanPool,
}

/// Intermediates of one row's forward pass, consumed by [`ModelParams::backward`].
pub struct ForwardTrace<T> {
    pub energy: T,
    /// Pooled representation after the final layer norm, fed to the head.
    pub cls_state: Vec<T>,
    ids: Vec<u32>,
    body: Body<T>,
    head: HeadTrace<T>,
}

fn ln<T: Real>(x: &Tensor<T>, p: &LayerNormParams<T>) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    layer_norm(x, &p.gain, &p.bias, LN_EPS)
}

fn ln_back<T: Real>(c: &LayerNormCache<T>, p: &mut LayerNormParams<T>, dy: &Tensor<T>) -> Tensor<T> {
    layer_norm_backward(c, &mut p.gain, &mut p.bias, dy)
}

impl<T: Real> EnergyHead<T> {
    fn forward(&self, h: &Tensor<T>) -> Result<(T, Tensor<T>, LayerNormCache<T>, Tensor<T>, Tensor<T>)> {
        let (u, head_ln) = ln(h, &self.ln)?;
        let pre = linear(&u, &self.w1, &self.b1)?;
        let act = gelu(&pre);
        let e = linear(&act, &self.w2, &self.b2)?;
        Ok((e.get(0, 0), u, head_ln, pre, act))
    }
}

impl<T: Real> ModelParams<T> {
    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Data("empty token row".into()));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::Data(format!(
                "row of {} tokens exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::Data(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// `tok_emb[id] * sqrt(d) + pos_emb[j]` for each position.
    fn embed(&self, ids: &[u32]) -> Tensor<T> {
        let d = self.config.d_model;
        let scale = T::lit((d as f64).sqrt());
        let mut x = Tensor::zeros(ids.len(), d);
        for (j, &id) in ids.iter().enumerate() {
            let tok = self.tok_emb.value.row(id as usize);
            let row = x.row_mut(j);
            match &self.pos_emb {
                Some(p) => {
                    for ((o, &t), &q) in row.iter_mut().zip(tok).zip(p.value.row(j)) {
                        *o = t * scale + q;
                    }
                }
                None => {
                    for (o, &t) in row.iter_mut().zip(tok) {
                        *o = t * scale;
                    }
                }
            }
        }
        x
    }

    /// `mean_j tok_emb[id_j] * sqrt(d) + mean_j pos_emb[j]`, summed in f64 so
    /// that reordering the tokens gives bitwise the same result.
    fn mean_embedding(&self, ids: &[u32]) -> Tensor<T> {
        let d = self.config.d_model;
        let n = ids.len() as f64;
        let mut tok = vec![0.0f64; d];
        for &id in ids {
            for (a, v) in tok.iter_mut().zip(self.tok_emb.value.row(id as usize)) {
                *a += v.as_f64();
            }
        }
        let mut pos = vec![0.0f64; d];
        if let Some(p) = &self.pos_emb {
            for j in 0..ids.len() {
                for (a, v) in pos.iter_mut().zip(p.value.row(j)) {
                    *a += v.as_f64();
                }
            }
        }
        let scale = (d as f64).sqrt();
        Tensor::from_fn(1, d, |_, c| T::lit(tok[c] / n * scale + pos[c] / n))
    }

    /// Energy of one unpadded token row. Dropout is active only when `training`.
    pub fn forward_row<R: Rng + ?Sized>(&self, ids: &[u32], training: bool, rng: &mut R) -> Result<ForwardTrace<T>> {
        self.check_ids(ids)?;
        let (pooled, body) = match self.config.variant {
            Variant::Transformer => {
                let x = self.embed(ids);
                x.ensure_finite("embedding")?;
                self.encode(x, training, rng)?
            }
            Variant::MlpBaseline => {
                let m = self.mean_embedding(ids);
                m.ensure_finite("embedding")?;
                (m, Body::MeanPool)
            }
        };
        let (h, final_ln) = ln(&pooled, &self.final_ln)?;
        let (energy, u, head_ln, pre, act) = self.head.forward(&h)?;
        if !energy.is_finite() {
            return Err(Error::NonFinite("energy head output".into()));
        }
        Ok(ForwardTrace {
            energy,
            cls_state: h.row(0).to_vec(),
            ids: ids.to_vec(),
            body,
            head: HeadTrace {
                final_ln,
                head_ln,
                u,
                pre,
                act,
            },
        })
    }

    fn encode<R: Rng + ?Sized>(&self, mut x: Tensor<T>, training: bool, rng: &mut R) -> Result<(Tensor<T>, Body<T>)> {
        let len = x.rows();
        let mask = vec![true; len];
        let p = self.config.dropout;
        let mut traces = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            // only the CLS row of the last layer reaches the head
            let n_query = if l + 1 == self.layers.len() { 1 } else { len };
            let (a, ln1) = ln(&x, &layer.ln1)?;
            let (att, attn) = layer.attn.forward_queries(&a, n_query, &mask, p, training, rng)?;
            if n_query < x.rows() {
                x = x.head_rows(n_query);
            }
            x.add_assign(&att);
            let (ff_in, ln2) = ln(&x, &layer.ln2)?;
            let ff_pre = linear(&ff_in, &layer.ff1_w, &layer.ff1_b)?;
            let mut ff_act = gelu(&ff_pre);
            let ff_drop = dropout(&mut ff_act, p, training, rng);
            let f = linear(&ff_act, &layer.ff2_w, &layer.ff2_b)?;
            x.add_assign(&f);
            x.ensure_finite(&format!("enc.{l}"))?;
            traces.push(LayerTrace {
                ln1,
                attn,
                n_query,
                ln2,
                ff_in,
                ff_pre,
                ff_drop,
                ff_act,
            });
        }
        Ok((x.head_rows(1), Body::Encoder(traces)))
    }

    /// Accumulates `d_energy * dE/dtheta` into every leaf's gradient.
    pub fn backward(&mut self, trace: &ForwardTrace<T>, d_energy: T) -> Result<()> {
        let d = self.config.d_model;
        let ht = &trace.head;
        let de = Tensor::filled(1, 1, d_energy);
        let head = &mut self.head;
        let mut g = linear_backward(&ht.act, &mut head.w2, &mut head.b2, &de)?;
        g = gelu_backward(&ht.pre, &g);
        g = linear_backward(&ht.u, &mut head.w1, &mut head.b1, &g)?;
        g = ln_back(&ht.head_ln, &mut head.ln, &g);
        let dpooled = ln_back(&ht.final_ln, &mut self.final_ln, &g);

        let len = trace.ids.len();
        let dx = match &trace.body {
            Body::MeanPool => {
                let inv = T::from_usize(len).unwrap().recip();
                let row: Vec<T> = dpooled.row(0).iter().map(|&v| v * inv).collect();
                Tensor::from_fn(len, d, |_, c| row[c])
            }
            Body::Encoder(traces) => {
                let mut dx = dpooled;
                for (layer, t) in self.layers.iter_mut().zip(traces).rev() {
                    let mut dg = linear_backward(&t.ff_act, &mut layer.ff2_w, &mut layer.ff2_b, &dx)?;
                    dropout_backward(&t.ff_drop, &mut dg);
                    let dh = gelu_backward(&t.ff_pre, &dg);
                    let dff_in = linear_backward(&t.ff_in, &mut layer.ff1_w, &mut layer.ff1_b, &dh)?;
                    dx.add_assign(&ln_back(&t.ln2, &mut layer.ln2, &dff_in));

                    let da = layer.attn.backward(&t.attn, &dx)?;
                    let mut dx_in = ln_back(&t.ln1, &mut layer.ln1, &da);
                    for r in 0..t.n_query {
                        for (o, &v) in dx_in.row_mut(r).iter_mut().zip(dx.row(r)) {
                            *o += v;
                        }
                    }
                    dx = dx_in;
                }
                dx
            }
        };

        let scale = T::lit((d as f64).sqrt());
        for (j, &id) in trace.ids.iter().enumerate() {
            let src = dx.row(j);
            for (g, &v) in self.tok_emb.grad.row_mut(id as usize).iter_mut().zip(src) {
                *g += v * scale;
            }
            if let Some(p) = &mut self.pos_emb {
                for (g, &v) in p.grad.row_mut(j).iter_mut().zip(src) {
                    *g += v;
                }
            }
        }
        Ok(())
    }

    /// Per-row traces for a padded batch; each row is processed over its true length.
    pub fn forward_energy<R: Rng + ?Sized>(
        &self,
        batch: &TokenBatch,
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<ForwardTrace<T>>> {
        (0..batch.rows())
            .map(|r| self.forward_row(batch.tokens(r), training, rng))
            .collect()
    }

    /// Eval-mode energies of a padded batch.
    pub fn energies(&self, batch: &TokenBatch) -> Result<Vec<T>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        (0..batch.rows())
            .map(|r| Ok(self.forward_row(batch.tokens(r), false, &mut rng)?.energy))
            .collect()
    }

    /// Eval-mode energy of a single unpadded row.
    pub fn energy(&self, ids: &[u32]) -> Result<T> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self.forward_row(ids, false, &mut rng)?.energy)
    }
}
