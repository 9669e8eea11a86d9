//! Batch-major forward and backward passes through the encoder.
//!
//! Activations for a batch of B sequences are stored as (B·seq_len, dim)
//! matrices so the linear layers run as single GEMMs; attention loops over
//! (sequence, head) pairs. The backward pass recomputes attention
//! probabilities from cached Q/K instead of caching the B·H score matrices.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;
use super::weights::ModelWeights;
use super::ModelConfig;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// GELU, tanh approximation.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/π)
    let a = T::from_f64(0.044_715);
    let u = c * (x + a * x * x * x);
    T::from_f64(0.5) * x * (T::one() + u.tanh())
}

/// d GELU / dx for the tanh approximation.
#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let a = T::from_f64(0.044_715);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let sech2 = T::one() - th * th;
    half * (T::one() + th) + half * x * sech2 * c * (T::one() + T::from_f64(3.0) * a * x * x)
}

/// Row statistics cached by layer norm for the backward pass.
#[derive(Debug, Clone)]
pub struct LnCache<T: Scalar> {
    pub xhat: Array2<T>,
    pub invstd: Array1<T>,
}

/// Row-wise layer norm: out = gain ⊙ (x − μ)/σ + bias.
pub fn layer_norm_fwd<T: Scalar>(
    x: &Array2<T>,
    gain: &Array1<T>,
    bias: &Array1<T>,
) -> (Array2<T>, LnCache<T>) {
    let d = x.ncols();
    let inv_d = T::from_f64(1.0 / d as f64);
    let eps = T::from_f64(LN_EPS);
    let mut xhat = x.clone();
    let mut invstd = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(invstd.iter_mut()) {
        let mean = row.iter().fold(T::zero(), |a, &b| a + b) * inv_d;
        let var = row
            .iter()
            .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
            * inv_d;
        let inv = (var + eps).sqrt().recip();
        *is = inv;
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    let mut out = xhat.clone();
    out *= &gain.view().insert_axis(Axis(0));
    out += &bias.view().insert_axis(Axis(0));
    (
        out,
        LnCache {
            xhat,
            invstd,
        },
    )
}

/// Backward through layer norm; returns (dx, dgain, dbias).
pub fn layer_norm_bwd<T: Scalar>(
    dout: &Array2<T>,
    cache: &LnCache<T>,
    gain: &Array1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let d = dout.ncols();
    let inv_d = T::from_f64(1.0 / d as f64);
    let dbias = dout.sum_axis(Axis(0));
    let dgain = (dout * &cache.xhat).sum_axis(Axis(0));
    let mut dx = Array2::zeros(dout.raw_dim());
    for (((mut dx_row, dout_row), xhat_row), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(dout.rows())
        .zip(cache.xhat.rows())
        .zip(cache.invstd.iter())
    {
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for ((&g, &d_o), &xh) in gain.iter().zip(dout_row.iter()).zip(xhat_row.iter()) {
            let dxhat = g * d_o;
            mean_dxhat = mean_dxhat + dxhat;
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xh;
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        for (((dx_v, &g), &d_o), &xh) in dx_row
            .iter_mut()
            .zip(gain.iter())
            .zip(dout_row.iter())
            .zip(xhat_row.iter())
        {
            let dxhat = g * d_o;
            *dx_v = inv * (dxhat - mean_dxhat - xh * mean_dxhat_xhat);
        }
    }
    (dx, dgain, dbias)
}

/// Numerically stable row-wise softmax, in place.
pub fn softmax_rows<T: Scalar>(scores: &mut Array2<T>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let inv = sum.recip();
        row.mapv_inplace(|v| v * inv);
    }
}

/// Backward through a row-wise softmax given its output probabilities.
pub fn softmax_rows_bwd<T: Scalar>(probs: &Array2<T>, dprobs: &Array2<T>) -> Array2<T> {
    let mut ds = Array2::zeros(probs.raw_dim());
    for ((mut ds_row, p_row), dp_row) in ds
        .rows_mut()
        .into_iter()
        .zip(probs.rows())
        .zip(dprobs.rows())
    {
        let dot = p_row
            .iter()
            .zip(dp_row.iter())
            .fold(T::zero(), |a, (&p, &dp)| a + p * dp);
        for ((d, &p), &dp) in ds_row.iter_mut().zip(p_row.iter()).zip(dp_row.iter()) {
            *d = p * (dp - dot);
        }
    }
    ds
}

/// Inverted-dropout multiplier mask: 0 with probability `p`, else 1/(1−p).
/// Draws are f32 regardless of `T`, so f32 and f64 models see identical
/// masks for the same stream.
pub fn dropout_mask<T: Scalar>(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let keep = T::from_f64(1.0 / (1.0 - p));
    let p32 = p as f32;
    let mut mask = Array2::zeros((rows, cols));
    for v in mask.iter_mut() {
        *v = if rng.random::<f32>() < p32 {
            T::zero()
        } else {
            keep
        };
    }
    mask
}

/// Cached activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T: Scalar> {
    /// (batch, out_params) network outputs in normalized parameter space.
    pub y: Array2<T>,
    batch: usize,
    x: Array2<T>,
    h_pre: Array2<T>,
    h_act: Array2<T>,
    e: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    ctx: Array2<T>,
    mask_attn: Option<Array2<T>>,
    ln1: LnCache<T>,
    x1: Array2<T>,
    f_pre: Array2<T>,
    f_act: Array2<T>,
    mask_ffn: Option<Array2<T>>,
    ln2: LnCache<T>,
    x2: Array2<T>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Name the first layer whose activations contain a non-finite value.
    fn first_non_finite(&self) -> Option<&'static str> {
        let stages: [(&'static str, &Array2<T>); 11] = [
            ("embed_hidden", &self.h_pre),
            ("embed_out", &self.e),
            ("attn_q", &self.q),
            ("attn_k", &self.k),
            ("attn_v", &self.v),
            ("attn_ctx", &self.ctx),
            ("ln1", &self.x1),
            ("ffn_hidden", &self.f_pre),
            ("ffn_act", &self.f_act),
            ("ln2", &self.x2),
            ("compression", &self.y),
        ];
        stages
            .iter()
            .find(|(_, a)| a.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| *name)
    }
}

/// The encoder with its constants (positional encoding, attention scale).
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    pe: Array2<T>,
    attn_scale: T,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let pe = super::pe::positional_encoding(config.seq_len, config.d_model)
            .mapv(T::from_f64);
        let attn_scale = T::from_f64(1.0 / (config.head_dim() as f64).sqrt());
        Ok(Self {
            config,
            pe,
            attn_scale,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Run the encoder on a batch laid out (B·seq_len, in_channels).
    /// `dropout_rng` enables training-mode dropout; pass `None` for
    /// deterministic inference.
    pub fn forward(
        &self,
        w: &ModelWeights<T>,
        x: &Array2<T>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass<T>> {
        let cfg = &self.config;
        let l = cfg.seq_len;
        if x.ncols() != cfg.in_channels || x.nrows() == 0 || x.nrows() % l != 0 {
            return Err(Error::InvalidInput(format!(
                "input must be (B·{l}, {}), got {:?}",
                cfg.in_channels,
                x.shape()
            )));
        }
        let batch = x.nrows() / l;
        let d = cfg.d_model;

        // per-timestep embedding MLP
        let mut h_pre = x.dot(&w.embed_w1);
        h_pre += &w.embed_b1.view().insert_axis(Axis(0));
        let mut h_act = h_pre.clone();
        h_act.mapv_inplace(gelu);
        let mut e = h_act.dot(&w.embed_w2);
        e += &w.embed_b2.view().insert_axis(Axis(0));
        for mut chunk in e.axis_chunks_iter_mut(Axis(0), l) {
            chunk += &self.pe;
        }

        // multi-head self-attention
        let mut q = e.dot(&w.attn_wq);
        q += &w.attn_bq.view().insert_axis(Axis(0));
        let mut k = e.dot(&w.attn_wk);
        k += &w.attn_bk.view().insert_axis(Axis(0));
        let mut v = e.dot(&w.attn_wv);
        v += &w.attn_bv.view().insert_axis(Axis(0));
        let dh = cfg.head_dim();
        let mut ctx = Array2::zeros((batch * l, d));
        for s_i in 0..batch {
            let rows = s_i * l..(s_i + 1) * l;
            for h in 0..cfg.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|x| x * self.attn_scale);
                softmax_rows(&mut scores);
                let c = scores.dot(&vh);
                ctx.slice_mut(s![rows.clone(), cols]).assign(&c);
            }
        }
        let mut attn = ctx.dot(&w.attn_wo);
        attn += &w.attn_bo.view().insert_axis(Axis(0));

        let mask_attn = dropout_rng
            .as_deref_mut()
            .map(|rng| dropout_mask::<T>(batch * l, d, cfg.dropout, rng));
        if let Some(m) = &mask_attn {
            attn *= m;
        }

        // post-norm residual block 1
        let res1 = &e + &attn;
        let (x1, ln1) = layer_norm_fwd(&res1, &w.ln1_gain, &w.ln1_bias);

        // feed-forward
        let mut f_pre = x1.dot(&w.ffn_w1);
        f_pre += &w.ffn_b1.view().insert_axis(Axis(0));
        let mut f_act = f_pre.clone();
        f_act.mapv_inplace(gelu);
        let mut f_out = f_act.dot(&w.ffn_w2);
        f_out += &w.ffn_b2.view().insert_axis(Axis(0));

        let mask_ffn = dropout_rng
            .as_deref_mut()
            .map(|rng| dropout_mask::<T>(batch * l, d, cfg.dropout, rng));
        if let Some(m) = &mask_ffn {
            f_out *= m;
        }

        // post-norm residual block 2
        let res2 = &x1 + &f_out;
        let (x2, ln2) = layer_norm_fwd(&res2, &w.ln2_gain, &w.ln2_bias);

        // flatten and compress
        let flat = x2
            .view()
            .into_shape_with_order((batch, l * d))
            .expect("x2 is contiguous");
        let mut y = flat.dot(&w.comp_w);
        y += &w.comp_b.view().insert_axis(Axis(0));

        let fwd = ForwardPass {
            y,
            batch,
            x: x.clone(),
            h_pre,
            h_act,
            e,
            q,
            k,
            v,
            ctx,
            mask_attn,
            ln1,
            x1,
            f_pre,
            f_act,
            mask_ffn,
            ln2,
            x2,
        };
        if fwd.y.iter().any(|v| !v.is_finite()) {
            let layer = fwd.first_non_finite().unwrap_or("compression");
            return Err(Error::NonFinite {
                context: format!("forward pass, layer {layer}"),
            });
        }
        Ok(fwd)
    }

    /// Gradients of a scalar loss w.r.t. every weight, given dL/dy.
    pub fn backward(
        &self,
        w: &ModelWeights<T>,
        fwd: &ForwardPass<T>,
        dy: &Array2<T>,
    ) -> Result<ModelWeights<T>> {
        let cfg = &self.config;
        let l = cfg.seq_len;
        let d = cfg.d_model;
        let batch = fwd.batch;
        if dy.shape() != [batch, cfg.out_params] {
            return Err(Error::InvalidInput(format!(
                "dy must be ({batch}, {}), got {:?}",
                cfg.out_params,
                dy.shape()
            )));
        }
        let mut g = ModelWeights::zeros(cfg);

        // compression head
        let flat = fwd
            .x2
            .view()
            .into_shape_with_order((batch, l * d))
            .expect("x2 is contiguous");
        g.comp_w = flat.t().dot(dy);
        g.comp_b = dy.sum_axis(Axis(0));
        let dx2 = dy
            .dot(&w.comp_w.t())
            .into_shape_with_order((batch * l, d))
            .expect("contiguous");

        // residual block 2
        let (dres2, dg2, db2) = layer_norm_bwd(&dx2, &fwd.ln2, &w.ln2_gain);
        g.ln2_gain = dg2;
        g.ln2_bias = db2;
        let mut df_out = dres2.clone();
        if let Some(m) = &fwd.mask_ffn {
            df_out *= m;
        }
        g.ffn_b2 = df_out.sum_axis(Axis(0));
        g.ffn_w2 = fwd.f_act.t().dot(&df_out);
        let df_act = df_out.dot(&w.ffn_w2.t());
        let mut df_pre = fwd.f_pre.clone();
        df_pre.mapv_inplace(gelu_grad);
        df_pre *= &df_act;
        g.ffn_b1 = df_pre.sum_axis(Axis(0));
        g.ffn_w1 = fwd.x1.t().dot(&df_pre);
        let dx1 = &dres2 + &df_pre.dot(&w.ffn_w1.t());

        // residual block 1
        let (dres1, dg1, db1) = layer_norm_bwd(&dx1, &fwd.ln1, &w.ln1_gain);
        g.ln1_gain = dg1;
        g.ln1_bias = db1;
        let mut dattn = dres1.clone();
        if let Some(m) = &fwd.mask_attn {
            dattn *= m;
        }
        g.attn_bo = dattn.sum_axis(Axis(0));
        g.attn_wo = fwd.ctx.t().dot(&dattn);
        let dctx = dattn.dot(&w.attn_wo.t());

        // attention cores, probabilities recomputed from Q/K
        let dh = cfg.head_dim();
        let mut dq = Array2::zeros((batch * l, d));
        let mut dk = Array2::zeros((batch * l, d));
        let mut dv = Array2::zeros((batch * l, d));
        for s_i in 0..batch {
            let rows = s_i * l..(s_i + 1) * l;
            for h in 0..cfg.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = fwd.q.slice(s![rows.clone(), cols.clone()]);
                let kh = fwd.k.slice(s![rows.clone(), cols.clone()]);
                let vh = fwd.v.slice(s![rows.clone(), cols.clone()]);
                let mut probs = qh.dot(&kh.t());
                probs.mapv_inplace(|x| x * self.attn_scale);
                softmax_rows(&mut probs);
                let dctx_sh = dctx.slice(s![rows.clone(), cols.clone()]);
                let dvh = probs.t().dot(&dctx_sh);
                let dprobs = dctx_sh.dot(&vh.t());
                let mut dscores = softmax_rows_bwd(&probs, &dprobs);
                dscores.mapv_inplace(|x| x * self.attn_scale);
                let dqh = dscores.dot(&kh);
                let dkh = dscores.t().dot(&qh);
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&dqh);
                dk.slice_mut(s![rows.clone(), cols.clone()]).assign(&dkh);
                dv.slice_mut(s![rows.clone(), cols]).assign(&dvh);
            }
        }
        g.attn_bq = dq.sum_axis(Axis(0));
        g.attn_wq = fwd.e.t().dot(&dq);
        g.attn_bk = dk.sum_axis(Axis(0));
        g.attn_wk = fwd.e.t().dot(&dk);
        g.attn_bv = dv.sum_axis(Axis(0));
        g.attn_wv = fwd.e.t().dot(&dv);

        let mut de = dres1;
        de += &dq.dot(&w.attn_wq.t());
        de += &dk.dot(&w.attn_wk.t());
        de += &dv.dot(&w.attn_wv.t());

        // embedding MLP (positional encoding is constant)
        g.embed_b2 = de.sum_axis(Axis(0));
        g.embed_w2 = fwd.h_act.t().dot(&de);
        let dh_act = de.dot(&w.embed_w2.t());
        let mut dh_pre = fwd.h_pre.clone();
        dh_pre.mapv_inplace(gelu_grad);
        dh_pre *= &dh_act;
        g.embed_b1 = dh_pre.sum_axis(Axis(0));
        g.embed_w1 = fwd.x.t().dot(&dh_pre);

        g.check_finite("backward pass")?;
        Ok(g)
    }
}
