//! The trainable tensors: per-timestep embedding MLP, one post-norm encoder
//! layer (attention + FFN + two layer norms), and the compression head that
//! maps the flattened encoder output to the nine normalized parameters.

use ndarray::{Array1, Array2, Zip};
use rand::Rng;

use super::scalar::Scalar;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::io::NamedTensor;
use crate::rng::{derive_rng, StreamKind};

/// Expands a macro once per trainable tensor field, in serialization order.
macro_rules! for_each_tensor {
    ($m:ident) => {
        $m!(embed_w1);
        $m!(embed_b1);
        $m!(embed_w2);
        $m!(embed_b2);
        $m!(attn_wq);
        $m!(attn_bq);
        $m!(attn_wk);
        $m!(attn_bk);
        $m!(attn_wv);
        $m!(attn_bv);
        $m!(attn_wo);
        $m!(attn_bo);
        $m!(ln1_gain);
        $m!(ln1_bias);
        $m!(ffn_w1);
        $m!(ffn_b1);
        $m!(ffn_w2);
        $m!(ffn_b2);
        $m!(ln2_gain);
        $m!(ln2_bias);
        $m!(comp_w);
        $m!(comp_b);
    };
}

/// All trainable tensors. Weight matrices are (in, out); activations are
/// row vectors, so every projection is `x.dot(w) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T: Scalar> {
    pub embed_w1: Array2<T>,
    pub embed_b1: Array1<T>,
    pub embed_w2: Array2<T>,
    pub embed_b2: Array1<T>,
    pub attn_wq: Array2<T>,
    pub attn_bq: Array1<T>,
    pub attn_wk: Array2<T>,
    pub attn_bk: Array1<T>,
    pub attn_wv: Array2<T>,
    pub attn_bv: Array1<T>,
    pub attn_wo: Array2<T>,
    pub attn_bo: Array1<T>,
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    pub ffn_w1: Array2<T>,
    pub ffn_b1: Array1<T>,
    pub ffn_w2: Array2<T>,
    pub ffn_b2: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
    pub comp_w: Array2<T>,
    pub comp_b: Array1<T>,
}

impl<T: Scalar> ModelWeights<T> {
    /// All-zero tensors with shapes from `config` (used for gradients and
    /// optimizer moments).
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        Self {
            embed_w1: Array2::zeros((config.in_channels, config.embed_hidden)),
            embed_b1: Array1::zeros(config.embed_hidden),
            embed_w2: Array2::zeros((config.embed_hidden, d)),
            embed_b2: Array1::zeros(d),
            attn_wq: Array2::zeros((d, d)),
            attn_bq: Array1::zeros(d),
            attn_wk: Array2::zeros((d, d)),
            attn_bk: Array1::zeros(d),
            attn_wv: Array2::zeros((d, d)),
            attn_bv: Array1::zeros(d),
            attn_wo: Array2::zeros((d, d)),
            attn_bo: Array1::zeros(d),
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            ffn_w1: Array2::zeros((d, config.ffn_dim)),
            ffn_b1: Array1::zeros(config.ffn_dim),
            ffn_w2: Array2::zeros((config.ffn_dim, d)),
            ffn_b2: Array1::zeros(d),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            comp_w: Array2::zeros((config.seq_len * d, config.out_params)),
            comp_b: Array1::zeros(config.out_params),
        }
    }

    /// He-style fan-in initialization, seed-controlled: weight matrices draw
    /// N(0, sqrt(2 / fan_in)), biases start at zero, layer-norm gains at one.
    /// Each tensor has its own derived stream, so adding a tensor does not
    /// reshuffle the others.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut w = Self::zeros(config);
        let mut tensor_index = 0u64;
        macro_rules! init_matrix {
            ($fld:ident) => {{
                let fan_in = w.$fld.nrows();
                let std = (2.0 / fan_in as f64).sqrt();
                let mut rng = derive_rng(seed, &[StreamKind::Init as u64, tensor_index]);
                let normal = rand_distr::Normal::new(0.0f64, std).expect("std is finite");
                for v in w.$fld.iter_mut() {
                    *v = T::from_f64(rng.sample(normal));
                }
                tensor_index += 1;
            }};
        }
        init_matrix!(embed_w1);
        init_matrix!(embed_w2);
        init_matrix!(attn_wq);
        init_matrix!(attn_wk);
        init_matrix!(attn_wv);
        init_matrix!(attn_wo);
        init_matrix!(ffn_w1);
        init_matrix!(ffn_w2);
        init_matrix!(comp_w);
        let _ = tensor_index;
        w.ln1_gain.fill(T::one());
        w.ln2_gain.fill(T::one());
        w
    }

    /// Total trainable scalar count.
    pub fn param_count(&self) -> usize {
        self.breakdown().iter().map(|(_, n)| n).sum()
    }

    /// (tensor name, scalar count) in serialization order.
    pub fn breakdown(&self) -> Vec<(&'static str, usize)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($fld:ident) => {
                out.push((stringify!($fld), self.$fld.len()));
            };
        }
        for_each_tensor!(push);
        out
    }

    /// Visit every tensor as (name, shape, flat data).
    pub fn visit(&self, mut f: impl FnMut(&'static str, &[usize], &[T])) {
        macro_rules! v {
            ($fld:ident) => {
                f(
                    stringify!($fld),
                    self.$fld.shape(),
                    self.$fld.as_slice().expect("tensors are contiguous"),
                );
            };
        }
        for_each_tensor!(v);
    }

    /// Visit every tensor mutably as (name, flat data).
    pub fn visit_mut(&mut self, mut f: impl FnMut(&'static str, &mut [T])) {
        macro_rules! v {
            ($fld:ident) => {
                f(
                    stringify!($fld),
                    self.$fld.as_slice_mut().expect("tensors are contiguous"),
                );
            };
        }
        for_each_tensor!(v);
    }

    /// Elementwise map over (self, other) pairs.
    pub fn zip_mut(&mut self, other: &Self, mut f: impl FnMut(&mut T, T)) {
        macro_rules! z {
            ($fld:ident) => {
                Zip::from(&mut self.$fld)
                    .and(&other.$fld)
                    .for_each(|a, &b| f(a, b));
            };
        }
        for_each_tensor!(z);
    }

    /// Elementwise map over (weights, grads, m, v) quadruples, mutating
    /// weights and both moment tensors.
    pub fn zip_adam(
        &mut self,
        grads: &Self,
        m: &mut Self,
        v: &mut Self,
        mut f: impl FnMut(&mut T, T, &mut T, &mut T),
    ) {
        macro_rules! z {
            ($fld:ident) => {
                Zip::from(&mut self.$fld)
                    .and(&grads.$fld)
                    .and(&mut m.$fld)
                    .and(&mut v.$fld)
                    .for_each(|w, &g, mi, vi| f(w, g, mi, vi));
            };
        }
        for_each_tensor!(z);
    }

    /// Multiply every value in place.
    pub fn scale(&mut self, factor: T) {
        macro_rules! s {
            ($fld:ident) => {
                self.$fld.mapv_inplace(|x| x * factor);
            };
        }
        for_each_tensor!(s);
    }

    /// Sum of squares over all tensors, accumulated in f64.
    pub fn sq_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        macro_rules! n {
            ($fld:ident) => {
                for &x in self.$fld.iter() {
                    let x = x.as_f64();
                    acc += x * x;
                }
            };
        }
        for_each_tensor!(n);
        acc
    }

    /// Error naming the first tensor containing a non-finite value.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        let mut bad: Option<&'static str> = None;
        macro_rules! c {
            ($fld:ident) => {
                if bad.is_none() && self.$fld.iter().any(|v| !v.is_finite()) {
                    bad = Some(stringify!($fld));
                }
            };
        }
        for_each_tensor!(c);
        match bad {
            Some(name) => Err(Error::NonFinite {
                context: format!("{context}: tensor {name}"),
            }),
            None => Ok(()),
        }
    }

    /// Convert precision (exact for f32 → f64).
    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        macro_rules! conv {
            ($fld:ident) => {
                self.$fld.mapv(|x| U::from_f64(x.as_f64()))
            };
        }
        ModelWeights {
            embed_w1: conv!(embed_w1),
            embed_b1: conv!(embed_b1),
            embed_w2: conv!(embed_w2),
            embed_b2: conv!(embed_b2),
            attn_wq: conv!(attn_wq),
            attn_bq: conv!(attn_bq),
            attn_wk: conv!(attn_wk),
            attn_bk: conv!(attn_bk),
            attn_wv: conv!(attn_wv),
            attn_bv: conv!(attn_bv),
            attn_wo: conv!(attn_wo),
            attn_bo: conv!(attn_bo),
            ln1_gain: conv!(ln1_gain),
            ln1_bias: conv!(ln1_bias),
            ffn_w1: conv!(ffn_w1),
            ffn_b1: conv!(ffn_b1),
            ffn_w2: conv!(ffn_w2),
            ffn_b2: conv!(ffn_b2),
            ln2_gain: conv!(ln2_gain),
            ln2_bias: conv!(ln2_bias),
            comp_w: conv!(comp_w),
            comp_b: conv!(comp_b),
        }
    }

    /// Flatten to named tensors for serialization.
    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit(|name, shape, data| {
            out.push(NamedTensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.iter().map(|v| v.as_f64() as f32).collect(),
            });
        });
        out
    }

    /// Rebuild from named tensors, rejecting unknown names, duplicates,
    /// missing tensors, and shape mismatches.
    pub fn from_named(config: &ModelConfig, tensors: &[NamedTensor]) -> Result<Self> {
        let mut w = Self::zeros(config);
        let mut seen = std::collections::BTreeSet::new();
        for t in tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate tensor {}", t.name)));
            }
            let mut matched = false;
            macro_rules! fill {
                ($fld:ident) => {
                    if t.name == stringify!($fld) {
                        matched = true;
                        if w.$fld.shape() != t.shape.as_slice() {
                            return Err(Error::InvalidInput(format!(
                                "tensor {} has shape {:?}, expected {:?}",
                                t.name,
                                t.shape,
                                w.$fld.shape()
                            )));
                        }
                        for (dst, &src) in w.$fld.iter_mut().zip(t.data.iter()) {
                            *dst = T::from_f64(src as f64);
                        }
                    }
                };
            }
            for_each_tensor!(fill);
            if !matched {
                return Err(Error::InvalidInput(format!("unknown tensor name {}", t.name)));
            }
        }
        let expected = w.breakdown().len();
        if seen.len() != expected {
            return Err(Error::InvalidInput(format!(
                "weights file has {} tensors, expected {expected}",
                seen.len()
            )));
        }
        Ok(w)
    }
}
