//! Training loss: weighted sequence-reconstruction MSEs (decoded through the
//! fixed symbolic equations) plus symbolic-parameter MSEs scaled by dynamic
//! denominators, with the exact gradient back to the network outputs.
//!
//! Loss math always runs in f64; for an f32 model only the final dL/dy is
//! cast down. Gradients flow through the decoder, the parameter codec, and
//! the denominators themselves.

use ndarray::{Array2, Array3};

use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::preprocess::NormalizationSpec;
use crate::symbolic::{self, idx, ParamCodec, SignalKind, PARAM_COUNT, SEQ_LEN};

/// Sequence-loss weights: temperature, heart rate, SpO2.
pub const SEQ_WEIGHT_TEMP: f64 = 0.5;
pub const SEQ_WEIGHT_HR: f64 = 2.0;
pub const SEQ_WEIGHT_SPO2: f64 = 0.5;

/// D(mse) = 1000 · 10^(1 − (clamp(mse, 0.1, 1) − 0.1)/0.9), in [1000, 10000].
/// Shrinks the symbolic-parameter terms as they converge.
pub fn dynamic_denominator(mse: f64) -> f64 {
    if mse <= 0.1 {
        10_000.0
    } else if mse >= 1.0 {
        1_000.0
    } else {
        1000.0 * 10f64.powf(1.0 - (mse - 0.1) / 0.9)
    }
}

/// d/dmse of the loss term mse / D(mse). Inside the active band the
/// denominator itself depends on mse; outside, D is clamped constant.
fn denominator_term_grad(mse: f64) -> f64 {
    let d = dynamic_denominator(mse);
    if mse <= 0.1 || mse >= 1.0 {
        1.0 / d
    } else {
        // D' = −D·ln(10)/0.9  ⇒  d(mse/D) = (1 + mse·ln10/0.9) / D
        (1.0 + mse * std::f64::consts::LN_10 / 0.9) / d
    }
}

/// Wrapped difference on the unit circle, in [−0.5, 0.5].
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    x - x.round()
}

/// The six component MSEs, their denominators, and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mse_t: f64,
    pub mse_hr: f64,
    pub mse_spo2: f64,
    pub mse_cp: f64,
    pub mse_mt: f64,
    pub mse_rhr: f64,
    pub d_cp: f64,
    pub d_mt: f64,
    pub d_rhr: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recombine the parts; equals `total` up to float noise.
    pub fn recompute_total(&self) -> f64 {
        SEQ_WEIGHT_TEMP * self.mse_t
            + SEQ_WEIGHT_HR * self.mse_hr
            + SEQ_WEIGHT_SPO2 * self.mse_spo2
            + self.mse_cp / self.d_cp
            + self.mse_mt / self.d_mt
            + self.mse_rhr / self.d_rhr
    }
}

/// One batch of training data, network layout.
#[derive(Debug, Clone)]
pub struct TrainingBatch<T: Scalar> {
    /// (B·96, 5) masked input as fed to the encoder.
    pub x: Array2<T>,
    /// (B, 96) scaled steps per sequence (never masked; decoder input).
    pub steps: Array2<T>,
    /// (B, 3, 96) clean normalized targets.
    pub targets: Array3<T>,
    /// (B, 9) true parameters in normalized space.
    pub true_norm: Array2<T>,
}

impl<T: Scalar> TrainingBatch<T> {
    pub fn batch_size(&self) -> usize {
        self.steps.nrows()
    }

    /// Assemble a batch from sequence sets. `input_blocks`, when given,
    /// substitutes (e.g. masked) copies of each record's channel-major 5×96
    /// input; steps and targets always come from the records themselves.
    pub fn assemble(
        records: &[&crate::synth::SequenceSet],
        input_blocks: Option<&[Vec<f32>]>,
        codec: &ParamCodec,
    ) -> Result<Self> {
        let b = records.len();
        if b == 0 {
            return Err(Error::InvalidInput("cannot assemble an empty batch".into()));
        }
        if let Some(blocks) = input_blocks {
            if blocks.len() != b {
                return Err(Error::InvalidInput(format!(
                    "{} input blocks for {b} records",
                    blocks.len()
                )));
            }
        }
        let channels = crate::preprocess::INPUT_CHANNELS;
        let mut x = Array2::zeros((b * SEQ_LEN, channels));
        let mut steps = Array2::zeros((b, SEQ_LEN));
        let mut targets = Array3::zeros((b, 3, SEQ_LEN));
        let mut true_norm = Array2::zeros((b, PARAM_COUNT));
        for (s_i, rec) in records.iter().enumerate() {
            let block = match input_blocks {
                Some(blocks) => &blocks[s_i],
                None => &rec.input,
            };
            if block.len() != channels * SEQ_LEN {
                return Err(Error::InvalidInput(format!(
                    "input block {s_i} has {} values",
                    block.len()
                )));
            }
            for t in 0..SEQ_LEN {
                for c in 0..channels {
                    x[[s_i * SEQ_LEN + t, c]] = T::from_f64(block[c * SEQ_LEN + t] as f64);
                }
                steps[[s_i, t]] = T::from_f64(rec.input[3 * SEQ_LEN + t] as f64);
                for sig in 0..3 {
                    targets[[s_i, sig, t]] =
                        T::from_f64(rec.target[sig * SEQ_LEN + t] as f64);
                }
            }
            let yn = codec.params_to_normalized(&rec.true_params);
            for j in 0..PARAM_COUNT {
                true_norm[[s_i, j]] = T::from_f64(yn[j]);
            }
        }
        Ok(Self {
            x,
            steps,
            targets,
            true_norm,
        })
    }
}

/// Combine per-batch breakdowns (with their batch sizes) into the breakdown
/// of the union, recomputing denominators and total from the pooled MSEs.
pub fn combine_breakdowns(parts: &[(LossBreakdown, usize)]) -> Option<LossBreakdown> {
    let n_total: usize = parts.iter().map(|(_, n)| n).sum();
    if n_total == 0 {
        return None;
    }
    let mut pooled = [0.0f64; 6];
    for (b, n) in parts {
        let w = *n as f64 / n_total as f64;
        pooled[0] += w * b.mse_t;
        pooled[1] += w * b.mse_hr;
        pooled[2] += w * b.mse_spo2;
        pooled[3] += w * b.mse_cp;
        pooled[4] += w * b.mse_mt;
        pooled[5] += w * b.mse_rhr;
    }
    let [mse_t, mse_hr, mse_spo2, mse_cp, mse_mt, mse_rhr] = pooled;
    let d_cp = dynamic_denominator(mse_cp);
    let d_mt = dynamic_denominator(mse_mt);
    let d_rhr = dynamic_denominator(mse_rhr);
    let mut out = LossBreakdown {
        mse_t,
        mse_hr,
        mse_spo2,
        mse_cp,
        mse_mt,
        mse_rhr,
        d_cp,
        d_mt,
        d_rhr,
        total: 0.0,
    };
    out.total = out.recompute_total();
    Some(out)
}

/// Loss value plus everything the optimizer and evaluator need.
#[derive(Debug, Clone)]
pub struct LossOutput<T: Scalar> {
    pub breakdown: LossBreakdown,
    /// dL/dy, (B, 9).
    pub dy: Array2<T>,
    /// Decoded-through-the-equations normalized reconstructions, (B, 3, 96).
    pub decoded: Array3<T>,
}

struct SignalGeom {
    lo: f64,
    slope: f64, // d normalized / d physical = 0.5 / (hi − lo)
}

fn geometry(norm: &NormalizationSpec) -> Result<[SignalGeom; 3]> {
    let mut out = Vec::with_capacity(3);
    for kind in [SignalKind::Temp, SignalKind::Hr, SignalKind::Spo2] {
        let (lo, hi) = norm.range(kind)?;
        out.push(SignalGeom {
            lo,
            slope: 0.5 / (hi - lo),
        });
    }
    Ok(out.try_into().map_err(|_| Error::InvalidInput("geometry".into())).unwrap())
}

/// Decode raw normalized parameters to normalized signal sequences through
/// the symbolic equations (unclamped affine normalization, so this is the
/// same map the training loss differentiates).
pub fn decode_raw_normalized(
    norm_params: &[f64; PARAM_COUNT],
    steps_scaled: &[f64; SEQ_LEN],
    codec: &ParamCodec,
    norm: &NormalizationSpec,
) -> Result<[[f64; SEQ_LEN]; 3]> {
    let geom = geometry(norm)?;
    let phys = codec.denormalize_raw(norm_params);
    let mut out = [[0.0; SEQ_LEN]; 3];
    for t in 0..SEQ_LEN {
        let s_t = steps_scaled[t];
        let s_prev = if t == 0 { 0.0 } else { steps_scaled[t - 1] };
        let dec = [
            symbolic::temp_value(t, phys[idx::TEMP_MAX], phys[idx::TEMP_AMP], phys[idx::PHASE]),
            symbolic::hr_value(
                t,
                phys[idx::RHR],
                phys[idx::HR_AMP],
                phys[idx::PHASE],
                phys[idx::HR_STEPS_SENS],
                phys[idx::HR_STEPS_DELAY_SENS],
                s_t,
                s_prev,
            ),
            symbolic::spo2_value(t, phys[idx::SPO2_AVG], phys[idx::SPO2_AMP], phys[idx::PHASE]),
        ];
        for sig in 0..3 {
            out[sig][t] = 0.5 + geom[sig].slope * (dec[sig] - geom[sig].lo);
        }
    }
    Ok(out)
}

/// Compute the training loss and dL/dy for a batch of network outputs.
pub fn training_loss_and_grad<T: Scalar>(
    y: &Array2<T>,
    batch: &TrainingBatch<T>,
    codec: &ParamCodec,
    norm: &NormalizationSpec,
) -> Result<LossOutput<T>> {
    let b = batch.batch_size();
    if b == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if y.shape() != [b, PARAM_COUNT]
        || batch.steps.shape() != [b, SEQ_LEN]
        || batch.targets.shape() != [b, 3, SEQ_LEN]
        || batch.true_norm.shape() != [b, PARAM_COUNT]
    {
        return Err(Error::InvalidInput(format!(
            "inconsistent batch shapes: y {:?}, steps {:?}, targets {:?}, params {:?}",
            y.shape(),
            batch.steps.shape(),
            batch.targets.shape(),
            batch.true_norm.shape()
        )));
    }
    let geom = geometry(norm)?;
    let ranges = codec.ranges();
    let span: Vec<f64> = ranges.iter().map(|&(lo, hi)| hi - lo).collect();

    // ---- pass 1: decode predictions, accumulate component MSEs ----
    let mut decoded = Array3::<f64>::zeros((b, 3, SEQ_LEN));
    let mut sumsq_sig = [0.0f64; 3];
    let mut e_cp = vec![0.0f64; b];
    let mut e_mt = vec![0.0f64; b];
    let mut e_rhr = vec![0.0f64; b];
    let mut sumsq_cp = 0.0;
    let mut sumsq_mt = 0.0;
    let mut sumsq_rhr = 0.0;

    for s_i in 0..b {
        let mut yn = [0.0f64; PARAM_COUNT];
        for j in 0..PARAM_COUNT {
            yn[j] = y[[s_i, j]].as_f64();
        }
        let mut phys = [0.0f64; PARAM_COUNT];
        for j in 0..PARAM_COUNT {
            // unwrapped affine: sin is 2π-periodic so wrapping the phase here
            // is unnecessary and would only complicate the derivative
            phys[j] = ranges[j].0 + yn[j] * span[j];
        }
        for t in 0..SEQ_LEN {
            let s_t = batch.steps[[s_i, t]].as_f64();
            let s_prev = if t == 0 {
                0.0
            } else {
                batch.steps[[s_i, t - 1]].as_f64()
            };
            let dec = [
                symbolic::temp_value(t, phys[idx::TEMP_MAX], phys[idx::TEMP_AMP], phys[idx::PHASE]),
                symbolic::hr_value(
                    t,
                    phys[idx::RHR],
                    phys[idx::HR_AMP],
                    phys[idx::PHASE],
                    phys[idx::HR_STEPS_SENS],
                    phys[idx::HR_STEPS_DELAY_SENS],
                    s_t,
                    s_prev,
                ),
                symbolic::spo2_value(t, phys[idx::SPO2_AVG], phys[idx::SPO2_AMP], phys[idx::PHASE]),
            ];
            for sig in 0..3 {
                let decn = 0.5 + geom[sig].slope * (dec[sig] - geom[sig].lo);
                decoded[[s_i, sig, t]] = decn;
                let err = decn - batch.targets[[s_i, sig, t]].as_f64();
                sumsq_sig[sig] += err * err;
            }
        }
        let cp = wrap_unit(yn[idx::PHASE] - batch.true_norm[[s_i, idx::PHASE]].as_f64());
        let mt = yn[idx::TEMP_MAX] - batch.true_norm[[s_i, idx::TEMP_MAX]].as_f64();
        let rhr = yn[idx::RHR] - batch.true_norm[[s_i, idx::RHR]].as_f64();
        e_cp[s_i] = cp;
        e_mt[s_i] = mt;
        e_rhr[s_i] = rhr;
        sumsq_cp += cp * cp;
        sumsq_mt += mt * mt;
        sumsq_rhr += rhr * rhr;
    }

    let n_seq = (b * SEQ_LEN) as f64;
    let mse_t = sumsq_sig[0] / n_seq;
    let mse_hr = sumsq_sig[1] / n_seq;
    let mse_spo2 = sumsq_sig[2] / n_seq;
    let mse_cp = sumsq_cp / b as f64;
    let mse_mt = sumsq_mt / b as f64;
    let mse_rhr = sumsq_rhr / b as f64;
    let d_cp = dynamic_denominator(mse_cp);
    let d_mt = dynamic_denominator(mse_mt);
    let d_rhr = dynamic_denominator(mse_rhr);
    let total = SEQ_WEIGHT_TEMP * mse_t
        + SEQ_WEIGHT_HR * mse_hr
        + SEQ_WEIGHT_SPO2 * mse_spo2
        + mse_cp / d_cp
        + mse_mt / d_mt
        + mse_rhr / d_rhr;

    // ---- pass 2: dL/dy through decoder, codec, and denominators ----
    let seq_w = [SEQ_WEIGHT_TEMP, SEQ_WEIGHT_HR, SEQ_WEIGHT_SPO2];
    let g_cp = denominator_term_grad(mse_cp);
    let g_mt = denominator_term_grad(mse_mt);
    let g_rhr = denominator_term_grad(mse_rhr);
    let mut dy = Array2::<T>::zeros((b, PARAM_COUNT));

    for s_i in 0..b {
        let mut yn = [0.0f64; PARAM_COUNT];
        for j in 0..PARAM_COUNT {
            yn[j] = y[[s_i, j]].as_f64();
        }
        let mut phys = [0.0f64; PARAM_COUNT];
        for j in 0..PARAM_COUNT {
            phys[j] = ranges[j].0 + yn[j] * span[j];
        }
        let mut acc = [0.0f64; PARAM_COUNT];
        for t in 0..SEQ_LEN {
            let arg = symbolic::circadian_arg(t, phys[idx::PHASE]);
            let (sin, cos) = arg.sin_cos();
            let s_t = batch.steps[[s_i, t]].as_f64();
            let s_prev = if t == 0 {
                0.0
            } else {
                batch.steps[[s_i, t - 1]].as_f64()
            };
            // dL/d(decoded normalized value), per signal
            let mut up = [0.0f64; 3];
            for sig in 0..3 {
                let err = decoded[[s_i, sig, t]] - batch.targets[[s_i, sig, t]].as_f64();
                up[sig] = seq_w[sig] * 2.0 * err / n_seq * geom[sig].slope;
            }
            acc[idx::TEMP_MAX] += up[0];
            acc[idx::TEMP_AMP] += up[0] * (sin - 1.0);
            acc[idx::RHR] += up[1];
            acc[idx::HR_AMP] += up[1] * sin;
            acc[idx::HR_STEPS_SENS] += up[1] * s_t.tanh();
            acc[idx::HR_STEPS_DELAY_SENS] += up[1] * s_prev.tanh();
            acc[idx::SPO2_AVG] += up[2];
            acc[idx::SPO2_AMP] += up[2] * sin;
            acc[idx::PHASE] += cos
                * (up[0] * phys[idx::TEMP_AMP]
                    + up[1] * phys[idx::HR_AMP]
                    + up[2] * phys[idx::SPO2_AMP]);
        }
        // physical = lo + y·span, so chain the span into each coordinate
        for j in 0..PARAM_COUNT {
            acc[j] *= span[j];
        }
        // symbolic-parameter terms act on y directly (normalized space)
        acc[idx::PHASE] += g_cp * 2.0 * e_cp[s_i] / b as f64;
        acc[idx::TEMP_MAX] += g_mt * 2.0 * e_mt[s_i] / b as f64;
        acc[idx::RHR] += g_rhr * 2.0 * e_rhr[s_i] / b as f64;
        for j in 0..PARAM_COUNT {
            dy[[s_i, j]] = T::from_f64(acc[j]);
        }
    }

    Ok(LossOutput {
        breakdown: LossBreakdown {
            mse_t,
            mse_hr,
            mse_spo2,
            mse_cp,
            mse_mt,
            mse_rhr,
            d_cp,
            d_mt,
            d_rhr,
            total,
        },
        dy,
        decoded: decoded.mapv(T::from_f64),
    })
}
