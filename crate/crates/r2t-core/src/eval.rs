//! Evaluation: per-signal reconstruction MSEs against clean targets for the
//! network and the classical baselines, the testing loss, nearest-rank
//! percentile tables, improvement factors, extreme-case selection, and
//! plot-data export.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{atomic_write, Dataset};
use crate::nn::{decode_raw_normalized, Model, ModelWeights};
use crate::preprocess::NormalizationSpec;
use crate::robust::{fit_signal, model_value, FitResult, RobustLoss, RobustLossKind};
use crate::symbolic::{ParamCodec, PARAM_COUNT, SEQ_LEN};
use crate::synth::{SequenceSet, CHANNEL_KINDS};
use crate::trainer::predict;

/// Sequence-only evaluation weighting.
pub fn testing_loss(mse_t: f64, mse_hr: f64, mse_spo2: f64) -> f64 {
    0.5 * mse_t + 2.0 * mse_hr + 0.5 * mse_spo2
}

/// Which estimator produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    R2t,
    Ols,
    Huber,
    SoftL1,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::R2t => "r2t",
            Self::Ols => "ols",
            Self::Huber => "huber",
            Self::SoftL1 => "soft_l1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "r2t" => Ok(Self::R2t),
            "ols" => Ok(Self::Ols),
            "huber" => Ok(Self::Huber),
            "soft_l1" => Ok(Self::SoftL1),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }

    pub fn from_loss(kind: RobustLossKind) -> Self {
        match kind {
            RobustLossKind::Linear => Self::Ols,
            RobustLossKind::Huber => Self::Huber,
            RobustLossKind::SoftL1 => Self::SoftL1,
        }
    }

    pub const ALL: [Method; 4] = [Method::R2t, Method::Ols, Method::Huber, Method::SoftL1];
}

/// Per-sequence, per-method evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub index: u64,
    pub method: Method,
    pub mse_t: f64,
    pub mse_hr: f64,
    pub mse_spo2: f64,
    pub testing_loss: f64,
    /// Set when a baseline fit was underdetermined; flagged records carry
    /// NaN MSEs and are excluded from percentile statistics.
    pub flagged: bool,
}

impl EvalRecord {
    fn new(index: u64, method: Method, mse: [f64; 3]) -> Self {
        Self {
            index,
            method,
            mse_t: mse[0],
            mse_hr: mse[1],
            mse_spo2: mse[2],
            testing_loss: testing_loss(mse[0], mse[1], mse[2]),
            flagged: false,
        }
    }

    fn flagged(index: u64, method: Method) -> Self {
        Self {
            index,
            method,
            mse_t: f64::NAN,
            mse_hr: f64::NAN,
            mse_spo2: f64::NAN,
            testing_loss: f64::NAN,
            flagged: true,
        }
    }

    pub fn mse(&self, signal: usize) -> f64 {
        [self.mse_t, self.mse_hr, self.mse_spo2][signal]
    }
}

fn steps_of(rec: &SequenceSet) -> [f64; SEQ_LEN] {
    let mut steps = [0.0; SEQ_LEN];
    for (t, s) in steps.iter_mut().enumerate() {
        *s = rec.steps_scaled()[t] as f64;
    }
    steps
}

fn observed_channel(rec: &SequenceSet, ch: usize) -> [f64; SEQ_LEN] {
    let mut out = [0.0; SEQ_LEN];
    for (t, o) in out.iter_mut().enumerate() {
        *o = rec.input_channel(ch)[t] as f64;
    }
    out
}

fn mse_vs_target(rec: &SequenceSet, ch: usize, reconstruction: &[f64; SEQ_LEN]) -> f64 {
    let mut sum = 0.0;
    for t in 0..SEQ_LEN {
        let d = reconstruction[t] - rec.target_channel(ch)[t] as f64;
        sum += d * d;
    }
    sum / SEQ_LEN as f64
}

/// Reconstruct a baseline fit over all 96 bins in normalized units.
fn baseline_reconstruction(
    fit: &FitResult,
    steps: &[f64; SEQ_LEN],
    norm: &NormalizationSpec,
) -> Result<[f64; SEQ_LEN]> {
    let (lo, _) = norm.range(fit.kind)?;
    let slope = norm.slope(fit.kind)?;
    let mut out = [0.0; SEQ_LEN];
    for (t, o) in out.iter_mut().enumerate() {
        *o = 0.5 + slope * (model_value(fit.kind, &fit.params, steps, t) - lo);
    }
    Ok(out)
}

/// Fit all three signals of one record with one loss, returning the
/// per-signal MSEs, or None when any signal is underdetermined.
fn baseline_mses(rec: &SequenceSet, loss: &RobustLoss) -> Result<Option<[f64; 3]>> {
    let norm = NormalizationSpec::default();
    let steps = steps_of(rec);
    let mut mse = [0.0; 3];
    for (ch, kind) in CHANNEL_KINDS.iter().enumerate() {
        let observed = observed_channel(rec, ch);
        match fit_signal(*kind, &observed, &steps, loss) {
            Ok(fit) => {
                let recon = baseline_reconstruction(&fit, &steps, &norm)?;
                mse[ch] = mse_vs_target(rec, ch, &recon);
            }
            Err(Error::Underdetermined { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(mse))
}

/// Network reconstruction MSEs for one record given its predicted
/// normalized parameters.
fn r2t_mses(rec: &SequenceSet, prediction: &[f64; PARAM_COUNT], codec: &ParamCodec) -> Result<[f64; 3]> {
    let norm = NormalizationSpec::default();
    let steps = steps_of(rec);
    let decoded = decode_raw_normalized(prediction, &steps, codec, &norm)?;
    let mut mse = [0.0; 3];
    for ch in 0..3 {
        mse[ch] = mse_vs_target(rec, ch, &decoded[ch]);
    }
    Ok(mse)
}

/// Evaluate the network and the requested baselines over a test dataset.
/// Baseline fits run in parallel across sequences; records come back sorted
/// by (index, method).
pub fn evaluate_dataset(
    dataset: &Dataset,
    model: &Model<f32>,
    weights: &ModelWeights<f32>,
    losses: &[RobustLossKind],
    f_scale: f64,
    codec: &ParamCodec,
) -> Result<Vec<EvalRecord>> {
    let refs: Vec<&SequenceSet> = dataset.records.iter().collect();
    let predictions = predict(model, weights, &refs, 256, codec)?;

    let per_seq: Vec<Result<Vec<EvalRecord>>> = dataset
        .records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut out = Vec::with_capacity(1 + losses.len());
            let mut pred = [0.0f64; PARAM_COUNT];
            for j in 0..PARAM_COUNT {
                pred[j] = predictions[[i, j]] as f64;
            }
            out.push(EvalRecord::new(
                i as u64,
                Method::R2t,
                r2t_mses(rec, &pred, codec)?,
            ));
            for &loss_kind in losses {
                let loss = RobustLoss::new(loss_kind, f_scale)?;
                let method = Method::from_loss(loss_kind);
                match baseline_mses(rec, &loss)? {
                    Some(mse) => out.push(EvalRecord::new(i as u64, method, mse)),
                    None => out.push(EvalRecord::flagged(i as u64, method)),
                }
            }
            Ok(out)
        })
        .collect();

    let mut records = Vec::with_capacity(dataset.len() * (1 + losses.len()));
    for r in per_seq {
        records.extend(r?);
    }
    Ok(records)
}

/// Unflagged MSEs of one method and signal, ascending.
fn sorted_mses(records: &[EvalRecord], method: Method, signal: usize) -> Vec<f64> {
    let mut v: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method && !r.flagged)
        .map(|r| r.mse(signal))
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Nearest-rank percentile: the ⌈p·n⌉-th smallest value.
pub fn nearest_rank_percentile(sorted: &[f64], percent: f64) -> f64 {
    let n = sorted.len();
    let idx = ((percent / 100.0 * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Decile table for one method: rows 10%..100% per signal column.
#[derive(Debug, Clone, Serialize)]
pub struct PercentileTable {
    pub method: Method,
    /// deciles[signal][k] is the (k+1)·10-th percentile.
    pub deciles: [[f64; 10]; 3],
    pub records_used: usize,
    pub records_flagged: usize,
}

pub fn percentile_table(records: &[EvalRecord], method: Method) -> Result<PercentileTable> {
    let mut deciles = [[0.0; 10]; 3];
    let mut used = 0;
    for signal in 0..3 {
        let sorted = sorted_mses(records, method, signal);
        if sorted.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no usable records for method {}",
                method.as_str()
            )));
        }
        used = sorted.len();
        for (k, d) in deciles[signal].iter_mut().enumerate() {
            *d = nearest_rank_percentile(&sorted, (k + 1) as f64 * 10.0);
        }
    }
    let flagged = records
        .iter()
        .filter(|r| r.method == method && r.flagged)
        .count();
    Ok(PercentileTable {
        method,
        deciles,
        records_used: used,
        records_flagged: flagged,
    })
}

/// median(baseline MSE) / median(network MSE) for one signal.
pub fn improvement_factor(
    records: &[EvalRecord],
    baseline: Method,
    signal: usize,
) -> Result<f64> {
    let r2t = sorted_mses(records, Method::R2t, signal);
    let base = sorted_mses(records, baseline, signal);
    if r2t.is_empty() || base.is_empty() {
        return Err(Error::InvalidInput("not enough records for medians".into()));
    }
    Ok(nearest_rank_percentile(&base, 50.0) / nearest_rank_percentile(&r2t, 50.0))
}

/// Best and worst sequence indices by the network testing loss.
pub fn select_extremes(records: &[EvalRecord]) -> Option<(u64, u64)> {
    let r2t: Vec<&EvalRecord> = records
        .iter()
        .filter(|r| r.method == Method::R2t && !r.flagged)
        .collect();
    let best = r2t
        .iter()
        .min_by(|a, b| a.testing_loss.total_cmp(&b.testing_loss))?;
    let worst = r2t
        .iter()
        .max_by(|a, b| a.testing_loss.total_cmp(&b.testing_loss))?;
    Some((best.index, worst.index))
}

/// Machine-readable evaluation summary.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub tables: Vec<PercentileTable>,
    /// improvement_factors[baseline][signal name] = median ratio
    pub improvement_factors: BTreeMap<String, BTreeMap<String, f64>>,
    pub best_index: Option<u64>,
    pub worst_index: Option<u64>,
    pub record_count: usize,
}

pub const SIGNAL_NAMES: [&str; 3] = ["temp", "hr", "spo2"];

/// Summarize records into tables and factors for every method present.
pub fn summarize(records: &[EvalRecord]) -> Result<EvalSummary> {
    let mut methods: Vec<Method> = Vec::new();
    for m in Method::ALL {
        if records.iter().any(|r| r.method == m) {
            methods.push(m);
        }
    }
    let mut tables = Vec::new();
    for &m in &methods {
        tables.push(percentile_table(records, m)?);
    }
    let mut improvement_factors = BTreeMap::new();
    if methods.contains(&Method::R2t) {
        for &m in methods.iter().filter(|&&m| m != Method::R2t) {
            let mut by_signal = BTreeMap::new();
            for (s, name) in SIGNAL_NAMES.iter().enumerate() {
                by_signal.insert(name.to_string(), improvement_factor(records, m, s)?);
            }
            improvement_factors.insert(m.as_str().to_string(), by_signal);
        }
    }
    let extremes = select_extremes(records);
    Ok(EvalSummary {
        tables,
        improvement_factors,
        best_index: extremes.map(|e| e.0),
        worst_index: extremes.map(|e| e.1),
        record_count: records.len(),
    })
}

/// Write records as CSV.
pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut s = String::from("index,method,mse_t,mse_hr,mse_spo2,testing_loss,flagged\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{}\n",
            r.index,
            r.method.as_str(),
            r.mse_t,
            r.mse_hr,
            r.mse_spo2,
            r.testing_loss,
            r.flagged
        ));
    }
    atomic_write(path, s.as_bytes())
}

/// Read records written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "index,method,mse_t,mse_hr,mse_spo2,testing_loss,flagged" {
                return Err(Error::format(path, "unexpected records header"));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::format(path, format!("line {i} has {} fields", fields.len())));
        }
        let parse_f = |s: &str| -> f64 {
            s.parse::<f64>().unwrap_or(f64::NAN)
        };
        out.push(EvalRecord {
            index: fields[0]
                .parse()
                .map_err(|e| Error::format(path, format!("bad index on line {i}: {e}")))?,
            method: Method::parse(fields[1])?,
            mse_t: parse_f(fields[2]),
            mse_hr: parse_f(fields[3]),
            mse_spo2: parse_f(fields[4]),
            testing_loss: parse_f(fields[5]),
            flagged: fields[6] == "true",
        });
    }
    Ok(out)
}

/// Export plot data: per-signal overlay CSVs for the best/worst sequences
/// (input, clean target, network and OLS reconstructions) plus the per-method
/// MSE distribution table for violin plots.
pub fn export_plotdata(
    dataset: &Dataset,
    records: &[EvalRecord],
    model: &Model<f32>,
    weights: &ModelWeights<f32>,
    codec: &ParamCodec,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let norm = NormalizationSpec::default();
    let (best, worst) = select_extremes(records)
        .ok_or_else(|| Error::InvalidInput("no records to select extremes from".into()))?;
    for (label, index) in [("best", best), ("worst", worst)] {
        let rec = dataset
            .records
            .get(index as usize)
            .ok_or_else(|| Error::InvalidInput(format!("record {index} not in dataset")))?;
        let refs = [rec];
        let pred = predict(model, weights, &refs, 1, codec)?;
        let mut pred9 = [0.0f64; PARAM_COUNT];
        for j in 0..PARAM_COUNT {
            pred9[j] = pred[[0, j]] as f64;
        }
        let steps = steps_of(rec);
        let decoded = decode_raw_normalized(&pred9, &steps, codec, &norm)?;
        for (ch, name) in SIGNAL_NAMES.iter().enumerate() {
            let observed = observed_channel(rec, ch);
            let ols = fit_signal(
                CHANNEL_KINDS[ch],
                &observed,
                &steps,
                &RobustLoss::linear(),
            );
            let ols_recon = match &ols {
                Ok(fit) => Some(baseline_reconstruction(fit, &steps, &norm)?),
                Err(_) => None,
            };
            let mut s = String::from("t,input,target,r2t,ols\n");
            for t in 0..SEQ_LEN {
                let ols_v = ols_recon.map_or(f64::NAN, |r| r[t]);
                s.push_str(&format!(
                    "{t},{:.7},{:.7},{:.7},{:.7}\n",
                    rec.input_channel(ch)[t],
                    rec.target_channel(ch)[t],
                    decoded[ch][t],
                    ols_v
                ));
            }
            atomic_write(&out_dir.join(format!("overlay_{label}_{name}.csv")), s.as_bytes())?;
        }
    }
    // violin distributions: one row per record per method
    let mut s = String::from("method,mse_t,mse_hr,mse_spo2\n");
    for r in records.iter().filter(|r| !r.flagged) {
        s.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e}\n",
            r.method.as_str(),
            r.mse_t,
            r.mse_hr,
            r.mse_spo2
        ));
    }
    atomic_write(&out_dir.join("distributions.csv"), s.as_bytes())?;
    Ok(())
}
