//! Classical baselines: nonlinear least-squares fits of the symbolic forms
//! to non-zero observations under linear (OLS), Huber, and SoftL1 losses,
//! via Levenberg–Marquardt with iteratively re-weighted residuals.
//!
//! Fits run per signal in normalized signal space with parameters in
//! physical units; zero-valued bins mark missing data and never enter the
//! residual vector.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::NormalizationSpec;
use crate::symbolic::{self, wrap_phase, SignalKind, SEQ_LEN};

/// Robust loss family; `z = (r / f_scale)²`, cost = ½·f_scale²·Σ ρ(z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustLossKind {
    /// ρ(z) = z: ordinary least squares.
    Linear,
    /// ρ(z) = z for z ≤ 1, else 2√z − 1.
    Huber,
    /// ρ(z) = 2(√(1+z) − 1).
    SoftL1,
}

impl RobustLossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Huber => "huber",
            Self::SoftL1 => "soft_l1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "huber" => Ok(Self::Huber),
            "soft_l1" => Ok(Self::SoftL1),
            other => Err(Error::InvalidInput(format!(
                "unknown loss kind {other:?}, expected linear | huber | soft_l1"
            ))),
        }
    }
}

/// A robust loss with its scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLoss {
    pub kind: RobustLossKind,
    pub f_scale: f64,
}

impl RobustLoss {
    pub fn new(kind: RobustLossKind, f_scale: f64) -> Result<Self> {
        if !(f_scale.is_finite() && f_scale > 0.0) {
            return Err(Error::Config(format!(
                "f_scale must be positive, got {f_scale}"
            )));
        }
        Ok(Self { kind, f_scale })
    }

    pub fn linear() -> Self {
        Self {
            kind: RobustLossKind::Linear,
            f_scale: 1.0,
        }
    }

    fn rho(&self, z: f64) -> f64 {
        match self.kind {
            RobustLossKind::Linear => z,
            RobustLossKind::Huber => {
                if z <= 1.0 {
                    z
                } else {
                    2.0 * z.sqrt() - 1.0
                }
            }
            RobustLossKind::SoftL1 => 2.0 * ((1.0 + z).sqrt() - 1.0),
        }
    }

    /// ρ'(z), the IRLS weight.
    fn weight(&self, z: f64) -> f64 {
        match self.kind {
            RobustLossKind::Linear => 1.0,
            RobustLossKind::Huber => {
                if z <= 1.0 {
                    1.0
                } else {
                    z.sqrt().recip()
                }
            }
            RobustLossKind::SoftL1 => (1.0 + z).sqrt().recip(),
        }
    }

    /// cost = ½ · f_scale² · Σ ρ((rᵢ/f_scale)²).
    pub fn cost(&self, residuals: &[f64]) -> f64 {
        let f2 = self.f_scale * self.f_scale;
        0.5 * f2
            * residuals
                .iter()
                .map(|&r| self.rho(r * r / f2))
                .sum::<f64>()
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceReason {
    GradientTol,
    StepTol,
    CostTol,
    MaxIter,
}

/// Solver output for one signal fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: SignalKind,
    /// Physical parameters in the per-signal layout (see [`param_names`]).
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub reason: ConvergenceReason,
    /// Robust cost after each accepted step (starts with the initial cost).
    pub cost_history: Vec<f64>,
    /// Reconstruction MSE vs a clean target, filled in by the evaluator.
    pub recon_mse: Option<f64>,
}

/// Per-signal parameter layout.
pub fn param_names(kind: SignalKind) -> &'static [&'static str] {
    match kind {
        SignalKind::Temp => &["temp_max", "temp_amp", "phase"],
        SignalKind::Hr => &["rhr", "hr_amp", "phase", "hr_steps_sens", "hr_steps_delay_sens"],
        SignalKind::Spo2 => &["spo2_avg", "spo2_amp", "phase"],
        _ => &[],
    }
}

/// Number of free parameters for a signal.
pub fn param_count(kind: SignalKind) -> usize {
    param_names(kind).len()
}

/// Physical model value at bin `t` for the per-signal parameter vector.
pub fn model_value(kind: SignalKind, theta: &[f64], steps_scaled: &[f64; SEQ_LEN], t: usize) -> f64 {
    match kind {
        SignalKind::Temp => symbolic::temp_value(t, theta[0], theta[1], theta[2]),
        SignalKind::Hr => {
            let s_t = steps_scaled[t];
            let s_prev = if t == 0 { 0.0 } else { steps_scaled[t - 1] };
            symbolic::hr_value(t, theta[0], theta[1], theta[2], theta[3], theta[4], s_t, s_prev)
        }
        SignalKind::Spo2 => symbolic::spo2_value(t, theta[0], theta[1], theta[2]),
        _ => f64::NAN,
    }
}

/// Analytic Jacobian of the physical model on the valid bins:
/// (len(valid) × p), row order follows `valid`.
pub fn jacobian(
    kind: SignalKind,
    theta: &[f64],
    steps_scaled: &[f64; SEQ_LEN],
    valid: &[usize],
) -> Array2<f64> {
    let p = param_count(kind);
    let mut j = Array2::zeros((valid.len(), p));
    for (row, &t) in valid.iter().enumerate() {
        let arg = symbolic::circadian_arg(t, theta[2]);
        let (sin, cos) = arg.sin_cos();
        match kind {
            SignalKind::Temp => {
                j[[row, 0]] = 1.0;
                j[[row, 1]] = sin - 1.0;
                j[[row, 2]] = theta[1] * cos;
            }
            SignalKind::Hr => {
                let s_t = steps_scaled[t];
                let s_prev = if t == 0 { 0.0 } else { steps_scaled[t - 1] };
                j[[row, 0]] = 1.0;
                j[[row, 1]] = sin;
                j[[row, 2]] = theta[1] * cos;
                j[[row, 3]] = s_t.tanh();
                j[[row, 4]] = s_prev.tanh();
            }
            SignalKind::Spo2 => {
                j[[row, 0]] = 1.0;
                j[[row, 1]] = sin;
                j[[row, 2]] = theta[1] * cos;
            }
            _ => {}
        }
    }
    j
}

fn nearest_rank(sorted: &[f64], fraction: f64) -> f64 {
    let n = sorted.len();
    let idx = ((fraction * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Rough but always-finite starting point: level from the median of valid
/// values, amplitude from half the interdecile range, phase from the best of
/// 8 uniformly spaced candidates under the linear cost, HR steps
/// sensitivities at zero.
pub fn init_guess(
    kind: SignalKind,
    observed_norm: &[f64; SEQ_LEN],
    steps_scaled: &[f64; SEQ_LEN],
) -> Result<Vec<f64>> {
    let norm = NormalizationSpec::default();
    let (sig_lo, sig_hi) = norm.range(kind)?;
    let range = sig_hi - sig_lo;
    let mut vals: Vec<f64> = observed_norm.iter().cloned().filter(|&v| v != 0.0).collect();
    if vals.is_empty() {
        return Err(Error::Underdetermined {
            observed: 0,
            params: param_count(kind),
        });
    }
    vals.sort_by(f64::total_cmp);
    let median = nearest_rank(&vals, 0.5);
    let amp_norm = (nearest_rank(&vals, 0.9) - nearest_rank(&vals, 0.1)) / 2.0;
    // normalized → physical: Δphys = Δnorm · 2·range, level via the inverse map
    let level = sig_lo + (median - 0.5) * 2.0 * range;
    let amp = (amp_norm * 2.0 * range).max(0.0);

    let assemble = |phase: f64| -> Vec<f64> {
        match kind {
            SignalKind::Temp => vec![level + amp, amp, phase],
            SignalKind::Hr => vec![level, amp, phase, 0.0, 0.0],
            SignalKind::Spo2 => vec![level, amp, phase],
            _ => vec![],
        }
    };

    let valid: Vec<usize> = (0..SEQ_LEN).filter(|&t| observed_norm[t] != 0.0).collect();
    let slope = norm.slope(kind)?;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..8 {
        let phase = k as f64 * std::f64::consts::TAU / 8.0;
        let theta = assemble(phase);
        let cost: f64 = valid
            .iter()
            .map(|&t| {
                let m = 0.5 + slope * (model_value(kind, &theta, steps_scaled, t) - sig_lo);
                let r = m - observed_norm[t];
                r * r
            })
            .sum();
        if cost < best.0 {
            best = (cost, phase);
        }
    }
    let theta = assemble(best.1);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "initial guess".into(),
        });
    }
    Ok(theta)
}

/// Solve (H + λ·diag(H)) δ = −g by Gaussian elimination with partial
/// pivoting; returns None when the damped system is numerically singular.
fn solve_damped(h: &Array2<f64>, g: &Array1<f64>, lambda: f64) -> Option<Vec<f64>> {
    let p = g.len();
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            a[i * p + j] = h[[i, j]];
        }
        // floor keeps the damping active for identically-zero columns
        let d = h[[i, i]].abs().max(1e-14);
        a[i * p + i] = h[[i, i]] + lambda * d;
        b[i] = -g[i];
    }
    for col in 0..p {
        let mut pivot = col;
        for row in col + 1..p {
            if a[row * p + col].abs() > a[pivot * p + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * p + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..p {
                a.swap(col * p + j, pivot * p + j);
            }
            b.swap(col, pivot);
        }
        let inv = 1.0 / a[col * p + col];
        for row in col + 1..p {
            let factor = a[row * p + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for j in col..p {
                a[row * p + j] -= factor * a[col * p + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; p];
    for col in (0..p).rev() {
        let mut s = b[col];
        for j in col + 1..p {
            s -= a[col * p + j] * x[j];
        }
        x[col] = s / a[col * p + col];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

const MAX_ITER: usize = 200;
const FTOL: f64 = 1e-10;
const XTOL: f64 = 1e-10;
const GTOL: f64 = 1e-10;

/// Fit one signal's symbolic form to the non-zero bins of a normalized
/// observation under the given robust loss.
pub fn fit_signal(
    kind: SignalKind,
    observed_norm: &[f64; SEQ_LEN],
    steps_scaled: &[f64; SEQ_LEN],
    loss: &RobustLoss,
) -> Result<FitResult> {
    let norm = NormalizationSpec::default();
    let (sig_lo, _) = norm.range(kind)?;
    let slope = norm.slope(kind)?;
    let p = param_count(kind);
    let valid: Vec<usize> = (0..SEQ_LEN).filter(|&t| observed_norm[t] != 0.0).collect();
    if valid.len() < p {
        return Err(Error::Underdetermined {
            observed: valid.len(),
            params: p,
        });
    }

    let residuals = |theta: &[f64]| -> Vec<f64> {
        valid
            .iter()
            .map(|&t| 0.5 + slope * (model_value(kind, theta, steps_scaled, t) - sig_lo)
                - observed_norm[t])
            .collect()
    };

    let mut theta = init_guess(kind, observed_norm, steps_scaled)?;
    let mut r = residuals(&theta);
    let mut cost = loss.cost(&r);
    let mut cost_history = vec![cost];
    let mut lambda = 1e-3;
    let mut reason = ConvergenceReason::MaxIter;
    let mut iterations = 0;
    let f2 = loss.f_scale * loss.f_scale;

    'outer: for iter in 0..MAX_ITER {
        iterations = iter + 1;
        // weighted normal equations in normalized residual space
        let j_phys = jacobian(kind, &theta, steps_scaled, &valid);
        let mut g = Array1::<f64>::zeros(p);
        let mut h = Array2::<f64>::zeros((p, p));
        for (row, &ri) in r.iter().enumerate() {
            let w = loss.weight(ri * ri / f2);
            for a in 0..p {
                let ja = slope * j_phys[[row, a]];
                g[a] += w * ja * ri;
                for b in a..p {
                    h[[a, b]] += w * ja * slope * j_phys[[row, b]];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[[a, b]] = h[[b, a]];
            }
        }
        if g.iter().all(|v| v.abs() <= GTOL) {
            reason = ConvergenceReason::GradientTol;
            break;
        }

        // damping loop: retry with stronger regularization until a step
        // lowers the true robust cost
        loop {
            let Some(delta) = solve_damped(&h, &g, lambda) else {
                lambda *= 10.0;
                if lambda > 1e14 {
                    reason = ConvergenceReason::MaxIter;
                    break 'outer;
                }
                continue;
            };
            let trial: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
            let trial_r = residuals(&trial);
            let trial_cost = loss.cost(&trial_r);
            if trial_cost.is_finite() && trial_cost < cost {
                let improvement = cost - trial_cost;
                let step_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                let theta_norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
                theta = trial;
                r = trial_r;
                cost = trial_cost;
                cost_history.push(cost);
                lambda = (lambda / 10.0).max(1e-14);
                if improvement <= FTOL * cost.max(1e-300) {
                    reason = ConvergenceReason::CostTol;
                    break 'outer;
                }
                if step_norm <= XTOL * (theta_norm + XTOL) {
                    reason = ConvergenceReason::StepTol;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                // no damping level yields progress: local minimum to
                // within float resolution
                reason = ConvergenceReason::StepTol;
                break 'outer;
            }
        }
    }

    canonicalize(kind, &mut theta);
    let r = residuals(&theta);
    let cost = loss.cost(&r);
    Ok(FitResult {
        kind,
        params: theta,
        cost,
        iterations,
        reason,
        cost_history,
        recon_mse: None,
    })
}

/// Map (negative amplitude, phase) pairs onto the canonical amp ≥ 0,
/// φ ∈ [0, 2π) representation; the decoded sequence is unchanged.
fn canonicalize(kind: SignalKind, theta: &mut [f64]) {
    if theta[1] < 0.0 {
        let a = -theta[1];
        theta[1] = a;
        theta[2] += std::f64::consts::PI;
        if kind == SignalKind::Temp {
            // max + amp(sin−1) with amp<0 equals (max+2a) + a(sin(φ+π)−1)
            theta[0] += 2.0 * a;
        }
    }
    theta[2] = wrap_phase(theta[2]);
}
