//! The symbolic layer: nine physiological constants and the fixed closed-form
//! decoder that maps (constants, steps) to clean daily signal sequences.
//!
//! A day is 96 bins of 15 minutes. All three signals share one circadian
//! phase. Heart rate couples to the scaled steps sequence through `tanh`,
//! with an extra term delayed by one bin; temperature and SpO2 are pure
//! sinusoids parameterized so that the named constants (maximum temperature,
//! average SpO2, circadian amplitudes) are the natural coefficients.

use num_traits::Float;
use serde::Serialize;

use crate::error::{Error, Result};

/// Bins per day (15-minute resolution).
pub const SEQ_LEN: usize = 96;

/// Number of symbolic constants.
pub const PARAM_COUNT: usize = 9;

/// Indices into the canonical 9-parameter vector.
pub mod idx {
    pub const PHASE: usize = 0;
    pub const TEMP_MAX: usize = 1;
    pub const TEMP_AMP: usize = 2;
    pub const RHR: usize = 3;
    pub const HR_AMP: usize = 4;
    pub const HR_STEPS_SENS: usize = 5;
    pub const HR_STEPS_DELAY_SENS: usize = 6;
    pub const SPO2_AVG: usize = 7;
    pub const SPO2_AMP: usize = 8;
}

/// Canonical parameter names, aligned with [`idx`].
pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "phase",
    "temp_max",
    "temp_amp",
    "rhr",
    "hr_amp",
    "hr_steps_sens",
    "hr_steps_delay_sens",
    "spo2_avg",
    "spo2_amp",
];

/// Which physiological signal a sequence carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Temp,
    Hr,
    Spo2,
    Steps,
    SmoothedSteps,
}

/// Whether sequence values are in physical units or the normalized band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Physical,
    Normalized,
}

/// A fixed-length daily sequence. Valid normalized values live in
/// [0.5, 1.0]; 0.0 marks a missing or masked bin.
#[derive(Debug, Clone)]
pub struct Sequence96 {
    pub values: [f64; SEQ_LEN],
    pub units: Units,
    pub kind: SignalKind,
}

impl Sequence96 {
    pub fn new(values: [f64; SEQ_LEN], units: Units, kind: SignalKind) -> Self {
        Self {
            values,
            units,
            kind,
        }
    }
}

/// Step counts per bin plus the same sequence divided by the steps scale.
#[derive(Debug, Clone)]
pub struct StepsSeq {
    counts: [f64; SEQ_LEN],
    scaled: [f64; SEQ_LEN],
}

impl StepsSeq {
    /// Build from raw counts; `s_ref` is the count that maps to 1.0 after
    /// scaling (tanh saturates near a brisk sustained walk).
    pub fn from_counts(counts: &[f64], s_ref: f64) -> Result<Self> {
        if counts.len() != SEQ_LEN {
            return Err(Error::InvalidInput(format!(
                "steps sequence must have {} bins, got {}",
                SEQ_LEN,
                counts.len()
            )));
        }
        if !(s_ref.is_finite() && s_ref > 0.0) {
            return Err(Error::InvalidInput(format!(
                "steps scale must be positive and finite, got {s_ref}"
            )));
        }
        let mut c = [0.0; SEQ_LEN];
        let mut s = [0.0; SEQ_LEN];
        for (i, &v) in counts.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "step count at bin {i} must be non-negative and finite, got {v}"
                )));
            }
            c[i] = v;
            s[i] = v / s_ref;
        }
        Ok(Self {
            counts: c,
            scaled: s,
        })
    }

    pub fn counts(&self) -> &[f64; SEQ_LEN] {
        &self.counts
    }

    pub fn scaled(&self) -> &[f64; SEQ_LEN] {
        &self.scaled
    }
}

/// Wrap an angle into [0, 2π).
pub fn wrap_phase(phase: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = phase.rem_euclid(tau);
    // rem_euclid(tau) can return tau itself for tiny negative inputs.
    if w >= tau {
        0.0
    } else {
        w
    }
}

/// The nine symbolic constants, in physical units.
///
/// Construction wraps the phase into [0, 2π) and rejects non-finite values
/// and negative amplitudes, so a value of this type always satisfies the
/// domain invariants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolicParams {
    phase: f64,
    temp_max: f64,
    temp_amp: f64,
    rhr: f64,
    hr_amp: f64,
    hr_steps_sens: f64,
    hr_steps_delay_sens: f64,
    spo2_avg: f64,
    spo2_amp: f64,
}

impl SymbolicParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        phase: f64,
        temp_max: f64,
        temp_amp: f64,
        rhr: f64,
        hr_amp: f64,
        hr_steps_sens: f64,
        hr_steps_delay_sens: f64,
        spo2_avg: f64,
        spo2_amp: f64,
    ) -> Result<Self> {
        Self::from_array(&[
            phase,
            temp_max,
            temp_amp,
            rhr,
            hr_amp,
            hr_steps_sens,
            hr_steps_delay_sens,
            spo2_avg,
            spo2_amp,
        ])
    }

    /// Build from the canonical vector layout (see [`idx`]).
    pub fn from_array(values: &[f64; PARAM_COUNT]) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "parameter {} must be finite, got {v}",
                    PARAM_NAMES[i]
                )));
            }
        }
        for i in [idx::TEMP_AMP, idx::HR_AMP, idx::SPO2_AMP] {
            if values[i] < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "amplitude {} must be non-negative, got {}",
                    PARAM_NAMES[i],
                    values[i]
                )));
            }
        }
        Ok(Self {
            phase: wrap_phase(values[idx::PHASE]),
            temp_max: values[idx::TEMP_MAX],
            temp_amp: values[idx::TEMP_AMP],
            rhr: values[idx::RHR],
            hr_amp: values[idx::HR_AMP],
            hr_steps_sens: values[idx::HR_STEPS_SENS],
            hr_steps_delay_sens: values[idx::HR_STEPS_DELAY_SENS],
            spo2_avg: values[idx::SPO2_AVG],
            spo2_amp: values[idx::SPO2_AMP],
        })
    }

    /// The canonical vector layout (see [`idx`]).
    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        [
            self.phase,
            self.temp_max,
            self.temp_amp,
            self.rhr,
            self.hr_amp,
            self.hr_steps_sens,
            self.hr_steps_delay_sens,
            self.spo2_avg,
            self.spo2_amp,
        ]
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }
    pub fn temp_max(&self) -> f64 {
        self.temp_max
    }
    pub fn temp_amp(&self) -> f64 {
        self.temp_amp
    }
    pub fn rhr(&self) -> f64 {
        self.rhr
    }
    pub fn hr_amp(&self) -> f64 {
        self.hr_amp
    }
    pub fn hr_steps_sens(&self) -> f64 {
        self.hr_steps_sens
    }
    pub fn hr_steps_delay_sens(&self) -> f64 {
        self.hr_steps_delay_sens
    }
    pub fn spo2_avg(&self) -> f64 {
        self.spo2_avg
    }
    pub fn spo2_amp(&self) -> f64 {
        self.spo2_amp
    }
}

/// Circadian argument 2πt/96 + φ, generic so the training path can run in f32.
#[inline]
pub fn circadian_arg<T: Float>(t: usize, phase: T) -> T {
    let tau = T::from(std::f64::consts::TAU).unwrap();
    let frac = T::from(t).unwrap() / T::from(SEQ_LEN).unwrap();
    tau * frac + phase
}

/// T(t) = temp_max + temp_amp · (sin(2πt/96 + φ) − 1); peaks at temp_max.
#[inline]
pub fn temp_value<T: Float>(t: usize, temp_max: T, temp_amp: T, phase: T) -> T {
    temp_max + temp_amp * (circadian_arg(t, phase).sin() - T::one())
}

/// HR(t) = RHR + A·sin(2πt/96 + φ) + B·tanh s(t) + C·tanh s(t−1), s(−1) = 0.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn hr_value<T: Float>(t: usize, rhr: T, amp: T, phase: T, b: T, c: T, s_t: T, s_prev: T) -> T {
    rhr + amp * circadian_arg(t, phase).sin() + b * s_t.tanh() + c * s_prev.tanh()
}

/// S(t) = spo2_avg + spo2_amp · sin(2πt/96 + φ); averages to spo2_avg.
#[inline]
pub fn spo2_value<T: Float>(t: usize, avg: T, amp: T, phase: T) -> T {
    avg + amp * circadian_arg(t, phase).sin()
}

fn check_finite(params: &SymbolicParams) -> Result<()> {
    if params.to_array().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "symbolic parameters must be finite".into(),
        ))
    }
}

/// Decode the temperature sequence in physical °C. Steps do not enter.
pub fn decode_temp(params: &SymbolicParams, _steps: &StepsSeq) -> Result<Sequence96> {
    check_finite(params)?;
    let mut values = [0.0; SEQ_LEN];
    for (t, v) in values.iter_mut().enumerate() {
        *v = temp_value(t, params.temp_max, params.temp_amp, params.phase);
    }
    Ok(Sequence96::new(values, Units::Physical, SignalKind::Temp))
}

/// Decode the heart-rate sequence in physical bpm.
pub fn decode_hr(params: &SymbolicParams, steps: &StepsSeq) -> Result<Sequence96> {
    check_finite(params)?;
    let s = steps.scaled();
    let mut values = [0.0; SEQ_LEN];
    for (t, v) in values.iter_mut().enumerate() {
        let s_prev = if t == 0 { 0.0 } else { s[t - 1] };
        *v = hr_value(
            t,
            params.rhr,
            params.hr_amp,
            params.phase,
            params.hr_steps_sens,
            params.hr_steps_delay_sens,
            s[t],
            s_prev,
        );
    }
    Ok(Sequence96::new(values, Units::Physical, SignalKind::Hr))
}

/// Decode the SpO2 sequence in physical % saturation. Steps do not enter.
pub fn decode_spo2(params: &SymbolicParams, _steps: &StepsSeq) -> Result<Sequence96> {
    check_finite(params)?;
    let mut values = [0.0; SEQ_LEN];
    for (t, v) in values.iter_mut().enumerate() {
        *v = spo2_value(t, params.spo2_avg, params.spo2_amp, params.phase);
    }
    Ok(Sequence96::new(values, Units::Physical, SignalKind::Spo2))
}

/// Decode all three signals (temp, hr, spo2) in physical units.
pub fn decode_all(params: &SymbolicParams, steps: &StepsSeq) -> Result<[Sequence96; 3]> {
    Ok([
        decode_temp(params, steps)?,
        decode_hr(params, steps)?,
        decode_spo2(params, steps)?,
    ])
}

/// Partials of HR(t) w.r.t. (RHR, A_HR, φ, B_HR, C_HR).
pub fn hr_grad(params: &SymbolicParams, steps: &StepsSeq, t: usize) -> [f64; 5] {
    let s = steps.scaled();
    let s_prev = if t == 0 { 0.0 } else { s[t - 1] };
    let arg = circadian_arg(t, params.phase);
    [
        1.0,
        arg.sin(),
        params.hr_amp * arg.cos(),
        s[t].tanh(),
        s_prev.tanh(),
    ]
}

/// Partials of T(t) w.r.t. (temp_max, temp_amp, φ).
pub fn temp_grad(params: &SymbolicParams, t: usize) -> [f64; 3] {
    let arg = circadian_arg(t, params.phase);
    [1.0, arg.sin() - 1.0, params.temp_amp * arg.cos()]
}

/// Partials of S(t) w.r.t. (spo2_avg, spo2_amp, φ).
pub fn spo2_grad(params: &SymbolicParams, t: usize) -> [f64; 3] {
    let arg = circadian_arg(t, params.phase);
    [1.0, arg.sin(), params.spo2_amp * arg.cos()]
}

/// Smoothing window for the auxiliary steps channel, in bins (2.25 h).
pub const SMOOTH_WINDOW: usize = 9;

/// Centered moving average of the scaled steps, window truncated at edges.
/// The smoothed channel exposes the overnight trough so the phase is visible
/// to an attention model without temporal inductive bias.
pub fn smooth_steps(steps: &StepsSeq) -> Sequence96 {
    let half = SMOOTH_WINDOW / 2;
    let s = steps.scaled();
    let mut values = [0.0; SEQ_LEN];
    for (t, v) in values.iter_mut().enumerate() {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(SEQ_LEN - 1);
        let sum: f64 = s[lo..=hi].iter().sum();
        *v = sum / (hi - lo + 1) as f64;
    }
    Sequence96::new(values, Units::Physical, SignalKind::SmoothedSteps)
}

/// Default sampling ranges for the nine parameters (physical units).
///
/// Chosen so that every decodable value stays strictly inside the
/// normalization ranges for any corner of the parameter box.
pub const DEFAULT_PARAM_RANGES: [(f64, f64); PARAM_COUNT] = [
    (0.0, std::f64::consts::TAU), // phase
    (36.0, 38.5),                 // temp_max, °C
    (0.1, 0.8),                   // temp_amp, °C
    (45.0, 90.0),                 // rhr, bpm
    (2.0, 12.0),                  // hr_amp, bpm
    (0.0, 60.0),                  // hr_steps_sens, bpm
    (0.0, 30.0),                  // hr_steps_delay_sens, bpm
    (92.0, 98.0),                 // spo2_avg, %
    (0.1, 1.5),                   // spo2_amp, %
];

/// Affine codec between physical parameter values and the normalized [0, 1]
/// space the network predicts in. Phase maps through φ/2π and wraps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCodec {
    ranges: [(f64, f64); PARAM_COUNT],
}

impl Default for ParamCodec {
    fn default() -> Self {
        Self {
            ranges: DEFAULT_PARAM_RANGES,
        }
    }
}

impl ParamCodec {
    pub fn new(ranges: [(f64, f64); PARAM_COUNT]) -> Result<Self> {
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "codec range for {} must satisfy lo <= hi, got ({lo}, {hi})",
                    PARAM_NAMES[i]
                )));
            }
        }
        Ok(Self { ranges })
    }

    pub fn ranges(&self) -> &[(f64, f64); PARAM_COUNT] {
        &self.ranges
    }

    /// Map physical parameters into [0, 1] per coordinate.
    pub fn params_to_normalized(&self, params: &SymbolicParams) -> [f64; PARAM_COUNT] {
        let raw = params.to_array();
        let mut out = [0.0; PARAM_COUNT];
        for i in 0..PARAM_COUNT {
            let (lo, hi) = self.ranges[i];
            out[i] = if hi > lo { (raw[i] - lo) / (hi - lo) } else { 0.0 };
        }
        out
    }

    /// Inverse affine map without domain validation; the phase coordinate
    /// wraps modulo 1 first. Used for raw network outputs, which may fall
    /// slightly outside [0, 1] for the other coordinates.
    pub fn denormalize_raw(&self, normalized: &[f64; PARAM_COUNT]) -> [f64; PARAM_COUNT] {
        let mut out = [0.0; PARAM_COUNT];
        for i in 0..PARAM_COUNT {
            let (lo, hi) = self.ranges[i];
            let v = if i == idx::PHASE {
                normalized[i].rem_euclid(1.0)
            } else {
                normalized[i]
            };
            out[i] = lo + v * (hi - lo);
        }
        out
    }

    /// Inverse map producing validated parameters.
    pub fn normalized_to_params(&self, normalized: &[f64; PARAM_COUNT]) -> Result<SymbolicParams> {
        SymbolicParams::from_array(&self.denormalize_raw(normalized))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat_steps(level: f64) -> StepsSeq {
        StepsSeq::from_counts(&[level; SEQ_LEN], 1000.0).unwrap()
    }

    fn params(raw: [f64; PARAM_COUNT]) -> SymbolicParams {
        SymbolicParams::from_array(&raw).unwrap()
    }

    #[test]
    fn hr_all_modulations_zero_is_constant_rhr() {
        let p = params([1.3, 37.0, 0.3, 60.0, 0.0, 0.0, 0.0, 96.0, 1.0]);
        let hr = decode_hr(&p, &flat_steps(700.0)).unwrap();
        for v in hr.values {
            assert_abs_diff_eq!(v, 60.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn hr_sin_peak_at_t0() {
        // phase π/2 puts the circadian peak exactly at t = 0.
        let p = params([
            std::f64::consts::FRAC_PI_2,
            37.0,
            0.3,
            60.0,
            5.0,
            0.0,
            0.0,
            96.0,
            1.0,
        ]);
        let hr = decode_hr(&p, &flat_steps(0.0)).unwrap();
        assert_abs_diff_eq!(hr.values[0], 65.0, epsilon = 1e-12);
    }

    #[test]
    fn hr_steps_sensitivity_saturates_through_tanh() {
        // s(t) = 1 everywhere; independent scalar evaluation of the formula.
        let p = params([0.0, 37.0, 0.3, 60.0, 0.0, 10.0, 0.0, 96.0, 1.0]);
        let hr = decode_hr(&p, &flat_steps(1000.0)).unwrap();
        let expected = 60.0 + 10.0 * 1.0f64.tanh();
        assert_abs_diff_eq!(expected, 67.615_941_559_557_65, epsilon = 1e-10);
        for v in hr.values {
            assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn hr_delayed_term_uses_zero_before_window() {
        let p = params([0.0, 37.0, 0.3, 60.0, 0.0, 0.0, 20.0, 96.0, 1.0]);
        let hr = decode_hr(&p, &flat_steps(1000.0)).unwrap();
        // t = 0: s(−1) = 0 so the C term vanishes; t ≥ 1: full tanh(1).
        assert_abs_diff_eq!(hr.values[0], 60.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hr.values[1], 60.0 + 20.0 * 1.0f64.tanh(), epsilon = 1e-12);
    }

    #[test]
    fn temp_zero_amplitude_is_constant_max() {
        let p = params([2.0, 37.0, 0.0, 60.0, 5.0, 0.0, 0.0, 96.0, 1.0]);
        let temp = decode_temp(&p, &flat_steps(0.0)).unwrap();
        for v in temp.values {
            assert_abs_diff_eq!(v, 37.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn temp_trough_is_max_minus_twice_amplitude() {
        // phase 0: sin(2π·72/96) = sin(3π/2) = −1 on the grid.
        let p = params([0.0, 37.0, 0.5, 60.0, 5.0, 0.0, 0.0, 96.0, 1.0]);
        let temp = decode_temp(&p, &flat_steps(0.0)).unwrap();
        assert_abs_diff_eq!(temp.values[72], 36.0, epsilon = 1e-9);
    }

    #[test]
    fn temp_grid_max_attains_temp_max() {
        // Brute-force max over the 96 grid points; the peak can fall between
        // grid points, so allow the sinusoid's grid resolution.
        let gap = 1.0 - (std::f64::consts::PI / SEQ_LEN as f64).cos();
        for &phase in &[0.0, 0.7, 2.9, 5.5] {
            let amp = 0.6;
            let p = params([phase, 37.5, amp, 60.0, 5.0, 0.0, 0.0, 96.0, 1.0]);
            let temp = decode_temp(&p, &flat_steps(0.0)).unwrap();
            let max = temp.values.iter().cloned().fold(f64::MIN, f64::max);
            assert!(max <= 37.5 + 1e-12);
            assert!(max >= 37.5 - amp * gap - 1e-12);
        }
    }

    #[test]
    fn spo2_zero_amplitude_is_constant_avg() {
        let p = params([1.0, 37.0, 0.3, 60.0, 5.0, 0.0, 0.0, 97.0, 0.0]);
        let spo2 = decode_spo2(&p, &flat_steps(0.0)).unwrap();
        for v in spo2.values {
            assert_abs_diff_eq!(v, 97.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spo2_mean_equals_average_for_any_phase() {
        for &phase in &[0.0, 0.3, 1.9, 4.4, 6.1] {
            let p = params([phase, 37.0, 0.3, 60.0, 5.0, 0.0, 0.0, 97.0, 1.5]);
            let spo2 = decode_spo2(&p, &flat_steps(0.0)).unwrap();
            let mean: f64 = spo2.values.iter().sum::<f64>() / SEQ_LEN as f64;
            assert_abs_diff_eq!(mean, 97.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn spo2_quarter_period_peak() {
        // phase 0, t = 24: sin(π/2) = 1.
        let p = params([0.0, 37.0, 0.3, 60.0, 5.0, 0.0, 0.0, 97.0, 1.0]);
        let spo2 = decode_spo2(&p, &flat_steps(0.0)).unwrap();
        assert_abs_diff_eq!(spo2.values[24], 98.0, epsilon = 1e-9);
    }

    #[test]
    fn decode_all_is_pure() {
        let p = params([0.9, 37.0, 0.4, 62.0, 6.0, 20.0, 10.0, 96.0, 1.0]);
        let mut counts = [0.0; SEQ_LEN];
        for (i, c) in counts.iter_mut().enumerate() {
            *c = ((i * 37) % 500) as f64;
        }
        let steps = StepsSeq::from_counts(&counts, 1000.0).unwrap();
        let a = decode_all(&p, &steps).unwrap();
        let b = decode_all(&p, &steps).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn phase_periodicity_after_normalization() {
        // π and π/2 have trailing mantissa zeros, so adding 2π is exact and
        // construction wraps back to the identical bit pattern.
        for &phase in &[std::f64::consts::PI, std::f64::consts::FRAC_PI_2] {
            let base = [phase, 37.0, 0.4, 62.0, 6.0, 20.0, 10.0, 96.0, 1.0];
            let mut shifted = base;
            shifted[idx::PHASE] = phase + std::f64::consts::TAU;
            let (a, b) = (params(base), params(shifted));
            assert_eq!(a.phase().to_bits(), b.phase().to_bits());
            let steps = flat_steps(300.0);
            let da = decode_all(&a, &steps).unwrap();
            let db = decode_all(&b, &steps).unwrap();
            for (x, y) in da.iter().zip(db.iter()) {
                assert_eq!(x.values, y.values);
            }
        }
    }

    #[test]
    fn hr_mean_equals_rhr_for_zero_steps() {
        let p = params([2.7, 37.0, 0.4, 58.0, 9.0, 30.0, 15.0, 96.0, 1.0]);
        let hr = decode_hr(&p, &flat_steps(0.0)).unwrap();
        let mean: f64 = hr.values.iter().sum::<f64>() / SEQ_LEN as f64;
        assert_abs_diff_eq!(mean, 58.0, epsilon = 1e-9);
    }

    #[test]
    fn hr_partials_match_central_differences() {
        let raw = [1.7, 37.0, 0.4, 62.0, 6.0, 25.0, 12.0, 96.0, 1.0];
        let mut counts = [0.0; SEQ_LEN];
        for (i, c) in counts.iter_mut().enumerate() {
            *c = if i % 7 == 0 { 800.0 } else { 120.0 };
        }
        let steps = StepsSeq::from_counts(&counts, 1000.0).unwrap();
        // HR parameter order within the full vector.
        let hr_idx = [
            idx::RHR,
            idx::HR_AMP,
            idx::PHASE,
            idx::HR_STEPS_SENS,
            idx::HR_STEPS_DELAY_SENS,
        ];
        for t in [0, 1, 17, 48, 95] {
            let grad = hr_grad(&params(raw), &steps, t);
            for (k, &pi) in hr_idx.iter().enumerate() {
                let h = 1e-6 * raw[pi].abs().max(1.0);
                let mut up = raw;
                up[pi] += h;
                let mut dn = raw;
                dn[pi] -= h;
                let f = |r: [f64; 9]| decode_hr(&params(r), &steps).unwrap().values[t];
                let fd = (f(up) - f(dn)) / (2.0 * h);
                let denom = grad[k].abs().max(fd.abs()).max(1e-9);
                assert!(
                    ((grad[k] - fd) / denom).abs() <= 1e-6,
                    "partial {k} at t={t}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn non_finite_parameter_is_rejected() {
        assert!(SymbolicParams::new(f64::NAN, 37.0, 0.3, 60.0, 5.0, 0.0, 0.0, 96.0, 1.0).is_err());
        assert!(
            SymbolicParams::new(0.0, 37.0, -0.1, 60.0, 5.0, 0.0, 0.0, 96.0, 1.0).is_err(),
            "negative amplitude must be rejected"
        );
    }

    #[test]
    fn smooth_steps_zero_and_constant() {
        let zero = smooth_steps(&flat_steps(0.0));
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let c = smooth_steps(&flat_steps(400.0));
        for v in c.values {
            assert_abs_diff_eq!(v, 0.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn smooth_steps_impulse_spreads_over_window() {
        let mut counts = [0.0; SEQ_LEN];
        counts[48] = 1000.0;
        let steps = StepsSeq::from_counts(&counts, 1000.0).unwrap();
        let sm = smooth_steps(&steps);
        for (t, &v) in sm.values.iter().enumerate() {
            if (44..=52).contains(&t) {
                assert_abs_diff_eq!(v, 1.0 / 9.0, epsilon = 1e-12);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn smooth_steps_truncates_at_edges() {
        let mut counts = [0.0; SEQ_LEN];
        counts[0] = 1000.0;
        let steps = StepsSeq::from_counts(&counts, 1000.0).unwrap();
        let sm = smooth_steps(&steps);
        // window at t = 0 covers bins 0..=4 only.
        assert_abs_diff_eq!(sm.values[0], 1.0 / 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sm.values[4], 1.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn codec_lo_maps_to_zero_and_pi_to_half() {
        let codec = ParamCodec::default();
        let lows: Vec<f64> = codec.ranges().iter().map(|r| r.0).collect();
        let p = SymbolicParams::from_array(&lows.try_into().unwrap()).unwrap();
        let n = codec.params_to_normalized(&p);
        for v in n {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let p = params([std::f64::consts::PI, 37.0, 0.4, 60.0, 5.0, 10.0, 5.0, 96.0, 1.0]);
        assert_abs_diff_eq!(codec.params_to_normalized(&p)[idx::PHASE], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn codec_round_trip_is_exact_to_1e9() {
        let codec = ParamCodec::default();
        let mut rng = crate::rng::derive_rng(42, &[900]);
        use rand::Rng;
        for _ in 0..200 {
            let mut raw = [0.0; PARAM_COUNT];
            for (i, r) in raw.iter_mut().enumerate() {
                let (lo, hi) = codec.ranges()[i];
                *r = lo + rng.random::<f64>() * (hi - lo);
            }
            let p = SymbolicParams::from_array(&raw).unwrap();
            let back = codec
                .normalized_to_params(&codec.params_to_normalized(&p))
                .unwrap();
            for (a, b) in p.to_array().iter().zip(back.to_array().iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn codec_phase_wraps_modulo_one() {
        let codec = ParamCodec::default();
        let mut n = [0.5; PARAM_COUNT];
        n[idx::PHASE] = 1.25;
        let p = codec.normalized_to_params(&n).unwrap();
        assert_abs_diff_eq!(p.phase(), 0.25 * std::f64::consts::TAU, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_codec_range_round_trips() {
        let mut ranges = DEFAULT_PARAM_RANGES;
        ranges[idx::RHR] = (60.0, 60.0);
        let codec = ParamCodec::new(ranges).unwrap();
        let p = params([1.0, 37.0, 0.4, 60.0, 5.0, 10.0, 5.0, 96.0, 1.0]);
        let n = codec.params_to_normalized(&p);
        assert_eq!(n[idx::RHR], 0.0);
        let back = codec.normalized_to_params(&n).unwrap();
        assert_eq!(back.rhr(), 60.0);
    }
}
