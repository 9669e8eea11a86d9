//! Normalization between physical units and the [0.5, 1.0] band, 15-minute
//! binning, and random input masking.
//!
//! 0.0 is the missing/masked marker in normalized space; valid values are
//! kept at least 0.5 away from it so the embedding can separate "no data"
//! from real measurements.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::symbolic::{Sequence96, SignalKind, Units, SEQ_LEN};

/// Counts out-of-range physical values clamped during normalization.
#[derive(Debug, Default)]
pub struct ClampCounter(AtomicU64);

impl ClampCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

/// Per-signal physical ranges mapped onto [0.5, 1.0].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationSpec {
    temp: (f64, f64),
    hr: (f64, f64),
    spo2: (f64, f64),
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            temp: (28.0, 45.0),
            hr: (30.0, 220.0),
            spo2: (70.0, 100.0),
        }
    }
}

impl NormalizationSpec {
    /// Physical (min, max) for a physiological signal; steps channels are
    /// scaled rather than normalized and are rejected here.
    pub fn range(&self, kind: SignalKind) -> Result<(f64, f64)> {
        match kind {
            SignalKind::Temp => Ok(self.temp),
            SignalKind::Hr => Ok(self.hr),
            SignalKind::Spo2 => Ok(self.spo2),
            SignalKind::Steps | SignalKind::SmoothedSteps => Err(Error::InvalidInput(format!(
                "signal kind {kind:?} has no normalization range"
            ))),
        }
    }

    /// d(normalized)/d(physical) for a signal; used when chaining Jacobians
    /// through the normalization.
    pub fn slope(&self, kind: SignalKind) -> Result<f64> {
        let (lo, hi) = self.range(kind)?;
        Ok(0.5 / (hi - lo))
    }

    /// Affine map min → 0.5, max → 1.0 with clamping and the 0.0 missing
    /// marker passed through unchanged.
    pub fn normalize(&self, kind: SignalKind, physical: f64) -> Result<f64> {
        self.normalize_counted(kind, physical, None)
    }

    /// As [`Self::normalize`], bumping `counter` when a value had to be
    /// clamped into the physical range.
    pub fn normalize_counted(
        &self,
        kind: SignalKind,
        physical: f64,
        counter: Option<&ClampCounter>,
    ) -> Result<f64> {
        let (lo, hi) = self.range(kind)?;
        if physical == 0.0 {
            return Ok(0.0);
        }
        let clamped = physical.clamp(lo, hi);
        if clamped != physical {
            if let Some(c) = counter {
                c.bump();
            }
        }
        Ok(0.5 + 0.5 * (clamped - lo) / (hi - lo))
    }

    /// Affine map without clamping or the missing marker. This is the
    /// gradient-path variant: decoded model outputs must keep a nonzero
    /// derivative even when they stray outside the physical range.
    pub fn normalize_unclamped(&self, kind: SignalKind, physical: f64) -> Result<f64> {
        let (lo, hi) = self.range(kind)?;
        Ok(0.5 + 0.5 * (physical - lo) / (hi - lo))
    }

    /// Exact inverse of [`Self::normalize`] on [0.5, 1.0]; 0.0 passes through.
    pub fn denormalize(&self, kind: SignalKind, normalized: f64) -> Result<f64> {
        let (lo, hi) = self.range(kind)?;
        if normalized == 0.0 {
            return Ok(0.0);
        }
        Ok(lo + (normalized - 0.5) * 2.0 * (hi - lo))
    }

    /// Normalize a whole physical sequence.
    pub fn normalize_seq(
        &self,
        seq: &Sequence96,
        counter: Option<&ClampCounter>,
    ) -> Result<Sequence96> {
        let mut out = [0.0; SEQ_LEN];
        for (o, &v) in out.iter_mut().zip(seq.values.iter()) {
            *o = self.normalize_counted(seq.kind, v, counter)?;
        }
        Ok(Sequence96::new(out, Units::Normalized, seq.kind))
    }
}

/// Average timestamped samples (hour of day in [0, 24), value) into 96
/// 15-minute bins; bins with no samples are set to the 0.0 missing marker.
pub fn bin_15min(samples: &[(f64, f64)]) -> Result<Sequence96> {
    let mut sums = [0.0; SEQ_LEN];
    let mut counts = [0u32; SEQ_LEN];
    for &(hour, value) in samples {
        if !(0.0..24.0).contains(&hour) {
            return Err(Error::InvalidInput(format!(
                "sample hour {hour} outside [0, 24)"
            )));
        }
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sample value {value} is not finite"
            )));
        }
        let bin = ((hour * 4.0) as usize).min(SEQ_LEN - 1);
        sums[bin] += value;
        counts[bin] += 1;
    }
    let mut values = [0.0; SEQ_LEN];
    for t in 0..SEQ_LEN {
        if counts[t] > 0 {
            values[t] = sums[t] / counts[t] as f64;
        }
    }
    Ok(Sequence96::new(values, Units::Physical, SignalKind::Temp))
}

/// Number of input channels: temp, hr, spo2, scaled steps, smoothed steps.
pub const INPUT_CHANNELS: usize = 5;

/// Channels 0..3 carry normalized physiological signals and may be masked;
/// the two steps channels feed the symbolic decoder and are never masked.
pub const PHYS_CHANNELS: usize = 3;

/// Randomly set physiological entries of a channel-major 5×96 input block to
/// the 0.0 missing marker. Each (channel, timestep) is masked independently
/// with probability `fraction`; draw order is channel-major so results are
/// reproducible for a given stream.
pub fn mask_input(input: &mut [f32], fraction: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if input.len() != INPUT_CHANNELS * SEQ_LEN {
        return Err(Error::InvalidInput(format!(
            "input block must be {}x{} values, got {}",
            INPUT_CHANNELS,
            SEQ_LEN,
            input.len()
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "mask fraction {fraction} outside [0, 1]"
        )));
    }
    for ch in 0..PHYS_CHANNELS {
        for t in 0..SEQ_LEN {
            if rng.random::<f64>() < fraction {
                input[ch * SEQ_LEN + t] = 0.0;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, stream, StreamKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn endpoint_mapping() {
        let spec = NormalizationSpec::default();
        assert_abs_diff_eq!(spec.normalize(SignalKind::Temp, 28.0).unwrap(), 0.5);
        assert_abs_diff_eq!(spec.normalize(SignalKind::Temp, 45.0).unwrap(), 1.0);
        assert_abs_diff_eq!(spec.normalize(SignalKind::Hr, 125.0).unwrap(), 0.75);
    }

    #[test]
    fn missing_marker_passes_both_ways() {
        let spec = NormalizationSpec::default();
        assert_eq!(spec.normalize(SignalKind::Spo2, 0.0).unwrap(), 0.0);
        assert_eq!(spec.denormalize(SignalKind::Spo2, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn steps_have_no_range() {
        let spec = NormalizationSpec::default();
        assert!(spec.normalize(SignalKind::Steps, 1.0).is_err());
    }

    #[test]
    fn out_of_range_clamps_and_counts() {
        let spec = NormalizationSpec::default();
        let counter = ClampCounter::default();
        let v = spec
            .normalize_counted(SignalKind::Temp, 50.0, Some(&counter))
            .unwrap();
        assert_abs_diff_eq!(v, 1.0);
        assert_eq!(counter.get(), 1);
        // in-range values do not count
        spec.normalize_counted(SignalKind::Temp, 36.0, Some(&counter))
            .unwrap();
        assert_eq!(counter.get(), 1);
    }

    #[test]
    fn valid_values_stay_half_above_marker() {
        let spec = NormalizationSpec::default();
        for i in 0..200 {
            let x = 28.0 + (45.0 - 28.0) * i as f64 / 199.0;
            let n = spec.normalize(SignalKind::Temp, x).unwrap();
            assert!(n >= 0.5, "normalized {n} below 0.5 for physical {x}");
        }
    }

    proptest! {
        #[test]
        fn normalize_round_trips(x in 28.0f64..=45.0) {
            let spec = NormalizationSpec::default();
            let n = spec.normalize(SignalKind::Temp, x).unwrap();
            let back = spec.denormalize(SignalKind::Temp, n).unwrap();
            prop_assert!((back - x).abs() <= 1e-6);
        }

        #[test]
        fn denormalize_round_trips(n in 0.5f64..=1.0) {
            let spec = NormalizationSpec::default();
            let x = spec.denormalize(SignalKind::Hr, n).unwrap();
            let back = spec.normalize(SignalKind::Hr, x).unwrap();
            prop_assert!((back - n).abs() <= 1e-9);
        }
    }

    #[test]
    fn binning_means_and_empty_bins() {
        let seq = bin_15min(&[]).unwrap();
        assert!(seq.values.iter().all(|&v| v == 0.0));

        let seq = bin_15min(&[(0.1, 36.0), (0.2, 37.0), (23.9, 35.0)]).unwrap();
        assert_abs_diff_eq!(seq.values[0], 36.5);
        assert_abs_diff_eq!(seq.values[95], 35.0);
        assert_eq!(seq.values[1], 0.0);
    }

    #[test]
    fn binning_rejects_bad_samples() {
        assert!(bin_15min(&[(24.0, 36.0)]).is_err());
        assert!(bin_15min(&[(1.0, f64::NAN)]).is_err());
    }

    #[test]
    fn mask_zero_fraction_is_identity() {
        let mut input = vec![0.75f32; INPUT_CHANNELS * SEQ_LEN];
        let mut rng = stream(1, StreamKind::Mask, 0);
        mask_input(&mut input, 0.0, &mut rng).unwrap();
        assert!(input.iter().all(|&v| v == 0.75));
    }

    #[test]
    fn mask_full_fraction_clears_phys_channels_only() {
        let mut input = vec![0.75f32; INPUT_CHANNELS * SEQ_LEN];
        let mut rng = stream(1, StreamKind::Mask, 0);
        mask_input(&mut input, 1.0, &mut rng).unwrap();
        for ch in 0..INPUT_CHANNELS {
            for t in 0..SEQ_LEN {
                let v = input[ch * SEQ_LEN + t];
                if ch < PHYS_CHANNELS {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, 0.75, "steps channel {ch} must never be masked");
                }
            }
        }
    }

    #[test]
    fn mask_share_concentrates_around_fraction() {
        // 3 channels x 96 bins x 35 draws ≈ 10k entries
        let mut masked = 0usize;
        let mut total = 0usize;
        for i in 0..35 {
            let mut input = vec![0.75f32; INPUT_CHANNELS * SEQ_LEN];
            let mut rng = derive_rng(7, &[123, i]);
            mask_input(&mut input, 0.1, &mut rng).unwrap();
            masked += input[..PHYS_CHANNELS * SEQ_LEN]
                .iter()
                .filter(|&&v| v == 0.0)
                .count();
            total += PHYS_CHANNELS * SEQ_LEN;
        }
        let share = masked as f64 / total as f64;
        assert!(
            (share - 0.1).abs() <= 0.01,
            "masked share {share} not within 0.10 ± 0.01"
        );
    }
}
