//! Band-pass filtering and z-score standardization.
//!
//! The band-pass is a 4th-order Butterworth (bilinear transform, cascaded
//! biquads) run forward and backward for zero phase. Standardization is per
//! channel with statistics fitted on the training set only and re-applied
//! unchanged to held-out data.

use crate::dataset::EpochSet;
use ndarray::{Array1, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid filter corners: {0}")]
    Filter(String),
    #[error("channel count mismatch: set has {set}, stats have {stats}")]
    Shape { set: usize, stats: usize },
    #[error("training set is empty")]
    EmptyTrain,
}

/// Per-channel standardization statistics fitted on a training set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// Variance floor guarding flat channels.
    pub epsilon: f64,
}

/// One second-order section in direct form II transposed.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2], // a0 normalized to 1
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Steady-state filter state for a unit-step input.
    fn step_state(&self) -> [f64; 2] {
        let h = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * h;
        let z1 = self.b[1] - self.a[0] * h + z2;
        [z1, z2]
    }

    fn run(&self, x: &[f64], y: &mut Vec<f64>, zi: [f64; 2]) {
        let (mut z1, mut z2) = (zi[0], zi[1]);
        y.clear();
        y.reserve(x.len());
        for &xi in x {
            let yi = self.b[0] * xi + z1;
            z1 = self.b[1] * xi - self.a[0] * yi + z2;
            z2 = self.b[2] * xi - self.a[1] * yi;
            y.push(yi);
        }
    }
}

/// Butterworth band-pass as a biquad cascade with an overall gain.
#[derive(Debug, Clone)]
struct SosFilter {
    sections: Vec<Biquad>,
    gain: f64,
}

/// Design an order-`n` Butterworth band-pass (2·n poles) for the given
/// corners, discretized with the bilinear transform.
fn design_bandpass(order: usize, low_hz: f64, high_hz: f64, rate_hz: f64) -> SosFilter {
    let fs2 = 2.0 * rate_hz;
    // Pre-warped analog corner frequencies.
    let wl = fs2 * (std::f64::consts::PI * low_hz / rate_hz).tan();
    let wh = fs2 * (std::f64::consts::PI * high_hz / rate_hz).tan();
    let bw = wh - wl;
    let w0sq = wl * wh;

    // Analog low-pass prototype poles on the unit circle (left half-plane).
    let mut analog_poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = std::f64::consts::PI * (2.0 * k as f64 + order as f64 + 1.0)
            / (2.0 * order as f64);
        let p = Complex64::new(theta.cos(), theta.sin());
        // Low-pass → band-pass: each prototype pole yields a conjugate pair
        // solving s² − p·bw·s + w0² = 0.
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0sq).sqrt();
        analog_poles.push((pb + disc) * 0.5);
        analog_poles.push((pb - disc) * 0.5);
    }

    // Bilinear transform; zeros land at z = +1 (from s = 0) and z = −1
    // (from s = ∞), `order` of each.
    let digital_poles: Vec<Complex64> = analog_poles
        .iter()
        .map(|&s| (Complex64::new(fs2, 0.0) + s) / (Complex64::new(fs2, 0.0) - s))
        .collect();

    // Group poles into conjugate pairs: sort by (re, |im|) and take every
    // second entry as a pair representative.
    let mut reps: Vec<Complex64> = digital_poles
        .iter()
        .copied()
        .filter(|p| p.im >= 0.0)
        .collect();
    reps.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });

    let sections: Vec<Biquad> = reps
        .iter()
        .map(|p| Biquad {
            b: [1.0, 0.0, -1.0], // (z−1)(z+1), one of each zero per section
            a: [-2.0 * p.re, p.norm_sqr()],
        })
        .collect();

    // Normalize to unit gain at the (warped) center frequency.
    let wc = 2.0 * (w0sq.sqrt() / fs2).atan();
    let z = Complex64::new(wc.cos(), wc.sin());
    let mut h = Complex64::new(1.0, 0.0);
    for s in &sections {
        let num = s.b[0] * z * z + s.b[1] * z + s.b[2];
        let den = z * z + s.a[0] * z + s.a[1];
        h *= num / den;
    }
    SosFilter {
        sections,
        gain: 1.0 / h.norm(),
    }
}

/// Zero-phase filtering: odd-reflection padding, forward pass, backward pass.
fn filtfilt(filter: &SosFilter, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let pad = (n - 1).min(3 * 8 * (filter.sections.len() + 1)).max(1);

    // Odd extension at both ends.
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in (n - 1 - pad..n - 1).rev() {
        ext.push(2.0 * x[n - 1] - x[i]);
    }

    // The overall gain belongs to each pass: filtfilt realizes |H|².
    let one_pass = |signal: &mut Vec<f64>, scratch: &mut Vec<f64>| {
        for v in signal.iter_mut() {
            *v *= filter.gain;
        }
        for s in &filter.sections {
            let zi = s.step_state();
            let x0 = signal[0];
            s.run(signal, scratch, [zi[0] * x0, zi[1] * x0]);
            std::mem::swap(signal, scratch);
        }
    };

    let mut signal = ext;
    let mut scratch = Vec::new();
    one_pass(&mut signal, &mut scratch);
    signal.reverse();
    one_pass(&mut signal, &mut scratch);
    signal.reverse();
    signal[pad..pad + n].to_vec()
}

/// Band-pass every channel of every trial with a zero-phase 4th-order
/// Butterworth filter of the stated corners.
pub fn bandpass(set: &EpochSet, low_hz: f64, high_hz: f64) -> Result<EpochSet, PreprocessError> {
    let nyquist = set.rate_hz / 2.0;
    if !(low_hz > 0.0 && high_hz > low_hz && high_hz < nyquist) {
        return Err(PreprocessError::Filter(format!(
            "corners ({low_hz}, {high_hz}) must satisfy 0 < low < high < {nyquist}"
        )));
    }
    let filter = design_bandpass(4, low_hz, high_hz, set.rate_hz);

    let mut out = set.clone();
    let (n, c, t) = (set.n_trials(), set.n_channels(), set.n_samples());
    let mut buf = vec![0.0f64; t];
    for trial in 0..n {
        for ch in 0..c {
            for (i, v) in buf.iter_mut().enumerate() {
                *v = set.epochs[[trial, ch, i]] as f64;
            }
            let filtered = filtfilt(&filter, &buf);
            for (i, &v) in filtered.iter().enumerate() {
                out.epochs[[trial, ch, i]] = v as f32;
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper for the pipeline's 4–40 Hz band.
pub fn bandpass_default(set: &EpochSet) -> Result<EpochSet, PreprocessError> {
    bandpass(set, 4.0, 40.0)
}

/// Fit per-channel mean and population variance over all trials and samples.
pub fn zscore_fit(train: &EpochSet) -> Result<StandardizationStats, PreprocessError> {
    if train.n_trials() == 0 {
        return Err(PreprocessError::EmptyTrain);
    }
    let (n, c, t) = (train.n_trials(), train.n_channels(), train.n_samples());
    let count = (n * t) as f64;
    let mut mu = Array1::<f64>::zeros(c);
    for trial in train.epochs.outer_iter() {
        for (ch, row) in trial.outer_iter().enumerate() {
            mu[ch] += row.iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    mu /= count;
    let mut sigma2 = Array1::<f64>::zeros(c);
    for trial in train.epochs.outer_iter() {
        for (ch, row) in trial.outer_iter().enumerate() {
            sigma2[ch] += row
                .iter()
                .map(|&v| {
                    let d = v as f64 - mu[ch];
                    d * d
                })
                .sum::<f64>();
        }
    }
    sigma2 /= count;
    Ok(StandardizationStats {
        mu: mu.to_vec(),
        sigma2: sigma2.to_vec(),
        epsilon: 1e-8,
    })
}

/// Apply previously fitted statistics: `X' = (X − μ) / √max(σ², ε)`.
pub fn zscore_apply(
    set: &EpochSet,
    stats: &StandardizationStats,
) -> Result<EpochSet, PreprocessError> {
    if set.n_channels() != stats.mu.len() {
        return Err(PreprocessError::Shape {
            set: set.n_channels(),
            stats: stats.mu.len(),
        });
    }
    let denom: Vec<f64> = stats
        .sigma2
        .iter()
        .map(|&s2| s2.max(stats.epsilon).sqrt())
        .collect();
    let (n, c, t) = (set.n_trials(), set.n_channels(), set.n_samples());
    let mut epochs = Array3::<f32>::zeros((n, c, t));
    for trial in 0..n {
        for ch in 0..c {
            for i in 0..t {
                epochs[[trial, ch, i]] =
                    ((set.epochs[[trial, ch, i]] as f64 - stats.mu[ch]) / denom[ch]) as f32;
            }
        }
    }
    let mut out = set.clone();
    out.epochs = epochs;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    /// Single-frequency DFT amplitude over an integer number of cycles.
    fn dft_amplitude(x: &[f32], freq_hz: f64, rate_hz: f64) -> f64 {
        let n = x.len();
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * freq_hz * t as f64 / rate_hz;
            acc += Complex64::new(phase.cos(), phase.sin()) * v as f64;
        }
        2.0 * acc.norm() / n as f64
    }

    fn band_gain_db(freq_hz: f64) -> f64 {
        let set = synth::sinusoid_set(freq_hz, 250.0, 1, 1, 1000);
        let filtered = bandpass(&set, 4.0, 40.0).unwrap();
        // Measure over the central 500 samples (integer cycle counts for the
        // frequencies used here) to exclude edge transients.
        let mid_in: Vec<f32> = (250..750).map(|t| set.epochs[[0, 0, t]]).collect();
        let mid_out: Vec<f32> = (250..750).map(|t| filtered.epochs[[0, 0, t]]).collect();
        let a_in = dft_amplitude(&mid_in, freq_hz, 250.0);
        let a_out = dft_amplitude(&mid_out, freq_hz, 250.0);
        20.0 * (a_out / a_in).log10()
    }

    #[test]
    fn stopband_attenuation_at_2hz() {
        let gain = band_gain_db(2.0);
        assert!(gain <= -20.0, "2 Hz gain {gain} dB, expected ≤ −20 dB");
    }

    #[test]
    fn passband_flat_at_20hz() {
        let gain = band_gain_db(20.0);
        assert!(gain.abs() <= 1.0, "20 Hz gain {gain} dB, expected within ±1 dB");
    }

    #[test]
    fn zero_in_zero_out() {
        let mut set = synth::sinusoid_set(10.0, 250.0, 1, 2, 500);
        set.epochs.fill(0.0);
        let filtered = bandpass(&set, 4.0, 40.0).unwrap();
        assert!(filtered.epochs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_corners_rejected() {
        let set = synth::sinusoid_set(10.0, 250.0, 1, 1, 500);
        assert!(matches!(
            bandpass(&set, 4.0, 200.0),
            Err(PreprocessError::Filter(_))
        ));
        assert!(matches!(
            bandpass(&set, 0.0, 40.0),
            Err(PreprocessError::Filter(_))
        ));
    }

    #[test]
    fn bandpass_is_linear() {
        let x = synth::sinusoid_set(10.0, 250.0, 1, 1, 600);
        let y = synth::sinusoid_set(17.0, 250.0, 1, 1, 600);
        let (a, b) = (0.3f32, 0.5f32);
        let mut combo = x.clone();
        for (v, (&xv, &yv)) in combo
            .epochs
            .iter_mut()
            .zip(x.epochs.iter().zip(y.epochs.iter()))
        {
            *v = a * xv + b * yv;
        }
        let lhs = bandpass(&combo, 4.0, 40.0).unwrap();
        let fx = bandpass(&x, 4.0, 40.0).unwrap();
        let fy = bandpass(&y, 4.0, 40.0).unwrap();
        for ((&l, &gx), &gy) in lhs
            .epochs
            .iter()
            .zip(fx.epochs.iter())
            .zip(fy.epochs.iter())
        {
            assert!((l - (a * gx + b * gy)).abs() < 1e-6);
        }
    }

    #[test]
    fn zscore_fit_basics() {
        // Channel 0 constant at 5.0: mu = 5, sigma2 = 0.
        let mut set = synth::white_noise_set("s", 1, 2, 2, 64, 3);
        for trial in 0..2 {
            for t in 0..64 {
                set.epochs[[trial, 0, t]] = 5.0;
            }
        }
        let stats = zscore_fit(&set).unwrap();
        assert!((stats.mu[0] - 5.0).abs() < 1e-12);
        assert!(stats.sigma2[0].abs() < 1e-12);

        // Constant channel standardizes to all zeros under the epsilon floor.
        let applied = zscore_apply(&set, &stats).unwrap();
        for trial in 0..2 {
            for t in 0..64 {
                assert_eq!(applied.epochs[[trial, 0, t]], 0.0);
            }
        }
    }

    #[test]
    fn zscore_single_trial_matches_brute_force() {
        let set = synth::white_noise_set("s", 1, 1, 3, 100, 9);
        let stats = zscore_fit(&set).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..100).map(|t| set.epochs[[0, ch, t]] as f64).collect();
            let mean = vals.iter().sum::<f64>() / 100.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 100.0;
            assert!((stats.mu[ch] - mean).abs() < 1e-12);
            assert!((stats.sigma2[ch] - var).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_refit_is_neutral() {
        let set = synth::white_noise_set("s", 2, 20, 4, 128, 17);
        let stats = zscore_fit(&set).unwrap();
        let std_set = zscore_apply(&set, &stats).unwrap();
        let refit = zscore_fit(&std_set).unwrap();
        for ch in 0..4 {
            assert!(refit.mu[ch].abs() < 1e-6, "mu[{ch}] = {}", refit.mu[ch]);
            assert!(
                (refit.sigma2[ch] - 1.0).abs() < 1e-6,
                "sigma2[{ch}] = {}",
                refit.sigma2[ch]
            );
        }
    }

    #[test]
    fn apply_exact_mean_gives_zeros() {
        let set = synth::white_noise_set("s", 1, 3, 2, 32, 4);
        let stats = zscore_fit(&set).unwrap();
        let mut at_mean = set.clone();
        for trial in 0..3 {
            for ch in 0..2 {
                for t in 0..32 {
                    at_mean.epochs[[trial, ch, t]] = stats.mu[ch] as f32;
                }
            }
        }
        // Exactness holds only when mu is representable in f32; rebuild the
        // stats from the rounded values so the subtraction cancels exactly.
        let rounded_stats = StandardizationStats {
            mu: stats.mu.iter().map(|&m| m as f32 as f64).collect(),
            sigma2: stats.sigma2.clone(),
            epsilon: stats.epsilon,
        };
        let applied = zscore_apply(&at_mean, &rounded_stats).unwrap();
        assert!(applied.epochs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let set = synth::white_noise_set("s", 1, 2, 3, 16, 4);
        let other = synth::white_noise_set("s", 1, 2, 5, 16, 4);
        let stats = zscore_fit(&other).unwrap();
        assert!(matches!(
            zscore_apply(&set, &stats),
            Err(PreprocessError::Shape { set: 3, stats: 5 })
        ));
    }

    #[test]
    fn round_trip_identity() {
        let set = synth::white_noise_set("s", 2, 10, 4, 64, 8);
        let stats = zscore_fit(&set).unwrap();
        let std_set = zscore_apply(&set, &stats).unwrap();
        let refit = zscore_fit(&std_set).unwrap();
        let round = zscore_apply(&std_set, &refit).unwrap();
        for (&a, &b) in round.epochs.iter().zip(std_set.epochs.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
