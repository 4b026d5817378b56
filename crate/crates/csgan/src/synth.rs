//! Synthetic epoch generators for tests, demos, and protocol dry runs.
//!
//! The cross-subject generator draws white noise and colors it with a
//! per-(subject, class) mixing matrix `A = Q_s · Q · D_k`: a shared rotation
//! `Q`, a class-specific diagonal gain `D_k` boosting one channel group per
//! class, and a small subject-specific rotation `Q_s`. Class identity lives
//! in the channel-covariance structure, which is exactly what the spatial
//! filter bank extracts.

use crate::dataset::EpochSet;
use nalgebra::DMatrix;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Electrode names of the 22-channel recording montage.
pub fn montage_2a_names() -> Vec<String> {
    [
        "Fz", "FC3", "FC1", "FCz", "FC2", "FC4", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "CP3",
        "CP1", "CPz", "CP2", "CP4", "P1", "Pz", "P2", "POz",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn generic_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("ch{i:02}")).collect()
}

/// Independent standard-normal epochs with round-robin labels.
pub fn white_noise_set(
    subject: &str,
    n_classes: usize,
    trials_per_class: usize,
    n_channels: usize,
    n_samples: usize,
    seed: u64,
) -> EpochSet {
    let n_trials = n_classes * trials_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epochs = Array3::zeros((n_trials, n_channels, n_samples));
    for v in epochs.iter_mut() {
        *v = rng.sample::<f32, _>(StandardNormal);
    }
    EpochSet {
        epochs,
        labels: (0..n_trials).map(|i| i % n_classes).collect(),
        subject: subject.to_string(),
        session: "T".to_string(),
        rate_hz: 250.0,
        channel_names: generic_names(n_channels),
    }
}

/// Pure sinusoid on every channel; used by filter and spectrum tests.
pub fn sinusoid_set(
    freq_hz: f64,
    rate_hz: f64,
    n_trials: usize,
    n_channels: usize,
    n_samples: usize,
) -> EpochSet {
    let mut epochs = Array3::zeros((n_trials, n_channels, n_samples));
    for mut trial in epochs.outer_iter_mut() {
        for mut ch in trial.outer_iter_mut() {
            for (t, v) in ch.iter_mut().enumerate() {
                *v = (2.0 * std::f64::consts::PI * freq_hz * t as f64 / rate_hz).sin() as f32;
            }
        }
    }
    EpochSet {
        epochs,
        labels: vec![0; n_trials],
        subject: "synth".to_string(),
        session: "T".to_string(),
        rate_hz,
        channel_names: generic_names(n_channels),
    }
}

/// Configuration of the cross-subject mixing-matrix generator.
#[derive(Debug, Clone)]
pub struct MixingConfig {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub trials_per_class: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    /// Extra gain on each class's channel group (0 = classes identical).
    pub class_gain: f64,
    /// Magnitude of the per-subject rotation (0 = subjects identical).
    pub subject_jitter: f64,
    pub seed: u64,
}

impl Default for MixingConfig {
    fn default() -> Self {
        MixingConfig {
            n_subjects: 9,
            n_classes: 4,
            trials_per_class: 20,
            n_channels: 22,
            n_samples: 256,
            class_gain: 3.0,
            subject_jitter: 0.15,
            seed: 0,
        }
    }
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix the sign convention so the factorization is unique.
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

fn class_gains(cfg: &MixingConfig, class: usize) -> DMatrix<f64> {
    let c = cfg.n_channels;
    let group = (c / cfg.n_classes).max(1);
    let mut d = DMatrix::identity(c, c);
    for i in 0..group {
        let ch = (class * group + i) % c;
        d[(ch, ch)] = 1.0 + cfg.class_gain;
    }
    d
}

/// Mixing matrices for one subject, one per class.
pub fn subject_mixing(cfg: &MixingConfig, subject_idx: usize) -> Vec<DMatrix<f64>> {
    let c = cfg.n_channels;
    let mut base_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "synth/base"));
    let q = random_orthogonal(c, &mut base_rng);

    let mut subj_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(
        cfg.seed,
        &format!("synth/subject/{subject_idx}"),
    ));
    let jitter = DMatrix::from_fn(c, c, |_, _| {
        cfg.subject_jitter * subj_rng.sample::<f64, _>(StandardNormal)
    });
    let qs = (DMatrix::identity(c, c) + jitter).qr().q();

    (0..cfg.n_classes)
        .map(|k| &qs * &q * class_gains(cfg, k))
        .collect()
}

/// One subject's 'T' session drawn from the mixing model.
pub fn mixing_subject_set(cfg: &MixingConfig, subject_idx: usize) -> EpochSet {
    let mixing = subject_mixing(cfg, subject_idx);
    let n_trials = cfg.n_classes * cfg.trials_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(
        cfg.seed,
        &format!("synth/trials/{subject_idx}"),
    ));
    let mut epochs = Array3::zeros((n_trials, cfg.n_channels, cfg.n_samples));
    let mut labels = Vec::with_capacity(n_trials);
    for (i, mut trial) in epochs.outer_iter_mut().enumerate() {
        let class = i % cfg.n_classes;
        labels.push(class);
        let noise = DMatrix::from_fn(cfg.n_channels, cfg.n_samples, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let colored = &mixing[class] * noise;
        for c in 0..cfg.n_channels {
            for t in 0..cfg.n_samples {
                trial[[c, t]] = colored[(c, t)] as f32;
            }
        }
    }
    EpochSet {
        epochs,
        labels,
        subject: format!("S{:02}", subject_idx + 1),
        session: "T".to_string(),
        rate_hz: 250.0,
        channel_names: if cfg.n_channels == 22 {
            montage_2a_names()
        } else {
            generic_names(cfg.n_channels)
        },
    }
}

/// All subjects of the mixing model, in subject order.
pub fn mixing_dataset(cfg: &MixingConfig) -> Vec<EpochSet> {
    (0..cfg.n_subjects)
        .map(|s| mixing_subject_set(cfg, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixing_sets_are_deterministic_and_labeled() {
        let cfg = MixingConfig {
            n_subjects: 2,
            n_classes: 4,
            trials_per_class: 3,
            n_channels: 6,
            n_samples: 32,
            ..Default::default()
        };
        let a = mixing_subject_set(&cfg, 0);
        let b = mixing_subject_set(&cfg, 0);
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.n_trials(), 12);
        for k in 0..4 {
            assert_eq!(a.class_indices(k).len(), 3);
        }
        let other = mixing_subject_set(&cfg, 1);
        assert_ne!(a.epochs, other.epochs);
        assert_eq!(other.subject, "S02");
    }

    #[test]
    fn class_gain_shapes_channel_variance() {
        let cfg = MixingConfig {
            n_subjects: 1,
            n_classes: 2,
            trials_per_class: 30,
            n_channels: 4,
            n_samples: 128,
            class_gain: 4.0,
            subject_jitter: 0.0,
            ..Default::default()
        };
        let set = mixing_subject_set(&cfg, 0);
        // Total power of class-0 trials should clearly differ from class-1
        // trials on at least one channel pattern: compare per-class total
        // variance after removing the shared rotation is overkill; total
        // Frobenius energy per class differs because gains differ.
        let energy = |class: usize| -> f64 {
            set.class_indices(class)
                .iter()
                .map(|&i| {
                    set.epochs
                        .index_axis(ndarray::Axis(0), i)
                        .iter()
                        .map(|&v| (v as f64) * (v as f64))
                        .sum::<f64>()
                })
                .sum::<f64>()
        };
        let (e0, e1) = (energy(0), energy(1));
        // Same gain magnitude per class, so total energies are comparable,
        // but covariance structure must differ: check via channel variances
        // in the unrotated frame is indirect; instead verify determinism of
        // mixing and that per-class mean covariances differ markedly.
        assert!(e0 > 0.0 && e1 > 0.0);
        let cov = |class: usize| -> ndarray::Array2<f64> {
            let idx = set.class_indices(class);
            let mut acc = ndarray::Array2::<f64>::zeros((4, 4));
            for &i in &idx {
                let x = set.epochs.index_axis(ndarray::Axis(0), i);
                for a in 0..4 {
                    for b in 0..4 {
                        let mut s = 0.0;
                        for t in 0..128 {
                            s += x[[a, t]] as f64 * x[[b, t]] as f64;
                        }
                        acc[[a, b]] += s;
                    }
                }
            }
            acc / idx.len() as f64
        };
        let c0 = cov(0);
        let c1 = cov(1);
        let diff = (&c0 - &c1).iter().map(|v| v * v).sum::<f64>().sqrt();
        let base = c0.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            diff > 0.1 * base,
            "class covariances too similar: {diff} vs {base}"
        );
    }
}
