//! Reference augmentation methods: additive Gaussian noise and
//! segmentation-and-recombination.

use crate::dataset::{AugmentationSet, EpochSet, Provenance};
use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("source set is empty")]
    EmptyClass,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Copies of source epochs with i.i.d. `N(0, σ²)` noise added.
///
/// Sources are consumed in repeated seeded shuffles, so every full cycle
/// uses each trial once and class proportions carry over to the output
/// (exactly when `n_out` divides by the source count, within one cycle
/// otherwise). The noise scale assumes standardized (unit-variance) inputs.
pub fn gaussian_noise_augment(
    epochs: &EpochSet,
    n_out: usize,
    sigma: f64,
    seed: u64,
) -> Result<AugmentationSet, BaselineError> {
    let n = epochs.n_trials();
    if n == 0 {
        return Err(BaselineError::EmptyClass);
    }
    let (c, t) = (epochs.n_channels(), epochs.n_samples());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::with_capacity(n_out);
    while order.len() < n_out {
        let mut cycle: Vec<usize> = (0..n).collect();
        cycle.shuffle(&mut rng);
        order.extend(cycle);
    }
    order.truncate(n_out);

    let mut out = Array3::<f32>::zeros((n_out, c, t));
    let mut labels = Vec::with_capacity(n_out);
    let mut provenance = Vec::with_capacity(n_out);
    for (row, &src) in order.iter().enumerate() {
        let mut plane = out.index_axis_mut(Axis(0), row);
        plane.assign(&epochs.epochs.index_axis(Axis(0), src));
        if sigma > 0.0 {
            for v in plane.iter_mut() {
                *v += (sigma * rng.sample::<f64, _>(StandardNormal)) as f32;
            }
        }
        labels.push(epochs.labels[src]);
        provenance.push(Provenance::NoiseAugmented {
            source_trial: src,
            seed,
        });
    }
    Ok(AugmentationSet {
        epochs: out,
        labels,
        provenance,
    })
}

/// Segment boundaries: equal-length pieces, remainder on the last one.
fn segment_bounds(n_samples: usize, n_segments: usize) -> Vec<(usize, usize)> {
    let base = n_samples / n_segments;
    (0..n_segments)
        .map(|k| {
            let start = k * base;
            let end = if k + 1 == n_segments { n_samples } else { start + base };
            (start, end)
        })
        .collect()
}

/// New trials assembled by drawing segment k from a random same-class
/// trial, keeping segment order.
pub fn segment_recombine(
    epochs: &EpochSet,
    n_out: usize,
    n_segments: usize,
    seed: u64,
) -> Result<AugmentationSet, BaselineError> {
    let n = epochs.n_trials();
    if n == 0 {
        return Err(BaselineError::EmptyClass);
    }
    let class = epochs.labels[0];
    if epochs.labels.iter().any(|&l| l != class) {
        return Err(BaselineError::Config(
            "recombination requires a single-class set".into(),
        ));
    }
    let (c, t) = (epochs.n_channels(), epochs.n_samples());
    if n_segments == 0 || n_segments > t {
        return Err(BaselineError::Config(format!(
            "segment count {n_segments} out of range 1..={t}"
        )));
    }
    if n == 1 {
        log::warn!("single-trial class: every recombination reproduces that trial");
    }

    let bounds = segment_bounds(t, n_segments);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array3::<f32>::zeros((n_out, c, t));
    for row in 0..n_out {
        let mut plane = out.index_axis_mut(Axis(0), row);
        for &(start, end) in &bounds {
            let src = rng.gen_range(0..n);
            plane
                .slice_mut(ndarray::s![.., start..end])
                .assign(&epochs.epochs.slice(ndarray::s![src, .., start..end]));
        }
    }
    Ok(AugmentationSet {
        epochs: out,
        labels: vec![class; n_out],
        provenance: (0..n_out)
            .map(|_| Provenance::SegmentRecombined { seed })
            .collect(),
    })
}
