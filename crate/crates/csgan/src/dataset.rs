//! Epoch containers, session loading, and train/GAN/test splits.
//!
//! Recordings are ingested from a converted epoch container: one directory
//! per subject/session holding `manifest.json` and `epochs.f32` (raw
//! little-endian f32, C-order, shape declared by the manifest). A documented
//! one-time converter script produces these containers from the original
//! recordings; no binary recording formats are parsed here.

use ndarray::{s, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

/// Cue window applied at load time, in seconds from trial onset.
pub const CUE_WINDOW_S: (f64, f64) = (2.0, 6.0);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("montage mismatch: expected {expected} channels, found {found}")]
    Montage { expected: usize, found: usize },
    #[error("bad container format: {0}")]
    Format(String),
    #[error("subject {0} not found (or duplicated) in the provided sets")]
    Subject(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Electrode layout of the supported recordings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Montage {
    #[serde(rename = "2a")]
    TwoA,
    #[serde(rename = "2b")]
    TwoB,
}

impl Montage {
    pub fn n_channels(self) -> usize {
        match self {
            Montage::TwoA => 22,
            Montage::TwoB => 3,
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Montage::TwoA => 4,
            Montage::TwoB => 2,
        }
    }

    /// Spatial-filter columns per class: 4 where the channel count allows,
    /// otherwise capped by the channel count.
    pub fn filter_columns(self) -> usize {
        4.min(self.n_channels())
    }

    /// Cropped trial length this montage is expected to produce at 250 Hz.
    pub fn cropped_samples(self) -> usize {
        1000
    }
}

impl std::str::FromStr for Montage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2a" => Ok(Montage::TwoA),
            "2b" => Ok(Montage::TwoB),
            other => Err(format!("unknown montage {other:?} (expected 2a or 2b)")),
        }
    }
}

/// Labeled multi-channel epochs for one subject/session.
#[derive(Debug, Clone)]
pub struct EpochSet {
    /// n_trials × n_channels × n_samples, microvolt scale.
    pub epochs: Array3<f32>,
    /// Class per trial, in `0..n_classes`.
    pub labels: Vec<usize>,
    pub subject: String,
    /// Session tag, `"T"` or `"E"`.
    pub session: String,
    pub rate_hz: f64,
    pub channel_names: Vec<String>,
}

impl EpochSet {
    pub fn n_trials(&self) -> usize {
        self.epochs.shape()[0]
    }

    pub fn n_channels(&self) -> usize {
        self.epochs.shape()[1]
    }

    pub fn n_samples(&self) -> usize {
        self.epochs.shape()[2]
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Trial indices carrying label `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// New set holding the given trials, in the given order.
    pub fn select(&self, indices: &[usize]) -> EpochSet {
        let mut epochs = Array3::zeros((indices.len(), self.n_channels(), self.n_samples()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            epochs
                .index_axis_mut(Axis(0), row)
                .assign(&self.epochs.index_axis(Axis(0), idx));
            labels.push(self.labels[idx]);
        }
        EpochSet {
            epochs,
            labels,
            subject: self.subject.clone(),
            session: self.session.clone(),
            rate_hz: self.rate_hz,
            channel_names: self.channel_names.clone(),
        }
    }

    /// Trials of a single class, preserving order.
    pub fn class_subset(&self, class: usize) -> EpochSet {
        self.select(&self.class_indices(class))
    }

    /// Concatenate sets along the trial axis. Shapes must agree; the subject
    /// tag of the result is `"pooled"` when sources differ.
    pub fn concat(sets: &[&EpochSet]) -> Result<EpochSet, DatasetError> {
        let first = sets
            .first()
            .ok_or_else(|| DatasetError::Format("cannot concat zero sets".into()))?;
        let (c, t) = (first.n_channels(), first.n_samples());
        let total: usize = sets.iter().map(|s| s.n_trials()).sum();
        let mut epochs = Array3::zeros((total, c, t));
        let mut labels = Vec::with_capacity(total);
        let mut row = 0;
        for set in sets {
            if set.n_channels() != c || set.n_samples() != t {
                return Err(DatasetError::Format(format!(
                    "shape mismatch in concat: ({c},{t}) vs ({},{})",
                    set.n_channels(),
                    set.n_samples()
                )));
            }
            for i in 0..set.n_trials() {
                epochs
                    .index_axis_mut(Axis(0), row)
                    .assign(&set.epochs.index_axis(Axis(0), i));
                labels.push(set.labels[i]);
                row += 1;
            }
        }
        let same_subject = sets.iter().all(|s| s.subject == first.subject);
        Ok(EpochSet {
            epochs,
            labels,
            subject: if same_subject {
                first.subject.clone()
            } else {
                "pooled".into()
            },
            session: first.session.clone(),
            rate_hz: first.rate_hz,
            channel_names: first.channel_names.clone(),
        })
    }
}

/// Where one augmented trial came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Drawn from a trained generator checkpoint.
    Generated {
        checkpoint: String,
        noise_seed: u64,
        index: usize,
    },
    /// A source trial plus i.i.d. Gaussian noise.
    NoiseAugmented { source_trial: usize, seed: u64 },
    /// Concatenation of same-class segments from several source trials.
    SegmentRecombined { seed: u64 },
}

/// Generated or augmented epochs with labels and per-trial provenance.
#[derive(Debug, Clone)]
pub struct AugmentationSet {
    /// n_trials × n_channels × n_samples.
    pub epochs: Array3<f32>,
    pub labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

impl AugmentationSet {
    pub fn n_trials(&self) -> usize {
        self.epochs.shape()[0]
    }

    /// Merge several augmentation sets, trial order preserved.
    pub fn concat(sets: &[&AugmentationSet]) -> AugmentationSet {
        let total: usize = sets.iter().map(|s| s.n_trials()).sum();
        let (c, t) = {
            let first = sets.first().expect("at least one set");
            (first.epochs.shape()[1], first.epochs.shape()[2])
        };
        let mut epochs = Array3::zeros((total, c, t));
        let mut labels = Vec::with_capacity(total);
        let mut provenance = Vec::with_capacity(total);
        let mut row = 0;
        for set in sets {
            for i in 0..set.n_trials() {
                epochs
                    .index_axis_mut(Axis(0), row)
                    .assign(&set.epochs.index_axis(Axis(0), i));
                labels.push(set.labels[i]);
                provenance.push(set.provenance[i].clone());
                row += 1;
            }
        }
        AugmentationSet {
            epochs,
            labels,
            provenance,
        }
    }

    /// View as an [`EpochSet`], borrowing session metadata from `like`.
    pub fn to_epoch_set(&self, like: &EpochSet) -> EpochSet {
        EpochSet {
            epochs: self.epochs.clone(),
            labels: self.labels.clone(),
            subject: like.subject.clone(),
            session: "aug".to_string(),
            rate_hz: like.rate_hz,
            channel_names: like.channel_names.clone(),
        }
    }
}

/// How to carve a dataset into train / GAN / test portions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub target_subject: String,
    /// Trials handed to the GAN from the target's 'T' session.
    pub gan_count: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ContainerManifest {
    subject: String,
    session: String,
    rate_hz: f64,
    n_trials: usize,
    n_channels: usize,
    n_samples: usize,
    channel_names: Vec<String>,
    labels: Vec<usize>,
}

/// Load one converted session.
///
/// EOG channels (names starting with `EOG`) are dropped, non-finite samples
/// become 0, and trials longer than the cue window are cropped to
/// [2 s, 6 s] from trial onset (samples 500..=1499 at 250 Hz). Shorter
/// payloads are taken as already cropped.
pub fn load_session<P: AsRef<Path>>(path: P, montage: Montage) -> Result<EpochSet, DatasetError> {
    let dir = path.as_ref();
    let manifest: ContainerManifest =
        serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;

    if manifest.labels.len() != manifest.n_trials {
        return Err(DatasetError::Format(format!(
            "label vector length {} != trial count {}",
            manifest.labels.len(),
            manifest.n_trials
        )));
    }
    if manifest.channel_names.len() != manifest.n_channels {
        return Err(DatasetError::Format(format!(
            "channel_names length {} != n_channels {}",
            manifest.channel_names.len(),
            manifest.n_channels
        )));
    }
    let k = montage.n_classes();
    if let Some(&bad) = manifest.labels.iter().find(|&&l| l >= k) {
        return Err(DatasetError::Format(format!(
            "label {bad} out of range for {k} classes"
        )));
    }

    let mut file = fs::File::open(dir.join("epochs.f32"))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let expected = manifest.n_trials * manifest.n_channels * manifest.n_samples * 4;
    if bytes.len() != expected {
        return Err(DatasetError::Format(format!(
            "epochs.f32 holds {} bytes, manifest implies {expected}",
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| {
            let v = f32::from_le_bytes(b.try_into().unwrap());
            if v.is_finite() {
                v
            } else {
                0.0
            }
        })
        .collect();
    let raw = Array3::from_shape_vec(
        (manifest.n_trials, manifest.n_channels, manifest.n_samples),
        data,
    )
    .expect("shape checked above");

    // Drop EOG channels by name before checking the montage.
    let keep: Vec<usize> = manifest
        .channel_names
        .iter()
        .enumerate()
        .filter(|(_, name)| !name.to_ascii_uppercase().starts_with("EOG"))
        .map(|(i, _)| i)
        .collect();
    if keep.len() != montage.n_channels() {
        return Err(DatasetError::Montage {
            expected: montage.n_channels(),
            found: keep.len(),
        });
    }
    let channel_names: Vec<String> = keep
        .iter()
        .map(|&i| manifest.channel_names[i].clone())
        .collect();
    let eeg = raw.select(Axis(1), &keep);

    // Crop to the cue window when the stored trials are long enough.
    let start = (CUE_WINDOW_S.0 * manifest.rate_hz).round() as usize;
    let len = ((CUE_WINDOW_S.1 - CUE_WINDOW_S.0) * manifest.rate_hz).round() as usize;
    let epochs = if manifest.n_samples >= start + len {
        eeg.slice(s![.., .., start..start + len]).to_owned()
    } else {
        eeg.to_owned()
    };
    if montage == Montage::TwoA && epochs.shape()[2] != montage.cropped_samples() {
        return Err(DatasetError::Format(format!(
            "2a trials must hold {} samples after cropping, found {}",
            montage.cropped_samples(),
            epochs.shape()[2]
        )));
    }

    Ok(EpochSet {
        epochs,
        labels: manifest.labels,
        subject: manifest.subject,
        session: manifest.session,
        rate_hz: manifest.rate_hz,
        channel_names,
    })
}

/// Write a set as an epoch container directory.
pub fn write_container<P: AsRef<Path>>(set: &EpochSet, dir: P) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = ContainerManifest {
        subject: set.subject.clone(),
        session: set.session.clone(),
        rate_hz: set.rate_hz,
        n_trials: set.n_trials(),
        n_channels: set.n_channels(),
        n_samples: set.n_samples(),
        channel_names: set.channel_names.clone(),
        labels: set.labels.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    let mut bytes = Vec::with_capacity(set.epochs.len() * 4);
    for &v in set.epochs.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join("epochs.f32"), bytes)?;
    Ok(())
}

/// Leave-one-subject-out split.
///
/// `train` pools the 'T' epochs of every non-target subject; `gan_pool`
/// draws `spec.gan_count` trials uniformly without replacement (seeded) from
/// the target's session; `test` keeps the target's remaining trials.
pub fn split_cross_subject(
    sets: &[EpochSet],
    spec: &SplitSpec,
) -> Result<(EpochSet, EpochSet, EpochSet), DatasetError> {
    let mut target = None;
    for (i, set) in sets.iter().enumerate() {
        if set.subject == spec.target_subject {
            if target.is_some() {
                return Err(DatasetError::Subject(spec.target_subject.clone()));
            }
            target = Some(i);
        }
    }
    let target = target.ok_or_else(|| DatasetError::Subject(spec.target_subject.clone()))?;
    let target_set = &sets[target];
    let n = target_set.n_trials();
    if spec.gan_count >= n {
        return Err(DatasetError::Split(format!(
            "gan_count {} leaves no test trials (target has {n})",
            spec.gan_count
        )));
    }

    let others: Vec<&EpochSet> = sets
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, s)| s)
        .collect();
    let train = EpochSet::concat(&others)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut pool: Vec<usize> = indices[..spec.gan_count].to_vec();
    let mut rest: Vec<usize> = indices[spec.gan_count..].to_vec();
    pool.sort_unstable();
    rest.sort_unstable();

    Ok((train, target_set.select(&pool), target_set.select(&rest)))
}

/// Stratified shuffled split of one subject's data into train and test.
///
/// Class proportions in the test set are preserved to within one trial per
/// class (largest-remainder allocation).
pub fn split_single_subject(
    set: &EpochSet,
    test_count: usize,
    seed: u64,
) -> Result<(EpochSet, EpochSet), DatasetError> {
    let n = set.n_trials();
    if test_count >= n {
        return Err(DatasetError::Split(format!(
            "test_count {test_count} must be smaller than the {n} available trials"
        )));
    }
    let k = set.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Largest-remainder allocation of test slots across classes.
    let counts: Vec<usize> = (0..k).map(|c| set.class_indices(c).len()).collect();
    let mut alloc: Vec<usize> = Vec::with_capacity(k);
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(k);
    for (c, &n_c) in counts.iter().enumerate() {
        let exact = test_count as f64 * n_c as f64 / n as f64;
        alloc.push(exact.floor() as usize);
        remainders.push((c, exact - exact.floor()));
    }
    let mut short = test_count - alloc.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (c, _) in remainders {
        if short == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            short -= 1;
        }
    }

    let mut test_idx = Vec::with_capacity(test_count);
    let mut train_idx = Vec::with_capacity(n - test_count);
    for (c, &take) in alloc.iter().enumerate() {
        let mut idx = set.class_indices(c);
        idx.shuffle(&mut rng);
        test_idx.extend_from_slice(&idx[..take]);
        train_idx.extend_from_slice(&idx[take..]);
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((set.select(&train_idx), set.select(&test_idx)))
}
