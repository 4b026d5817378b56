//! One-versus-rest common spatial filter bank.
//!
//! For each class the "one" and "rest" mean covariances `R1`, `R2` are
//! formed from trace-normalized per-trial covariances `XXᵀ/tr(XXᵀ)`. The sum
//! `R = R1 + R2` is whitened by `P = √Λ⁻¹ Uᵀ` (eigenvalues descending), the
//! whitened rest covariance `S2 = P R2 Pᵀ` is orthogonally diagonalized as
//! `S2 = B Λ_S Bᵀ` with `Λ_S` ascending, and the class sub-filter keeps the
//! first `m` columns of `PᵀB` — the directions where the complementary
//! spectrum `Λ'_S = I − Λ_S` is largest. Sub-filters stack column-wise into
//! the bank filter `W`, and epochs are projected as `Z = Wᵀ X`.
//!
//! Frobenius distances from each "one" trial's covariance to `R1` feed the
//! generative model's covariance regularizer, so their mean and standard
//! deviation are kept alongside the matrices.

use crate::dataset::EpochSet;
use crate::tensorfile;
use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Eigenvalues of `R1 + R2` below this floor are clamped before `Λ^{-1/2}`.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("epoch is identically zero; covariance undefined")]
    DegenerateEpoch,
    #[error("class {0} has no epochs")]
    EmptyClass(usize),
    #[error("need at least {needed} epochs, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("R1 + R2 is rank deficient beyond repair by eigenvalue flooring")]
    Rank,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected} rows, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("serialization error: {0}")]
    TensorFile(#[from] tensorfile::TensorFileError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything the generative model consumes for one class.
#[derive(Debug, Clone)]
pub struct ClassSpatialArtifacts {
    /// Mean normalized covariance of the "one" class.
    pub r_one: Array2<f64>,
    /// Mean normalized covariance of the pooled "rest".
    pub r_rest: Array2<f64>,
    /// Whitening matrix of `R1 + R2`.
    pub whitening: Array2<f64>,
    /// Orthonormal eigenvectors of the whitened rest covariance.
    pub basis: Array2<f64>,
    /// Eigenvalues of `S2`, ascending.
    pub lambda_s: Array1<f64>,
    /// Mean Frobenius distance of "one" trial covariances to `r_one`.
    pub dis_mean: f64,
    /// Population standard deviation of those distances.
    pub dis_std: f64,
    /// First `m` columns of `PᵀB`.
    pub sub_filter: Array2<f64>,
}

impl ClassSpatialArtifacts {
    pub fn n_channels(&self) -> usize {
        self.r_one.nrows()
    }

    /// Diagonal of `Bᵀ P R1 Pᵀ B`, i.e. the complementary spectrum `Λ'_S`.
    pub fn lambda_prime(&self) -> Array1<f64> {
        let pb = self.whitening.t().dot(&self.basis);
        let m = pb.t().dot(&self.r_one).dot(&pb);
        m.diag().to_owned()
    }
}

/// Per-class artifacts plus the stacked projection filter.
#[derive(Debug, Clone)]
pub struct SpatialFilterBank {
    pub per_class: Vec<ClassSpatialArtifacts>,
    /// C × (K·m); columns k·m..(k+1)·m hold class k's sub-filter.
    pub w: Array2<f64>,
    pub m: usize,
}

impl SpatialFilterBank {
    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn n_channels(&self) -> usize {
        self.w.nrows()
    }
}

/// Trace-normalized epoch covariance (`XXᵀ / tr(XXᵀ)`).
pub fn covariance(x: &ArrayView2<'_, f64>) -> Result<Array2<f64>, SpatialError> {
    let gram = x.dot(&x.t());
    let trace: f64 = gram.diag().sum();
    if trace <= 0.0 {
        return Err(SpatialError::DegenerateEpoch);
    }
    Ok(gram / trace)
}

/// One trial of a set as f64, channels × samples.
pub fn trial_f64(set: &EpochSet, trial: usize) -> Array2<f64> {
    set.epochs
        .index_axis(Axis(0), trial)
        .mapv(|v| v as f64)
}

/// Trace-normalized covariance of one stored trial.
pub fn trial_covariance(set: &EpochSet, trial: usize) -> Result<Array2<f64>, SpatialError> {
    let x = trial_f64(set, trial);
    covariance(&x.view())
}

/// Arithmetic mean of the normalized covariances of the given trials.
pub fn class_mean_cov(set: &EpochSet, indices: &[usize]) -> Result<Array2<f64>, SpatialError> {
    let first = *indices.first().ok_or(SpatialError::EmptyClass(0))?;
    let mut acc = trial_covariance(set, first)?;
    for &idx in &indices[1..] {
        acc += &trial_covariance(set, idx)?;
    }
    Ok(acc / indices.len() as f64)
}

/// Mean and population standard deviation of `‖cov(X) − R1‖_F` over trials.
pub fn distance_stats(
    set: &EpochSet,
    indices: &[usize],
    r_one: &Array2<f64>,
) -> Result<(f64, f64), SpatialError> {
    if indices.len() < 2 {
        return Err(SpatialError::InsufficientData {
            needed: 2,
            got: indices.len(),
        });
    }
    let distances: Vec<f64> = indices
        .iter()
        .map(|&idx| {
            let cov = trial_covariance(set, idx)?;
            Ok((&cov - r_one).iter().map(|d| d * d).sum::<f64>().sqrt())
        })
        .collect::<Result<_, SpatialError>>()?;
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
        / distances.len() as f64;
    let std = var.sqrt();
    if std == 0.0 {
        log::warn!("covariance distances have zero variance; cov-loss will be unusable");
    }
    Ok((mean, std))
}

/// Symmetric eigendecomposition with a deterministic ordering convention:
/// stable sort by (eigenvalue, original index), each eigenvector's
/// largest-magnitude entry made non-negative.
fn sym_eigen_sorted(mat: &Array2<f64>, ascending: bool) -> (Array1<f64>, Array2<f64>) {
    let n = mat.nrows();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (mat[[i, j]] + mat[[j, i]]));
    let eig = sym.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let cmp = eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("finite eigenvalues");
        if ascending { cmp } else { cmp.reverse() }.then(a.cmp(&b))
    });

    let mut values = Array1::<f64>::zeros(n);
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0usize;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let flip = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[[i, dst]] = flip * col[i];
        }
    }
    (values, vectors)
}

/// Build one class's artifacts from already-computed mean covariances.
///
/// Exposed separately so the eigen machinery can be exercised on synthetic
/// covariance pairs directly; `dis_mean`/`dis_std` are passed through.
pub fn artifacts_from_covs(
    r_one: Array2<f64>,
    r_rest: Array2<f64>,
    m: usize,
    dis_mean: f64,
    dis_std: f64,
) -> Result<ClassSpatialArtifacts, SpatialError> {
    let c = r_one.nrows();
    if m == 0 || m > c {
        return Err(SpatialError::Config(format!(
            "sub-filter width m={m} must be in 1..={c}"
        )));
    }
    let r_sum = &r_one + &r_rest;
    let (lambda, u) = sym_eigen_sorted(&r_sum, false);
    if lambda[0] < EIGEN_FLOOR {
        return Err(SpatialError::Rank);
    }
    let floored = lambda.mapv(|v| v.max(EIGEN_FLOOR));
    if lambda.iter().any(|&v| v < EIGEN_FLOOR) {
        log::warn!("floored {} eigenvalue(s) of R1+R2 at {EIGEN_FLOOR}",
            lambda.iter().filter(|&&v| v < EIGEN_FLOOR).count());
    }

    // P = √Λ⁻¹ Uᵀ: row i of P is column i of U scaled by 1/√λ_i.
    let mut whitening = u.t().to_owned();
    for (i, mut row) in whitening.outer_iter_mut().enumerate() {
        row.mapv_inplace(|v| v / floored[i].sqrt());
    }

    let s2 = whitening.dot(&r_rest).dot(&whitening.t());
    let (lambda_s, basis) = sym_eigen_sorted(&s2, true);

    let pb = whitening.t().dot(&basis);
    let sub_filter = pb.slice(s![.., ..m]).to_owned();

    Ok(ClassSpatialArtifacts {
        r_one,
        r_rest,
        whitening,
        basis,
        lambda_s,
        dis_mean,
        dis_std,
        sub_filter,
    })
}

/// Artifacts for one one-versus-rest pairing of a training set.
pub fn build_class_artifacts(
    set: &EpochSet,
    one_indices: &[usize],
    rest_indices: &[usize],
    m: usize,
) -> Result<ClassSpatialArtifacts, SpatialError> {
    if one_indices.is_empty() {
        return Err(SpatialError::EmptyClass(0));
    }
    if rest_indices.is_empty() {
        return Err(SpatialError::EmptyClass(1));
    }
    let r_one = class_mean_cov(set, one_indices)?;
    let r_rest = class_mean_cov(set, rest_indices)?;
    let (dis_mean, dis_std) = distance_stats(set, one_indices, &r_one)?;
    artifacts_from_covs(r_one, r_rest, m, dis_mean, dis_std)
}

/// Fit the full bank: one artifact set per class, sub-filters stacked.
pub fn build_filter_bank(train: &EpochSet, m: usize) -> Result<SpatialFilterBank, SpatialError> {
    let c = train.n_channels();
    if m == 0 || m > c {
        return Err(SpatialError::Config(format!(
            "sub-filter width m={m} must be in 1..={c}"
        )));
    }
    let k = train.n_classes();
    if k < 2 {
        return Err(SpatialError::Config(format!(
            "need at least two classes, found {k}"
        )));
    }
    let mut per_class = Vec::with_capacity(k);
    for class in 0..k {
        let one = train.class_indices(class);
        if one.is_empty() {
            return Err(SpatialError::EmptyClass(class));
        }
        let rest: Vec<usize> = (0..train.n_trials()).filter(|i| !train.labels[*i].eq(&class)).collect();
        if rest.is_empty() {
            return Err(SpatialError::EmptyClass(class));
        }
        per_class.push(build_class_artifacts(train, &one, &rest, m)?);
    }

    let mut w = Array2::<f64>::zeros((c, k * m));
    for (class, artifacts) in per_class.iter().enumerate() {
        w.slice_mut(s![.., class * m..(class + 1) * m])
            .assign(&artifacts.sub_filter);
    }
    Ok(SpatialFilterBank { per_class, w, m })
}

/// Project a single epoch: `Z = Wᵀ X`, row block k = class k's channels.
pub fn project(x: &ArrayView2<'_, f64>, bank: &SpatialFilterBank) -> Result<Array2<f64>, SpatialError> {
    if x.nrows() != bank.n_channels() {
        return Err(SpatialError::Shape {
            expected: bank.n_channels(),
            found: x.nrows(),
        });
    }
    Ok(bank.w.t().dot(x))
}

/// Project every trial of a set; channel axis becomes the K·m filter outputs.
pub fn project_set(set: &EpochSet, bank: &SpatialFilterBank) -> Result<EpochSet, SpatialError> {
    let (n, t) = (set.n_trials(), set.n_samples());
    let rows = bank.w.ncols();
    let mut epochs = Array3::<f32>::zeros((n, rows, t));
    for trial in 0..n {
        let x = trial_f64(set, trial);
        let z = project(&x.view(), bank)?;
        for r in 0..rows {
            for c in 0..t {
                epochs[[trial, r, c]] = z[[r, c]] as f32;
            }
        }
    }
    Ok(EpochSet {
        epochs,
        labels: set.labels.clone(),
        subject: set.subject.clone(),
        session: set.session.clone(),
        rate_hz: set.rate_hz,
        channel_names: (0..rows)
            .map(|i| format!("cs{:02}-{:02}", i / bank.m, i % bank.m))
            .collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct BankManifest {
    n_channels: usize,
    n_classes: usize,
    m: usize,
    dis_mean: Vec<f64>,
    dis_std: Vec<f64>,
}

/// Write `bank.json` + `bank.f64` into `dir`.
pub fn save_bank<P: AsRef<Path>>(bank: &SpatialFilterBank, dir: P) -> Result<(), SpatialError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest = BankManifest {
        n_channels: bank.n_channels(),
        n_classes: bank.n_classes(),
        m: bank.m,
        dis_mean: bank.per_class.iter().map(|a| a.dis_mean).collect(),
        dis_std: bank.per_class.iter().map(|a| a.dis_std).collect(),
    };
    std::fs::write(dir.join("bank.json"), serde_json::to_vec_pretty(&manifest)?)?;

    let mut tensors: Vec<(String, ndarray::ArrayViewD<'_, f64>)> = Vec::new();
    for (k, a) in bank.per_class.iter().enumerate() {
        tensors.push((format!("class{k}/r_one"), a.r_one.view().into_dyn()));
        tensors.push((format!("class{k}/r_rest"), a.r_rest.view().into_dyn()));
        tensors.push((format!("class{k}/whitening"), a.whitening.view().into_dyn()));
        tensors.push((format!("class{k}/basis"), a.basis.view().into_dyn()));
        tensors.push((format!("class{k}/lambda_s"), a.lambda_s.view().into_dyn()));
        tensors.push((format!("class{k}/sub_filter"), a.sub_filter.view().into_dyn()));
    }
    tensors.push(("w".to_string(), bank.w.view().into_dyn()));
    tensorfile::write(dir.join("bank.f64"), &tensors)?;
    Ok(())
}

/// Read a bank back; inverse of [`save_bank`], bit-exact for all matrices.
pub fn load_bank<P: AsRef<Path>>(dir: P) -> Result<SpatialFilterBank, SpatialError> {
    let dir = dir.as_ref();
    let manifest: BankManifest =
        serde_json::from_slice(&std::fs::read(dir.join("bank.json"))?)?;
    let mut tensors = tensorfile::read::<f64, _>(dir.join("bank.f64"))?;

    let fetch2 = |tensors: &mut Vec<(String, ndarray::ArrayD<f64>)>,
                  name: &str|
     -> Result<Array2<f64>, SpatialError> {
        Ok(tensorfile::take(tensors, name)?
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| SpatialError::Config(format!("tensor {name} is not 2-D")))?)
    };

    let mut per_class = Vec::with_capacity(manifest.n_classes);
    for k in 0..manifest.n_classes {
        let r_one = fetch2(&mut tensors, &format!("class{k}/r_one"))?;
        let r_rest = fetch2(&mut tensors, &format!("class{k}/r_rest"))?;
        let whitening = fetch2(&mut tensors, &format!("class{k}/whitening"))?;
        let basis = fetch2(&mut tensors, &format!("class{k}/basis"))?;
        let lambda_s = tensorfile::take(&mut tensors, &format!("class{k}/lambda_s"))?
            .into_dimensionality::<ndarray::Ix1>()
            .map_err(|_| SpatialError::Config("lambda_s is not 1-D".into()))?;
        let sub_filter = fetch2(&mut tensors, &format!("class{k}/sub_filter"))?;
        per_class.push(ClassSpatialArtifacts {
            r_one,
            r_rest,
            whitening,
            basis,
            lambda_s,
            dis_mean: manifest.dis_mean[k],
            dis_std: manifest.dis_std[k],
            sub_filter,
        });
    }
    let w = fetch2(&mut tensors, "w")?;
    Ok(SpatialFilterBank {
        per_class,
        w,
        m: manifest.m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
    }

    /// Random SPD matrix with unit trace.
    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let g = random_matrix(n, 2 * n, rng);
        let spd = g.dot(&g.t()) + Array2::<f64>::eye(n) * 1e-3;
        let trace: f64 = spd.diag().sum();
        spd / trace
    }

    #[test]
    fn covariance_of_identity_input() {
        let x = Array2::<f64>::eye(3);
        let cov = covariance(&x.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 / 3.0 } else { 0.0 };
                assert!((cov[[i, j]] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn covariance_trace_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(3, 5, &mut rng);
        let cov = covariance(&x.view()).unwrap();
        assert!((cov.diag().sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn covariance_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(4, 8, &mut rng);
        let cov = covariance(&x.view()).unwrap();

        let mut denom = 0.0;
        for i in 0..4 {
            for t in 0..8 {
                denom += x[[i, t]] * x[[i, t]];
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let mut num = 0.0;
                for t in 0..8 {
                    num += x[[i, t]] * x[[j, t]];
                }
                assert!((cov[[i, j]] - num / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_epoch_is_degenerate() {
        let x = Array2::<f64>::zeros((3, 7));
        assert!(matches!(
            covariance(&x.view()),
            Err(SpatialError::DegenerateEpoch)
        ));
    }

    #[test]
    fn class_mean_cov_oracle() {
        let set = synth::white_noise_set("s", 1, 5, 4, 16, 3);
        let single = class_mean_cov(&set, &[2]).unwrap();
        assert_eq!(single, trial_covariance(&set, 2).unwrap());

        let all: Vec<usize> = (0..5).collect();
        let mean = class_mean_cov(&set, &all).unwrap();
        let mut acc = Array2::<f64>::zeros((4, 4));
        for i in 0..5 {
            acc += &trial_covariance(&set, i).unwrap();
        }
        acc /= 5.0;
        for (a, b) in mean.iter().zip(acc.iter()) {
            assert!((a - b).abs() < 1e-14);
        }

        assert!(matches!(
            class_mean_cov(&set, &[]),
            Err(SpatialError::EmptyClass(_))
        ));
    }

    #[test]
    fn distance_stats_identical_epochs() {
        let mut set = synth::white_noise_set("s", 1, 3, 3, 12, 5);
        let trial0 = set.epochs.index_axis(Axis(0), 0).to_owned();
        for i in 1..3 {
            set.epochs.index_axis_mut(Axis(0), i).assign(&trial0);
        }
        let r1 = class_mean_cov(&set, &[0, 1, 2]).unwrap();
        let (mean, std) = distance_stats(&set, &[0, 1, 2], &r1).unwrap();
        assert!(mean.abs() < 1e-12);
        assert!(std.abs() < 1e-12);
    }

    #[test]
    fn distance_stats_elementwise_oracle() {
        let set = synth::white_noise_set("s", 1, 10, 3, 20, 6);
        let idx: Vec<usize> = (0..10).collect();
        let r1 = class_mean_cov(&set, &idx).unwrap();
        let (mean, std) = distance_stats(&set, &idx, &r1).unwrap();

        let mut dists = Vec::new();
        for &i in &idx {
            let cov = trial_covariance(&set, i).unwrap();
            let mut acc = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    let d = cov[[a, b]] - r1[[a, b]];
                    acc += d * d;
                }
            }
            dists.push(acc.sqrt());
        }
        let m = dists.iter().sum::<f64>() / 10.0;
        let v = dists.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / 10.0;
        assert!((mean - m).abs() < 1e-12);
        assert!((std - v.sqrt()).abs() < 1e-12);

        assert!(matches!(
            distance_stats(&set, &[0], &r1),
            Err(SpatialError::InsufficientData { .. })
        ));
    }

    #[test]
    fn degenerate_equal_covariances() {
        let c = 4;
        let r = Array2::<f64>::eye(c) / (2.0 * c as f64);
        let artifacts = artifacts_from_covs(r.clone(), r.clone(), 2, 1.0, 1.0).unwrap();
        for &v in artifacts.lambda_s.iter() {
            assert!((v - 0.5).abs() < 1e-9);
        }
        for &v in artifacts.lambda_prime().iter() {
            assert!((v - 0.5).abs() < 1e-9);
        }
        // Re-running produces bit-identical output (deterministic tie-break).
        let again = artifacts_from_covs(r.clone(), r, 2, 1.0, 1.0).unwrap();
        assert_eq!(artifacts.basis, again.basis);
        assert_eq!(artifacts.whitening, again.whitening);
    }

    #[test]
    fn two_channel_axis_alignment() {
        // "One" class lives on channel 0, "rest" on channel 1.
        let r_one = array![[1.0, 0.0], [0.0, 0.0]];
        let r_rest = array![[0.0, 0.0], [0.0, 1.0]];
        let artifacts = artifacts_from_covs(r_one, r_rest, 1, 1.0, 1.0).unwrap();
        let col = artifacts.sub_filter.column(0);
        let norm = (col[0] * col[0] + col[1] * col[1]).sqrt();
        assert!(
            (col[0].abs() / norm) > 0.999,
            "first sub-filter column {:?} not aligned with channel 0",
            col
        );
    }

    #[test]
    fn eigen_identity_eq10_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let n = 2 + (trial % 7);
            let total = random_spd(2 * n, &mut rng);
            // Split a unit-trace SPD into two PSD halves.
            let r_one = &total * 0.5;
            let r_rest = &total * 0.5
                + &(random_spd(2 * n, &mut rng) * 1e-3);
            let scale: f64 = r_rest.diag().sum();
            let r_rest = r_rest / scale * 0.5;
            let a = artifacts_from_covs(r_one.clone(), r_rest.clone(), n, 1.0, 1.0).unwrap();

            // Simultaneous diagonalization: Bᵀ P (R1+R2) Pᵀ B = I.
            let pb = a.whitening.t().dot(&a.basis);
            let total_t = pb.t().dot(&(&r_one + &r_rest)).dot(&pb);
            for i in 0..2 * n {
                for j in 0..2 * n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (total_t[[i, j]] - expect).abs() < 1e-6,
                        "trial {trial}: joint diag failed at ({i},{j})"
                    );
                }
            }

            // Λ'_S + Λ_S = I, entries within [0, 1].
            let lp = a.lambda_prime();
            for (lp_i, ls_i) in lp.iter().zip(a.lambda_s.iter()) {
                assert!((lp_i + ls_i - 1.0).abs() < 1e-6);
                assert!(*lp_i > -1e-6 && *lp_i < 1.0 + 1e-6);
            }

            // Ascending Λ_S means the first columns carry the largest Λ'_S.
            for w in lp.windows(2) {
                assert!(w[0] >= w[1] - 1e-9);
            }
        }
    }

    #[test]
    fn bank_shapes_and_errors() {
        let set = synth::mixing_subject_set(
            &synth::MixingConfig {
                n_subjects: 1,
                n_classes: 4,
                trials_per_class: 6,
                n_channels: 22,
                n_samples: 64,
                ..Default::default()
            },
            0,
        );
        let bank = build_filter_bank(&set, 4).unwrap();
        assert_eq!(bank.w.shape(), &[22, 16]);
        assert_eq!(bank.per_class.len(), 4);
        for (k, a) in bank.per_class.iter().enumerate() {
            let block = bank.w.slice(s![.., k * 4..(k + 1) * 4]);
            assert_eq!(block, a.sub_filter.view());
        }

        let set_2b = synth::mixing_subject_set(
            &synth::MixingConfig {
                n_subjects: 1,
                n_classes: 2,
                trials_per_class: 6,
                n_channels: 3,
                n_samples: 64,
                ..Default::default()
            },
            0,
        );
        let bank_2b = build_filter_bank(&set_2b, 3).unwrap();
        assert_eq!(bank_2b.w.shape(), &[3, 6]);

        assert!(matches!(
            build_filter_bank(&set, 0),
            Err(SpatialError::Config(_))
        ));

        let mut one_class = set.clone();
        one_class.labels = vec![0; one_class.n_trials()];
        assert!(matches!(
            build_filter_bank(&one_class, 4),
            Err(SpatialError::Config(_))
        ));
    }

    #[test]
    fn projection_selection_and_oracle() {
        let set = synth::mixing_subject_set(
            &synth::MixingConfig {
                n_subjects: 1,
                n_classes: 4,
                trials_per_class: 6,
                n_channels: 20,
                n_samples: 32,
                ..Default::default()
            },
            0,
        );
        let mut bank = build_filter_bank(&set, 4).unwrap();

        // Selection filter: identity columns pick out the first 16 rows.
        let mut w = Array2::<f64>::zeros((20, 16));
        for i in 0..16 {
            w[[i, i]] = 1.0;
        }
        bank.w = w;
        let x = trial_f64(&set, 0);
        let z = project(&x.view(), &bank).unwrap();
        assert_eq!(z.shape(), &[16, 32]);
        for r in 0..16 {
            for t in 0..32 {
                assert_eq!(z[[r, t]], x[[r, t]]);
            }
        }

        // Zero input → zero output.
        let zero = Array2::<f64>::zeros((20, 32));
        assert!(project(&zero.view(), &bank).unwrap().iter().all(|&v| v == 0.0));

        // Random W/X against the naive triple loop.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        bank.w = random_matrix(20, 16, &mut rng);
        let z = project(&x.view(), &bank).unwrap();
        for r in 0..16 {
            for t in 0..32 {
                let mut acc = 0.0;
                for c in 0..20 {
                    acc += bank.w[[c, r]] * x[[c, t]];
                }
                assert!((z[[r, t]] - acc).abs() < 1e-10);
            }
        }

        // Row mismatch is a shape error.
        let narrow = Array2::<f64>::zeros((7, 32));
        assert!(matches!(
            project(&narrow.view(), &bank),
            Err(SpatialError::Shape { .. })
        ));
    }

    #[test]
    fn scale_invariance_of_artifacts() {
        let set = synth::mixing_subject_set(
            &synth::MixingConfig {
                n_subjects: 1,
                n_classes: 2,
                trials_per_class: 8,
                n_channels: 6,
                n_samples: 48,
                ..Default::default()
            },
            0,
        );
        // Power-of-two scale: lossless in f32, so invariance is exact.
        let mut scaled = set.clone();
        scaled.epochs.mapv_inplace(|v| v * 4.0);

        let a = build_filter_bank(&set, 3).unwrap();
        let b = build_filter_bank(&scaled, 3).unwrap();
        for (x, y) in a.per_class.iter().zip(b.per_class.iter()) {
            for (p, q) in x.r_one.iter().zip(y.r_one.iter()) {
                assert!((p - q).abs() < 1e-8);
            }
            for (p, q) in x.whitening.iter().zip(y.whitening.iter()) {
                assert!((p - q).abs() < 1e-8);
            }
            for (p, q) in x.basis.iter().zip(y.basis.iter()) {
                assert!((p - q).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let set = synth::mixing_subject_set(
            &synth::MixingConfig {
                n_subjects: 1,
                n_classes: 4,
                trials_per_class: 6,
                n_channels: 10,
                n_samples: 40,
                ..Default::default()
            },
            0,
        );
        let a = build_filter_bank(&set, 2).unwrap();
        let b = build_filter_bank(&set, 2).unwrap();
        assert_eq!(a.w, b.w);
        for (x, y) in a.per_class.iter().zip(b.per_class.iter()) {
            assert_eq!(x.basis, y.basis);
            assert_eq!(x.lambda_s, y.lambda_s);
            assert_eq!(x.dis_mean.to_bits(), y.dis_mean.to_bits());
        }
    }

    #[test]
    fn bank_round_trip_is_bit_exact() {
        let set = synth::mixing_subject_set(
            &synth::MixingConfig {
                n_subjects: 1,
                n_classes: 3,
                trials_per_class: 5,
                n_channels: 8,
                n_samples: 32,
                ..Default::default()
            },
            0,
        );
        let bank = build_filter_bank(&set, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_bank(&bank, dir.path()).unwrap();
        let loaded = load_bank(dir.path()).unwrap();
        assert_eq!(bank.m, loaded.m);
        assert_eq!(bank.w, loaded.w);
        for (a, b) in bank.per_class.iter().zip(loaded.per_class.iter()) {
            assert_eq!(a.r_one, b.r_one);
            assert_eq!(a.whitening, b.whitening);
            assert_eq!(a.basis, b.basis);
            assert_eq!(a.lambda_s, b.lambda_s);
            assert_eq!(a.sub_filter, b.sub_filter);
            assert_eq!(a.dis_mean.to_bits(), b.dis_mean.to_bits());
            assert_eq!(a.dis_std.to_bits(), b.dis_std.to_bits());
        }
    }
}
