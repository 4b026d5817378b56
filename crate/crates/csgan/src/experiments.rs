//! Protocol orchestration: leave-one-subject-out evaluation, adaptive
//! training with real or generated target data, augmentation-count sweeps,
//! ablations, and paired-t statistics.
//!
//! Every stochastic component draws from its own seed stream derived from
//! the run seed and a component tag, so adding or removing one stage never
//! perturbs another and per-(subject, class) trainings are order
//! independent.

use crate::baselines;
use crate::classifier::{self, ClassifierConfig, ClassifierError};
use crate::dataset::{self, AugmentationSet, DatasetError, EpochSet, SplitSpec};
use crate::derive_seed;
use crate::gan::{self, GanCheckpoint, GanError, GanTrainConfig};
use crate::preprocess::{self, PreprocessError};
use crate::spatial::{self, SpatialError, SpatialFilterBank};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Baseline(#[from] baselines::BaselineError),
    #[error("degenerate paired test: {0}")]
    DegenerateTest(String),
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Subject-independent training only.
    Loo,
    /// Mix real target trials into the training pool.
    AdaptReal,
    /// Mix generated trials into the training pool.
    AdaptFake,
    /// One adapt-fake run per augmentation count, reusing checkpoints.
    Sweep,
    /// Adapt-fake with parts of the generative model disabled.
    Ablation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationMethod {
    Csgan,
    Noise,
    Snr,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub no_cs_module: bool,
    pub no_cov_loss: bool,
    pub no_ev_loss: bool,
    pub ablate_all: bool,
}

impl AblationFlags {
    pub fn any(&self) -> bool {
        self.no_cs_module || self.no_cov_loss || self.no_ev_loss || self.ablate_all
    }
}

/// Which data the classifier's standardization statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StatsScope {
    /// The full training mixture (pool plus adapt data) — the default.
    #[default]
    Mixture,
    /// The subject-independent pool only.
    TrainPool,
}

/// Which data the generative model's standardization comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GanStatsScope {
    /// The target subject's GAN pool — the default.
    #[default]
    GanPool,
    /// The subject-independent pool.
    TrainPool,
}

/// Full description of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    /// Restrict to one target subject; all subjects otherwise.
    pub target_subject: Option<String>,
    /// Target trials (real or generated) mixed into training.
    pub adapt_count: usize,
    /// Target trials reserved for the generative model.
    pub gan_count: usize,
    pub augmentation: AugmentationMethod,
    pub ablation: AblationFlags,
    /// Counts evaluated by the sweep protocol.
    pub sweep_counts: Vec<usize>,
    /// Spatial-filter columns per class.
    pub m: usize,
    pub bandpass: (f64, f64),
    pub noise_sigma: f64,
    pub snr_segments: usize,
    pub stats_scope: StatsScope,
    pub gan_stats_scope: GanStatsScope,
    pub gan: GanTrainConfig,
    pub classifier: ClassifierConfig,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            protocol: Protocol::Loo,
            target_subject: None,
            adapt_count: 0,
            gan_count: 100,
            augmentation: AugmentationMethod::Csgan,
            ablation: AblationFlags::default(),
            sweep_counts: Vec::new(),
            m: 4,
            bandpass: (4.0, 40.0),
            noise_sigma: 0.2,
            snr_segments: 8,
            stats_scope: StatsScope::default(),
            gan_stats_scope: GanStatsScope::default(),
            gan: GanTrainConfig::default(),
            classifier: ClassifierConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.ablation.any() && self.augmentation != AugmentationMethod::Csgan {
            return Err(ExperimentError::Spec(
                "ablation flags apply only to the generative augmentation".into(),
            ));
        }
        if self.protocol == Protocol::Sweep && self.sweep_counts.is_empty() {
            return Err(ExperimentError::Spec("sweep needs at least one count".into()));
        }
        Ok(())
    }

    /// GAN config with the ablation flags folded into the loss weights.
    pub fn effective_gan_config(&self, seed: u64) -> GanTrainConfig {
        let mut cfg = self.gan.clone();
        cfg.seed = seed;
        if self.ablation.ablate_all {
            cfg.cs_head = false;
            cfg.lambda_cs = 0.0;
            cfg.lambda_cov = 0.0;
            cfg.lambda_ev = 0.0;
        }
        if self.ablation.no_cs_module {
            cfg.cs_head = false;
            cfg.lambda_cs = 0.0;
        }
        if self.ablation.no_cov_loss {
            cfg.lambda_cov = 0.0;
        }
        if self.ablation.no_ev_loss {
            cfg.lambda_ev = 0.0;
        }
        cfg
    }

    /// Stable hash of the canonical spec serialization.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: String,
    pub accuracy: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub name: String,
    pub t_statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: Protocol,
    pub spec: ExperimentSpec,
    pub config_hash: String,
    pub per_subject: Vec<SubjectResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_kappa: f64,
    /// Present for sweep entries: the augmentation count of this report.
    pub augmentation_count: Option<usize>,
    pub reference: Option<ReferenceComparison>,
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    fn from_results(
        spec: &ExperimentSpec,
        per_subject: Vec<SubjectResult>,
        augmentation_count: Option<usize>,
        started: std::time::Instant,
    ) -> ExperimentReport {
        let n = per_subject.len() as f64;
        let mean = per_subject.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let var = per_subject
            .iter()
            .map(|r| (r.accuracy - mean) * (r.accuracy - mean))
            .sum::<f64>()
            / n;
        let mean_kappa = per_subject.iter().map(|r| r.kappa).sum::<f64>() / n;
        ExperimentReport {
            protocol: spec.protocol,
            spec: spec.clone(),
            config_hash: spec.config_hash(),
            per_subject,
            mean_accuracy: mean,
            std_accuracy: var.sqrt(),
            mean_kappa,
            augmentation_count,
            reference: None,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        }
    }

    /// Attach a paired-t comparison against a reference run.
    pub fn compare_to(&mut self, name: &str, reference: &ExperimentReport) -> Result<(), ExperimentError> {
        let a: Vec<f64> = self.per_subject.iter().map(|r| r.accuracy).collect();
        let b: Vec<f64> = reference.per_subject.iter().map(|r| r.accuracy).collect();
        let (t, p) = paired_t_test(&a, &b)?;
        self.reference = Some(ReferenceComparison {
            name: name.to_string(),
            t_statistic: t,
            p_value: p,
        });
        Ok(())
    }

    /// Equality of everything that must reproduce bit-for-bit (wall clock
    /// excluded).
    pub fn same_results(&self, other: &ExperimentReport) -> bool {
        self.per_subject == other.per_subject
            && self.mean_accuracy.to_bits() == other.mean_accuracy.to_bits()
            && self.std_accuracy.to_bits() == other.std_accuracy.to_bits()
    }
}

/// Two-sided paired t-test with n−1 degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64), ExperimentError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(ExperimentError::DegenerateTest(format!(
            "need two equal-length samples of n ≥ 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(ExperimentError::DegenerateTest(
            "all paired differences are identical".into(),
        ));
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid dof");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p))
}

/// Split plus everything computed once per target subject.
struct SubjectContext {
    target: String,
    train_pool: EpochSet,
    gan_pool: EpochSet,
    test: EpochSet,
    /// Standardized GAN pool and the bank it was fitted on (generative leg).
    gan_std: Option<(EpochSet, SpatialFilterBank)>,
    checkpoints: Vec<GanCheckpoint>,
}

fn needs_generator(spec: &ExperimentSpec) -> bool {
    matches!(spec.protocol, Protocol::AdaptFake | Protocol::Sweep | Protocol::Ablation)
        && spec.augmentation == AugmentationMethod::Csgan
}

fn needs_adapt_data(spec: &ExperimentSpec) -> bool {
    !matches!(spec.protocol, Protocol::Loo)
}

/// Band-pass every subject set once, in input order.
pub fn preprocess_all(sets: &[EpochSet], band: (f64, f64)) -> Result<Vec<EpochSet>, ExperimentError> {
    sets.iter()
        .map(|s| preprocess::bandpass(s, band.0, band.1).map_err(Into::into))
        .collect()
}

fn prepare_subject(
    sets: &[EpochSet],
    spec: &ExperimentSpec,
    target: &str,
    max_fake: usize,
) -> Result<SubjectContext, ExperimentError> {
    let split_spec = SplitSpec {
        target_subject: target.to_string(),
        gan_count: spec.gan_count,
        seed: derive_seed(spec.seed, &format!("split/{target}")),
    };
    let (train_pool, gan_pool, test) = dataset::split_cross_subject(sets, &split_spec)?;

    let mut ctx = SubjectContext {
        target: target.to_string(),
        train_pool,
        gan_pool,
        test,
        gan_std: None,
        checkpoints: Vec::new(),
    };

    if needs_generator(spec) && max_fake > 0 {
        let stats_src = match spec.gan_stats_scope {
            GanStatsScope::GanPool => &ctx.gan_pool,
            GanStatsScope::TrainPool => &ctx.train_pool,
        };
        let stats = preprocess::zscore_fit(stats_src)?;
        let gan_std = preprocess::zscore_apply(&ctx.gan_pool, &stats)?;
        let bank = spatial::build_filter_bank(&gan_std, spec.m)?;
        let k = bank.n_classes();

        let class_sets: Vec<EpochSet> = (0..k).map(|c| gan_std.class_subset(c)).collect();
        let outcomes: Vec<Result<gan::TrainOutcome, GanError>> = class_sets
            .par_iter()
            .enumerate()
            .map(|(class, class_set)| {
                let cfg = spec.effective_gan_config(derive_seed(
                    spec.seed,
                    &format!("gan/{target}/class{class}"),
                ));
                gan::train_csgan(class_set, &bank.per_class[class], &bank, &cfg)
            })
            .collect();
        for outcome in outcomes {
            let outcome = outcome?;
            if let Some(iter) = outcome.diverged_at {
                log::error!(
                    "generator for {target}/class{} diverged at iteration {iter}; using last snapshot",
                    outcome.checkpoint.class_id
                );
            }
            ctx.checkpoints.push(outcome.checkpoint);
        }
        ctx.gan_std = Some((gan_std, bank));
    }
    Ok(ctx)
}

/// Per-class share of `total`, remainder to the lowest class ids.
fn class_shares(total: usize, k: usize) -> Vec<usize> {
    let base = total / k;
    let extra = total % k;
    (0..k).map(|c| base + usize::from(c < extra)).collect()
}

fn adapt_set_for(
    ctx: &SubjectContext,
    spec: &ExperimentSpec,
    count: usize,
) -> Result<Option<EpochSet>, ExperimentError> {
    if count == 0 || !needs_adapt_data(spec) {
        return Ok(None);
    }
    match (spec.protocol, spec.augmentation) {
        (Protocol::AdaptReal, _) => {
            if count > ctx.gan_pool.n_trials() {
                return Err(ExperimentError::Dataset(DatasetError::Split(format!(
                    "adapt_count {count} exceeds the {} reserved target trials",
                    ctx.gan_pool.n_trials()
                ))));
            }
            let idx: Vec<usize> = (0..count).collect();
            Ok(Some(ctx.gan_pool.select(&idx)))
        }
        (_, AugmentationMethod::Csgan) => {
            let shares = class_shares(count, ctx.checkpoints.len());
            let sets: Vec<AugmentationSet> = ctx
                .checkpoints
                .iter()
                .zip(shares.iter())
                .map(|(cp, &n)| {
                    let noise_seed = derive_seed(
                        spec.seed,
                        &format!("sample/{}/class{}", ctx.target, cp.class_id),
                    );
                    gan::sample(cp, n, noise_seed)
                })
                .collect();
            let refs: Vec<&AugmentationSet> = sets.iter().collect();
            Ok(Some(AugmentationSet::concat(&refs).to_epoch_set(&ctx.gan_pool)))
        }
        (_, AugmentationMethod::Noise) => {
            let stats = preprocess::zscore_fit(&ctx.gan_pool)?;
            let std_pool = preprocess::zscore_apply(&ctx.gan_pool, &stats)?;
            let aug = baselines::gaussian_noise_augment(
                &std_pool,
                count,
                spec.noise_sigma,
                derive_seed(spec.seed, &format!("noise/{}", ctx.target)),
            )?;
            Ok(Some(aug.to_epoch_set(&ctx.gan_pool)))
        }
        (_, AugmentationMethod::Snr) => {
            let stats = preprocess::zscore_fit(&ctx.gan_pool)?;
            let std_pool = preprocess::zscore_apply(&ctx.gan_pool, &stats)?;
            let k = std_pool.n_classes();
            let shares = class_shares(count, k);
            let sets: Vec<AugmentationSet> = (0..k)
                .map(|class| {
                    baselines::segment_recombine(
                        &std_pool.class_subset(class),
                        shares[class],
                        spec.snr_segments,
                        derive_seed(spec.seed, &format!("snr/{}/class{class}", ctx.target)),
                    )
                })
                .collect::<Result<_, _>>()?;
            let refs: Vec<&AugmentationSet> = sets.iter().collect();
            Ok(Some(AugmentationSet::concat(&refs).to_epoch_set(&ctx.gan_pool)))
        }
    }
}

/// Quick fingerprints guarding against test trials entering training.
fn trial_fingerprints(set: &EpochSet) -> std::collections::HashSet<Vec<u32>> {
    set.epochs
        .outer_iter()
        .map(|trial| trial.iter().take(16).map(|v| v.to_bits()).collect())
        .collect()
}

fn classify(
    ctx: &SubjectContext,
    spec: &ExperimentSpec,
    adapt: Option<EpochSet>,
) -> Result<SubjectResult, ExperimentError> {
    let mixture = match &adapt {
        Some(extra) => EpochSet::concat(&[&ctx.train_pool, extra])?,
        None => ctx.train_pool.clone(),
    };

    {
        let test_prints = trial_fingerprints(&ctx.test);
        for trial in mixture.epochs.outer_iter() {
            let print: Vec<u32> = trial.iter().take(16).map(|v| v.to_bits()).collect();
            assert!(
                !test_prints.contains(&print),
                "a held-out test trial leaked into the training mixture"
            );
        }
    }

    let stats_src = match spec.stats_scope {
        StatsScope::Mixture => &mixture,
        StatsScope::TrainPool => &ctx.train_pool,
    };
    let stats = preprocess::zscore_fit(stats_src)?;
    let train_std = preprocess::zscore_apply(&mixture, &stats)?;
    let test_std = preprocess::zscore_apply(&ctx.test, &stats)?;

    let bank = spatial::build_filter_bank(&train_std, spec.m)?;
    let projected_train = spatial::project_set(&train_std, &bank)?;
    let projected_test = spatial::project_set(&test_std, &bank)?;

    let mut cls_cfg = spec.classifier.clone();
    cls_cfg.seed = derive_seed(spec.seed, &format!("classifier/{}", ctx.target));
    cls_cfg.classes = Some(bank.n_classes());
    let net = classifier::train_classifier(&projected_train, &cls_cfg)?;
    let report = classifier::evaluate(&net, &projected_test)?;
    Ok(SubjectResult {
        subject: ctx.target.clone(),
        accuracy: report.accuracy,
        kappa: report.kappa,
    })
}

fn targets_of(sets: &[EpochSet], spec: &ExperimentSpec) -> Result<Vec<String>, ExperimentError> {
    match &spec.target_subject {
        Some(t) => {
            if !sets.iter().any(|s| &s.subject == t) {
                return Err(ExperimentError::Dataset(DatasetError::Subject(t.clone())));
            }
            Ok(vec![t.clone()])
        }
        None => Ok(sets.iter().map(|s| s.subject.clone()).collect()),
    }
}

/// Leave-one-subject-out evaluation over all (or one) target subjects.
/// `sets` must hold one band-passed 'T' session per subject.
pub fn run_loo(sets: &[EpochSet], spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    let started = std::time::Instant::now();
    spec.validate()?;
    if sets.len() < 2 {
        return Err(ExperimentError::Spec("need at least two subjects".into()));
    }
    let mut results = Vec::new();
    for target in targets_of(sets, spec)? {
        let ctx = prepare_subject(sets, spec, &target, 0)?;
        results.push(classify(&ctx, spec, None)?);
    }
    Ok(ExperimentReport::from_results(spec, results, Some(0), started))
}

/// Adaptive training: subject-independent pool plus `adapt_count` target
/// trials, real or generated, mixed into one classifier fit.
pub fn run_adaptive(
    sets: &[EpochSet],
    spec: &ExperimentSpec,
) -> Result<ExperimentReport, ExperimentError> {
    let started = std::time::Instant::now();
    spec.validate()?;
    let mut results = Vec::new();
    for target in targets_of(sets, spec)? {
        let ctx = prepare_subject(sets, spec, &target, spec.adapt_count)?;
        let adapt = adapt_set_for(&ctx, spec, spec.adapt_count)?;
        results.push(classify(&ctx, spec, adapt)?);
    }
    Ok(ExperimentReport::from_results(
        spec,
        results,
        Some(spec.adapt_count),
        started,
    ))
}

/// Ablation study: disable generator mechanisms per the spec flags, then
/// run the adaptive protocol with the resulting samples.
pub fn run_ablation(
    sets: &[EpochSet],
    spec: &ExperimentSpec,
) -> Result<ExperimentReport, ExperimentError> {
    let mut spec = spec.clone();
    spec.protocol = Protocol::Ablation;
    spec.augmentation = AugmentationMethod::Csgan;
    run_adaptive(sets, &spec)
}

/// One report per augmentation count; generator checkpoints are trained
/// once per subject and only sampling plus classifier training repeat.
pub fn sweep_counts(
    sets: &[EpochSet],
    spec: &ExperimentSpec,
    counts: &[usize],
) -> Result<Vec<ExperimentReport>, ExperimentError> {
    if counts.is_empty() {
        return Err(ExperimentError::Spec("sweep needs at least one count".into()));
    }
    let mut checked = spec.clone();
    checked.sweep_counts = counts.to_vec();
    checked.validate()?;
    let max_fake = counts.iter().copied().max().unwrap_or(0);
    let targets = targets_of(sets, spec)?;
    let contexts: Vec<SubjectContext> = targets
        .iter()
        .map(|t| prepare_subject(sets, spec, t, max_fake))
        .collect::<Result<_, _>>()?;

    let mut reports = Vec::with_capacity(counts.len());
    for &count in counts {
        let started = std::time::Instant::now();
        let mut results = Vec::new();
        for ctx in &contexts {
            let adapt = adapt_set_for(ctx, spec, count)?;
            results.push(classify(ctx, spec, adapt)?);
        }
        reports.push(ExperimentReport::from_results(
            spec,
            results,
            Some(count),
            started,
        ));
    }
    Ok(reports)
}

/// Entry point dispatching on the spec's protocol.
pub fn run(sets: &[EpochSet], spec: &ExperimentSpec) -> Result<Vec<ExperimentReport>, ExperimentError> {
    match spec.protocol {
        Protocol::Loo => Ok(vec![run_loo(sets, spec)?]),
        Protocol::AdaptReal | Protocol::AdaptFake => Ok(vec![run_adaptive(sets, spec)?]),
        Protocol::Ablation => Ok(vec![run_ablation(sets, spec)?]),
        Protocol::Sweep => sweep_counts(sets, spec, &spec.sweep_counts.clone()),
    }
}

/// Write `report.json` and `report.csv` atomically (temp file + rename).
pub fn save_report<P: AsRef<Path>>(report: &ExperimentReport, dir: P) -> Result<(), ExperimentError> {
    use std::io::Write;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let json_tmp = dir.join(".report.json.tmp");
    std::fs::write(&json_tmp, serde_json::to_vec_pretty(report)?)?;
    std::fs::rename(&json_tmp, dir.join("report.json"))?;

    let csv_tmp = dir.join(".report.csv.tmp");
    {
        let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_tmp)?);
        writeln!(csv, "subject,accuracy,kappa")?;
        for row in &report.per_subject {
            writeln!(csv, "{},{},{}", row.subject, row.accuracy, row.kappa)?;
        }
        csv.flush()?;
    }
    std::fs::rename(&csv_tmp, dir.join("report.csv"))?;
    Ok(())
}

pub fn load_report<P: AsRef<Path>>(dir: P) -> Result<ExperimentReport, ExperimentError> {
    Ok(serde_json::from_slice(&std::fs::read(
        dir.as_ref().join("report.json"),
    )?)?)
}
