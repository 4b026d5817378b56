//! Adversarial training loop, checkpointing, and sampling.

use super::generator::draw_noise;
use super::loss::{discriminator_loss, generator_loss, project_batch};
use super::{
    Discriminator, GanError, GanTrainConfig, Generator, GeneratorTopology,
    HeadTopology,
};
use crate::dataset::{AugmentationSet, EpochSet, Provenance};
use crate::spatial::{ClassSpatialArtifacts, SpatialFilterBank};
use crate::tensorfile;
use ndarray::{Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// One line of the per-iteration loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iteration: usize,
    pub w_eeg: f64,
    pub w_cs: f64,
    pub gp_eeg: f64,
    pub gp_cs: f64,
    pub cov: f64,
    pub ev: f64,
    pub g_total: f64,
    pub d_total: f64,
}

/// Everything needed to resume sampling: both networks, the run
/// configuration, and the loss history.
#[derive(Debug, Clone)]
pub struct GanCheckpoint {
    pub config: GanTrainConfig,
    pub subject: String,
    pub class_id: usize,
    pub channels: usize,
    pub samples: usize,
    pub classes: usize,
    pub m: usize,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub loss_history: Vec<LossRow>,
    /// RNG stream position at the end of training (provenance).
    pub rng_word_pos: u128,
}

impl GanCheckpoint {
    pub fn id(&self) -> String {
        format!("{}/class{}", self.subject, self.class_id)
    }
}

/// A finished training run. `diverged_at` is set when a non-finite loss cut
/// the run short; the checkpoint then holds the last finite state.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: GanCheckpoint,
    pub diverged_at: Option<usize>,
}

fn epochs_to_batch(set: &EpochSet, indices: &[usize]) -> Array4<f32> {
    let (c, t) = (set.n_channels(), set.n_samples());
    let mut out = Array4::zeros((indices.len(), 1, c, t));
    for (row, &idx) in indices.iter().enumerate() {
        out.index_axis_mut(Axis(0), row)
            .index_axis_mut(Axis(0), 0)
            .assign(&set.epochs.index_axis(Axis(0), idx));
    }
    out
}

/// Train one (subject, class) model on standardized single-class epochs.
///
/// Alternates `critic_steps` critic updates (fresh noise and a fresh real
/// mini-batch each) with one generator update. Both optimizers are Adam
/// with the configured rate and betas; parameters start from
/// kaiming-uniform draws of the run seed.
pub fn train_csgan(
    class_epochs: &EpochSet,
    artifacts: &ClassSpatialArtifacts,
    bank: &SpatialFilterBank,
    config: &GanTrainConfig,
) -> Result<TrainOutcome, GanError> {
    config.validate()?;
    let n = class_epochs.n_trials();
    if n < config.batch_size {
        return Err(GanError::InsufficientData {
            needed: config.batch_size,
            got: n,
        });
    }
    let class_id = class_epochs.labels.first().copied().unwrap_or(0);
    if class_epochs.labels.iter().any(|&l| l != class_id) {
        return Err(GanError::Config(
            "training set must hold a single class".into(),
        ));
    }
    let (c, t) = (class_epochs.n_channels(), class_epochs.n_samples());
    if bank.n_channels() != c {
        return Err(GanError::Shape {
            expected: format!("{} channels (filter bank)", bank.n_channels()),
            found: format!("{c}"),
        });
    }

    let gen_topo = GeneratorTopology::for_epoch(c, t)?;
    let eeg_topo = HeadTopology::eeg(c, t)?;
    let cs_topo = HeadTopology::cs(bank.n_classes(), bank.m, t)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut generator = Generator::<f32>::init(gen_topo, &mut rng);
    let mut discriminator = Discriminator::<f32>::init(eeg_topo, cs_topo, &mut rng);

    let adam_cfg = |lr: f64| crate::nn::AdamConfig {
        lr,
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        eps: 1e-8,
    };
    let mut adam_g = crate::nn::Adam::<f32>::new(adam_cfg(config.lr));
    let mut adam_d = crate::nn::Adam::<f32>::new(adam_cfg(config.lr));

    let w_f32: Array2<f32> = bank.w.mapv(|v| v as f32);
    let mut loss_history: Vec<LossRow> = Vec::with_capacity(config.iterations);

    let snapshot_interval = 50usize;
    let mut snapshot = (generator.clone(), discriminator.clone(), 0usize);

    let make_checkpoint = |generator: Generator<f32>,
                           discriminator: Discriminator<f32>,
                           loss_history: Vec<LossRow>,
                           rng: &ChaCha8Rng| GanCheckpoint {
        config: config.clone(),
        subject: class_epochs.subject.clone(),
        class_id,
        channels: c,
        samples: t,
        classes: bank.n_classes(),
        m: bank.m,
        generator,
        discriminator,
        loss_history,
        rng_word_pos: rng.get_word_pos(),
    };

    for iteration in 0..config.iterations {
        let mut last_d = None;
        for _ in 0..config.critic_steps {
            let idx = rand::seq::index::sample(&mut rng, n, config.batch_size).into_vec();
            let real = epochs_to_batch(class_epochs, &idx);
            let noise = draw_noise::<f32, _>(&mut rng, config.batch_size, generator.topo.noise_len);
            let (fake, _) = generator.forward_train(&noise)?;
            let alphas: Vec<f64> = (0..config.batch_size).map(|_| rng.gen::<f64>()).collect();

            let (breakdown, grads, _) = discriminator_loss(
                &real,
                &fake,
                &discriminator,
                &w_f32,
                config,
                &alphas,
                false,
            )?;
            let mut grad_slices = grads.eeg.slices();
            grad_slices.extend(grads.cs.slices());
            adam_d.step(&mut discriminator.param_slices(), &grad_slices);
            last_d = Some(breakdown);
        }
        let d_breakdown = last_d.expect("at least one critic step");

        let noise = draw_noise::<f32, _>(&mut rng, config.batch_size, generator.topo.noise_len);
        let (fake, cache) = generator.forward_train(&noise)?;
        let (g_breakdown, d_fake) = generator_loss(
            &fake,
            &discriminator,
            &w_f32,
            artifacts,
            bank.m,
            config,
        )?;
        let g_grads = generator.backward(&cache, &d_fake);
        adam_g.step(&mut generator.param_slices(), &g_grads.slices());

        let row = LossRow {
            iteration,
            w_eeg: d_breakdown.w_eeg,
            w_cs: d_breakdown.w_cs,
            gp_eeg: d_breakdown.gp_eeg,
            gp_cs: d_breakdown.gp_cs,
            cov: g_breakdown.cov,
            ev: g_breakdown.ev,
            g_total: g_breakdown.total,
            d_total: d_breakdown.total,
        };
        let finite = [
            row.w_eeg, row.w_cs, row.gp_eeg, row.gp_cs, row.cov, row.ev, row.g_total, row.d_total,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            log::error!(
                "training diverged at iteration {iteration}; returning snapshot from {}",
                snapshot.2
            );
            let (gen_snap, disc_snap, _) = snapshot;
            return Ok(TrainOutcome {
                checkpoint: make_checkpoint(gen_snap, disc_snap, loss_history, &rng),
                diverged_at: Some(iteration),
            });
        }
        loss_history.push(row);

        if (iteration + 1) % snapshot_interval == 0 {
            snapshot = (generator.clone(), discriminator.clone(), iteration + 1);
        }
    }

    Ok(TrainOutcome {
        checkpoint: make_checkpoint(generator, discriminator, loss_history, &rng),
        diverged_at: None,
    })
}

/// Draw `n` labeled samples from a trained generator.
///
/// Noise comes from its own seeded stream; generation runs in batches of
/// the training batch size so the batch-statistics normalization mode sees
/// the same batch geometry it was trained with.
pub fn sample(checkpoint: &GanCheckpoint, n: usize, noise_seed: u64) -> AugmentationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let (c, t) = (checkpoint.channels, checkpoint.samples);
    let mut epochs = ndarray::Array3::<f32>::zeros((n, c, t));
    let mut done = 0;
    while done < n {
        let batch = checkpoint.config.batch_size.min(n - done);
        let noise = draw_noise::<f32, _>(&mut rng, batch, checkpoint.generator.topo.noise_len);
        let out = checkpoint
            .generator
            .forward_sample(&noise, checkpoint.config.bn_sample_mode)
            .expect("noise shape is internally consistent");
        for i in 0..batch {
            epochs
                .index_axis_mut(Axis(0), done + i)
                .assign(&out.index_axis(Axis(0), i).index_axis(Axis(0), 0));
        }
        done += batch;
    }
    AugmentationSet {
        epochs,
        labels: vec![checkpoint.class_id; n],
        provenance: (0..n)
            .map(|index| Provenance::Generated {
                checkpoint: checkpoint.id(),
                noise_seed,
                index,
            })
            .collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: GanTrainConfig,
    subject: String,
    class_id: usize,
    channels: usize,
    samples: usize,
    classes: usize,
    m: usize,
    rng_word_pos: String,
}

/// Write `config.json`, `params.f32`, and `loss_history.csv` into `dir`.
pub fn save_checkpoint<P: AsRef<Path>>(cp: &GanCheckpoint, dir: P) -> Result<(), GanError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        config: cp.config.clone(),
        subject: cp.subject.clone(),
        class_id: cp.class_id,
        channels: cp.channels,
        samples: cp.samples,
        classes: cp.classes,
        m: cp.m,
        rng_word_pos: cp.rng_word_pos.to_string(),
    };
    std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&manifest)?)?;

    let mut tensors = cp.generator.named_tensors();
    tensors.extend(cp.discriminator.eeg.named_tensors("disc/eeg"));
    tensors.extend(cp.discriminator.cs.named_tensors("disc/cs"));
    tensorfile::write(dir.join("params.f32"), &tensors)?;

    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("loss_history.csv"))?);
    writeln!(csv, "iteration,w_eeg,w_cs,gp_eeg,gp_cs,cov,ev,g_total,d_total")?;
    for row in &cp.loss_history {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            row.iteration,
            row.w_eeg,
            row.w_cs,
            row.gp_eeg,
            row.gp_cs,
            row.cov,
            row.ev,
            row.g_total,
            row.d_total
        )?;
    }
    csv.flush()?;
    Ok(())
}

/// Inverse of [`save_checkpoint`].
pub fn load_checkpoint<P: AsRef<Path>>(dir: P) -> Result<GanCheckpoint, GanError> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest =
        serde_json::from_slice(&std::fs::read(dir.join("config.json"))?)?;

    let gen_topo = GeneratorTopology::for_epoch(manifest.channels, manifest.samples)?;
    let eeg_topo = HeadTopology::eeg(manifest.channels, manifest.samples)?;
    let cs_topo = HeadTopology::cs(manifest.classes, manifest.m, manifest.samples)?;
    // Parameter placeholders; every tensor is overwritten from the archive.
    let mut init_rng = ChaCha8Rng::seed_from_u64(0);
    let mut generator = Generator::<f32>::init(gen_topo, &mut init_rng);
    let mut discriminator = Discriminator::<f32>::init(eeg_topo, cs_topo, &mut init_rng);

    let mut tensors = tensorfile::read::<f32, _>(dir.join("params.f32"))?;
    generator.load_tensors(&mut tensors)?;
    discriminator.eeg.load_tensors("disc/eeg", &mut tensors)?;
    discriminator.cs.load_tensors("disc/cs", &mut tensors)?;

    let mut loss_history = Vec::new();
    let csv = std::fs::read_to_string(dir.join("loss_history.csv"))?;
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(GanError::Config(format!("bad loss row: {line}")));
        }
        let pf = |i: usize| -> Result<f64, GanError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| GanError::Config(format!("bad loss value {}: {e}", fields[i])))
        };
        loss_history.push(LossRow {
            iteration: fields[0]
                .parse()
                .map_err(|e| GanError::Config(format!("bad iteration: {e}")))?,
            w_eeg: pf(1)?,
            w_cs: pf(2)?,
            gp_eeg: pf(3)?,
            gp_cs: pf(4)?,
            cov: pf(5)?,
            ev: pf(6)?,
            g_total: pf(7)?,
            d_total: pf(8)?,
        });
    }

    Ok(GanCheckpoint {
        config: manifest.config,
        subject: manifest.subject,
        class_id: manifest.class_id,
        channels: manifest.channels,
        samples: manifest.samples,
        classes: manifest.classes,
        m: manifest.m,
        generator,
        discriminator,
        loss_history,
        rng_word_pos: manifest
            .rng_word_pos
            .parse()
            .map_err(|e| GanError::Config(format!("bad rng position: {e}")))?,
    })
}

/// Projected view of a batch through a bank, convenience for callers.
pub fn project_with_bank(x: &Array4<f32>, bank: &SpatialFilterBank) -> Array4<f32> {
    let w: Array2<f32> = bank.w.mapv(|v| v as f32);
    project_batch(x, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial;
    use crate::synth;

    fn small_setup() -> (EpochSet, crate::spatial::SpatialFilterBank) {
        let set = synth::mixing_subject_set(
            &synth::MixingConfig {
                n_subjects: 1,
                n_classes: 2,
                trials_per_class: 12,
                n_channels: 4,
                n_samples: 128,
                class_gain: 3.0,
                ..Default::default()
            },
            0,
        );
        let bank = spatial::build_filter_bank(&set, 2).unwrap();
        (set, bank)
    }

    fn quick_config(iterations: usize, seed: u64) -> GanTrainConfig {
        GanTrainConfig {
            iterations,
            seed,
            critic_steps: 2,
            batch_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn short_training_stays_finite_and_is_deterministic() {
        let (set, bank) = small_setup();
        let class0 = set.class_subset(0);
        let cfg = quick_config(6, 42);
        let out1 = train_csgan(&class0, &bank.per_class[0], &bank, &cfg).unwrap();
        assert!(out1.diverged_at.is_none());
        assert_eq!(out1.checkpoint.loss_history.len(), 6);
        for row in &out1.checkpoint.loss_history {
            assert!(row.g_total.is_finite() && row.d_total.is_finite());
            assert!(row.gp_eeg >= 0.0 && row.gp_cs >= 0.0);
            assert!(row.cov >= 0.0 && row.ev >= 0.0);
        }

        let out2 = train_csgan(&class0, &bank.per_class[0], &bank, &cfg).unwrap();
        assert_eq!(out1.checkpoint.loss_history, out2.checkpoint.loss_history);
        assert_eq!(
            out1.checkpoint.generator.fc.weight,
            out2.checkpoint.generator.fc.weight
        );
    }

    #[test]
    fn insufficient_data_is_rejected() {
        let (set, bank) = small_setup();
        let class0 = set.class_subset(0).select(&[0, 1]);
        let cfg = quick_config(1, 1);
        assert!(matches!(
            train_csgan(&class0, &bank.per_class[0], &bank, &cfg),
            Err(GanError::InsufficientData { .. })
        ));
    }

    #[test]
    fn sampling_is_seed_deterministic_and_labeled() {
        let (set, bank) = small_setup();
        let class1 = set.class_subset(1);
        let cfg = quick_config(3, 7);
        let out = train_csgan(&class1, &bank.per_class[1], &bank, &cfg).unwrap();
        let a = sample(&out.checkpoint, 7, 99);
        let b = sample(&out.checkpoint, 7, 99);
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.labels, vec![1; 7]);
        assert!(matches!(
            a.provenance[3],
            Provenance::Generated { noise_seed: 99, index: 3, .. }
        ));
        let c = sample(&out.checkpoint, 7, 100);
        assert_ne!(a.epochs, c.epochs);
    }

    #[test]
    fn checkpoint_round_trip_preserves_samples_bit_for_bit() {
        let (set, bank) = small_setup();
        let class0 = set.class_subset(0);
        let cfg = quick_config(3, 11);
        let out = train_csgan(&class0, &bank.per_class[0], &bank, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&out.checkpoint, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();

        assert_eq!(loaded.subject, out.checkpoint.subject);
        assert_eq!(loaded.class_id, 0);
        assert_eq!(loaded.loss_history, out.checkpoint.loss_history);
        let a = sample(&out.checkpoint, 5, 123);
        let b = sample(&loaded, 5, 123);
        assert_eq!(a.epochs, b.epochs);
    }
}
