//! Per-(subject, class) generative model: a Wasserstein-GP adversarial pair
//! whose discriminator judges both the raw epoch and its spatial projection,
//! with covariance and eigenvalue regularizers tying generated samples to
//! the class's spatial statistics.
//!
//! One model is trained per subject and class; trainings are independent
//! given their seeds and may run in parallel.

mod discriminator;
mod generator;
mod loss;
mod train;

pub use discriminator::{CriticHead, Discriminator, DiscriminatorGrads, HeadCache, HeadGrads};
pub use generator::{draw_noise, Generator, GeneratorCache, GeneratorGrads};
pub use loss::{
    cov_distance, cov_loss, discriminator_loss, ev_loss, generator_loss, gradient_penalty,
    interpolate, interpolate_with, penalty_value, project_back, project_batch, CovLossTerm,
    DiscLossBreakdown, EvLossTerm, GenLossBreakdown, EV_FLOOR,
};
pub use train::{
    load_checkpoint, project_with_bank, sample, save_checkpoint, train_csgan, GanCheckpoint,
    LossRow, TrainOutcome,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("need at least {needed} epochs, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("training diverged at iteration {iteration}; last good state kept")]
    TrainingDiverged { iteration: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tensor archive error: {0}")]
    TensorFile(#[from] crate::tensorfile::TensorFileError),
    #[error(transparent)]
    Spatial(#[from] crate::spatial::SpatialError),
}

/// How batch normalization behaves when drawing samples from a trained
/// generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BnSampleMode {
    /// Frozen running statistics (the default).
    #[default]
    Running,
    /// Statistics of the sampled batch itself.
    Batch,
}

/// Optimization hyper-parameters of one adversarial training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub lambda_gp: f64,
    pub lambda_cs: f64,
    pub lambda_cov: f64,
    pub lambda_ev: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    /// Generator updates to run.
    pub iterations: usize,
    /// Train and use the projected-data critic head. Disabled by the
    /// module-removal ablation; the head then stays at its initial state
    /// and contributes nothing to either loss.
    pub cs_head: bool,
    pub seed: u64,
    pub bn_sample_mode: BnSampleMode,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            lr: 1e-4,
            adam_beta1: 0.1,
            adam_beta2: 0.999,
            batch_size: 5,
            lambda_gp: 10.0,
            lambda_cs: 0.1,
            lambda_cov: 3.0,
            lambda_ev: 10.0,
            critic_steps: 5,
            iterations: 4000,
            cs_head: true,
            seed: 0,
            bn_sample_mode: BnSampleMode::Running,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        if self.lambda_gp < 0.0 || self.lambda_cs < 0.0 || self.lambda_cov < 0.0 || self.lambda_ev < 0.0
        {
            return Err(GanError::Config("loss weights must be non-negative".into()));
        }
        if self.batch_size == 0 || self.critic_steps == 0 {
            return Err(GanError::Config(
                "batch_size and critic_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One transposed-convolution stage of the generator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeconvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub batch_norm: bool,
}

/// Generator layout for a given epoch geometry.
///
/// The channel plan (128→128→64→32→1), width strides (3,3,2,1,1), and the
/// noise length are fixed; kernel widths and the seed width `w0` are solved
/// so the stack lands exactly on `samples` columns, and kernel heights grow
/// the map to `channels` rows. For 22×1000 epochs this yields kernels
/// (3,15),(3,13),(3,5),(4,5),(1,2), a 128×4×50 seed map, and a 25600-wide
/// fully connected layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorTopology {
    pub noise_len: usize,
    pub channels: usize,
    pub samples: usize,
    /// Seed feature map (maps, rows, cols) produced by the FC layer.
    pub reshape: (usize, usize, usize),
    pub deconvs: Vec<DeconvSpec>,
    pub leaky_slope: f64,
}

impl GeneratorTopology {
    pub fn for_epoch(channels: usize, samples: usize) -> Result<Self, GanError> {
        if channels < 2 {
            return Err(GanError::Config(format!(
                "generator needs at least 2 channels, got {channels}"
            )));
        }
        // Solve the width chain backwards through strides (3,3,2,1,1) with
        // nominal kernel widths (15,13,5,5,2); each kernel absorbs the
        // remainder of its stage so every width is hit exactly.
        let w4 = samples.checked_sub(1).filter(|&v| v >= 1).ok_or_else(|| {
            GanError::Config(format!("epoch length {samples} too short"))
        })?;
        let w3 = w4
            .checked_sub(4)
            .ok_or_else(|| GanError::Config(format!("epoch length {samples} too short")))?;
        let solve = |out: usize, stride: usize, nominal_k: usize| -> Result<(usize, usize), GanError> {
            if out < nominal_k {
                return Err(GanError::Config(format!(
                    "epoch length {samples} too short for the deconvolution stack"
                )));
            }
            let input = (out - nominal_k) / stride + 1;
            let kernel = out - stride * (input - 1);
            Ok((input, kernel))
        };
        let (w2, kw3) = solve(w3, 2, 5)?;
        let (w1, kw2) = solve(w2, 3, 13)?;
        let (w0, kw1) = solve(w1, 3, 15)?;

        // Height plan: 4→6→8→10→channels for tall montages, otherwise stay
        // at one row and open to the full height in the fourth stage.
        let tall = channels >= 19;
        let (h0, kh): (usize, [usize; 5]) = if tall {
            (4, [3, 3, 3, channels - 18, 1])
        } else {
            (1, [1, 1, 1, channels, 1])
        };
        let sh4 = if tall { 2 } else { 1 };

        let chans = [128usize, 128, 128, 64, 32, 1];
        let kernels = [
            (kh[0], kw1),
            (kh[1], kw2),
            (kh[2], kw3),
            (kh[3], 5),
            (kh[4], 2),
        ];
        let strides = [(1, 3), (1, 3), (1, 2), (sh4, 1), (1, 1)];
        let deconvs: Vec<DeconvSpec> = (0..5)
            .map(|i| DeconvSpec {
                in_ch: chans[i],
                out_ch: chans[i + 1],
                kernel: kernels[i],
                stride: strides[i],
                batch_norm: i < 4,
            })
            .collect();

        let topo = GeneratorTopology {
            noise_len: 1600,
            channels,
            samples,
            reshape: (128, h0, w0),
            deconvs,
            leaky_slope: 0.2,
        };
        let traced = topo.trace();
        if traced != (1, channels, samples) {
            return Err(GanError::Config(format!(
                "deconvolution stack lands on {traced:?}, wanted (1, {channels}, {samples})"
            )));
        }
        Ok(topo)
    }

    pub fn fc_out(&self) -> usize {
        self.reshape.0 * self.reshape.1 * self.reshape.2
    }

    /// Shape after the full stack, as (maps, rows, cols).
    pub fn trace(&self) -> (usize, usize, usize) {
        let (mut c, mut h, mut w) = self.reshape;
        for d in &self.deconvs {
            c = d.out_ch;
            h = (h - 1) * d.stride.0 + d.kernel.0;
            w = (w - 1) * d.stride.1 + d.kernel.1;
        }
        (c, h, w)
    }

    /// Per-stage output shapes, for inspection and tests.
    pub fn stage_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = self.reshape;
        let mut out = vec![(c, h, w)];
        for d in &self.deconvs {
            c = d.out_ch;
            h = (h - 1) * d.stride.0 + d.kernel.0;
            w = (w - 1) * d.stride.1 + d.kernel.1;
            out.push((c, h, w));
        }
        out
    }
}

/// One convolution stage of a critic head.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

/// Critic-head layout: temporal then spatial convolutions, a shared
/// conv/pool/conv/pool temporal tail, and a scalar linear readout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadTopology {
    pub rows: usize,
    pub samples: usize,
    pub convs: Vec<ConvSpec>,
    pub pool: (usize, usize),
    pub flat_len: usize,
    pub leaky_slope: f64,
}

impl HeadTopology {
    /// Head on raw epochs: the spatial convolution collapses all rows at
    /// once with a (rows, 1) kernel.
    pub fn eeg(channels: usize, samples: usize) -> Result<Self, GanError> {
        let spatial = vec![ConvSpec {
            in_ch: 10,
            out_ch: 30,
            kernel: (channels, 1),
            stride: (1, 1),
        }];
        Self::build(channels, samples, spatial)
    }

    /// Head on projected epochs: the first spatial convolution groups the
    /// `m` rows of each class, the second merges the class maps.
    pub fn cs(classes: usize, m: usize, samples: usize) -> Result<Self, GanError> {
        let spatial = vec![
            ConvSpec {
                in_ch: 10,
                out_ch: 30,
                kernel: (m, 1),
                stride: (m, 1),
            },
            ConvSpec {
                in_ch: 30,
                out_ch: 30,
                kernel: (classes, 1),
                stride: (1, 1),
            },
        ];
        Self::build(classes * m, samples, spatial)
    }

    fn build(rows: usize, samples: usize, spatial: Vec<ConvSpec>) -> Result<Self, GanError> {
        let mut convs = vec![ConvSpec {
            in_ch: 1,
            out_ch: 10,
            kernel: (1, 23),
            stride: (1, 1),
        }];
        convs.extend(spatial);
        convs.push(ConvSpec {
            in_ch: 30,
            out_ch: 30,
            kernel: (1, 17),
            stride: (1, 1),
        });
        convs.push(ConvSpec {
            in_ch: 30,
            out_ch: 30,
            kernel: (1, 7),
            stride: (1, 1),
        });

        let topo = HeadTopology {
            rows,
            samples,
            convs,
            pool: (1, 6),
            flat_len: 0,
            leaky_slope: 0.2,
        };
        let (maps, h, w) = topo.trace()?;
        Ok(HeadTopology {
            flat_len: maps * h * w,
            ..topo
        })
    }

    /// Shape after all convolutions and pools, before flattening.
    pub fn trace(&self) -> Result<(usize, usize, usize), GanError> {
        let mut c = 1usize;
        let mut h = self.rows;
        let mut w = self.samples;
        let n = self.convs.len();
        for (i, spec) in self.convs.iter().enumerate() {
            if spec.in_ch != c || h < spec.kernel.0 || w < spec.kernel.1 {
                return Err(GanError::Config(format!(
                    "conv {i} cannot consume a ({c}, {h}, {w}) input"
                )));
            }
            c = spec.out_ch;
            h = (h - spec.kernel.0) / spec.stride.0 + 1;
            w = (w - spec.kernel.1) / spec.stride.1 + 1;
            if i >= n - 2 {
                if h < self.pool.0 || w < self.pool.1 {
                    return Err(GanError::Config(format!(
                        "pool after conv {i} cannot consume a ({h}, {w}) map"
                    )));
                }
                h /= self.pool.0;
                w /= self.pool.1;
            }
        }
        Ok((c, h, w))
    }
}
