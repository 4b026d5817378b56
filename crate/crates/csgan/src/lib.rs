//! Cross-subject EEG classification with spatially constrained generative
//! augmentation.
//!
//! The pipeline runs in five stages:
//!
//! ```text
//! epoch containers (one dir per subject/session)
//!   │
//!   ├─ dataset      load, NaN→0, cue-window crop, train/GAN/test splits
//!   ├─ preprocess   4–40 Hz zero-phase band-pass + train-fitted z-score
//!   ├─ spatial      one-versus-rest common spatial filter bank
//!   │                 (per-class whitening, joint diagonalization,
//!   │                  covariance-distance statistics)
//!   ├─ gan          per-(subject, class) Wasserstein GAN with gradient
//!   │                 penalty, a second critic head on spatially projected
//!   │                 data, and covariance / eigenvalue regularizers
//!   └─ classifier   benchmark CNN on projected epochs
//!
//! experiments     leave-one-subject-out, adaptive mixing, count sweeps,
//!                 ablations, paired t-tests
//! quality         time / frequency / spatial-domain comparisons of real
//!                 vs generated signals
//! ```
//!
//! All stochastic components take explicit seeds; identical seeds reproduce
//! identical splits, parameters, and samples bit for bit.

pub mod baselines;
pub mod classifier;
pub mod dataset;
pub mod experiments;
pub mod gan;
pub mod nn;
pub mod preprocess;
pub mod quality;
pub mod spatial;
pub mod synth;
pub mod tensorfile;

mod seed;

pub use seed::derive_seed;
