//! Scalar abstraction over `f32` and `f64`.

use ndarray::NdFloat;
use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point element type of the network engine.
pub trait Real: NdFloat + crate::tensorfile::Element + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn standard_normal<R: Rng>(rng: &mut R) -> Self;
    /// Uniform draw on `[lo, hi)`.
    fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Self;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn standard_normal<R: Rng>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
    fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Self {
        rng.gen_range(lo as f32..hi as f32)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn standard_normal<R: Rng>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
    fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Self {
        rng.gen_range(lo..hi)
    }
}
