//! Minimal neural-network engine: 2-D convolutions, transposed
//! convolutions, max-pooling, linear layers, batch normalization, dropout,
//! and Adam, each with hand-written forward and backward passes.
//!
//! Everything is generic over [`Real`] (`f32` for training, `f64` for
//! gradient checks) and deterministic: batch items are processed on
//! independent tasks and reduced in index order, so a fixed seed reproduces
//! results bit for bit regardless of thread scheduling.
//!
//! There is deliberately no autodiff graph. The only second-order quantity
//! the pipeline needs is the parameter gradient of a gradient penalty, and
//! the critics are piecewise linear, so that term has a closed form handled
//! in the GAN module with the primitives exposed here.

mod adam;
mod conv;
mod linear;
mod norm;
mod pool;
mod real;

pub use adam::{Adam, AdamConfig};
pub use conv::{Conv2d, Conv2dGrad, ConvTranspose2d, ConvTranspose2dGrad};
pub use linear::{Linear, LinearGrad};
pub use norm::{BatchNorm2d, BatchNorm2dGrad, BatchNormCache, Dropout};
pub use pool::MaxPool2d;
pub use real::Real;

use ndarray::{Array, Array4, Dimension};
use rand::Rng;

/// Kaiming-uniform weight init: `U(−b, b)` with
/// `b = √3 · √(2 / (1 + slope²)) / √fan_in`. Elements are drawn in row-major
/// order, so a fixed seed yields identical tensors.
pub fn kaiming_uniform<F: Real, R: Rng, D: Dimension>(
    rng: &mut R,
    dim: D,
    fan_in: usize,
    slope: f64,
) -> Array<F, D> {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let bound = 3f64.sqrt() * gain / (fan_in as f64).sqrt();
    let data: Vec<F> = (0..dim.size())
        .map(|_| F::uniform(rng, -bound, bound))
        .collect();
    Array::from_shape_vec(dim, data).expect("size matches")
}

/// Bias init paired with [`kaiming_uniform`]: `U(−1/√fan_in, 1/√fan_in)`.
pub fn bias_uniform<F: Real, R: Rng, D: Dimension>(
    rng: &mut R,
    dim: D,
    fan_in: usize,
) -> Array<F, D> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<F> = (0..dim.size())
        .map(|_| F::uniform(rng, -bound, bound))
        .collect();
    Array::from_shape_vec(dim, data).expect("size matches")
}

/// Leaky-ReLU forward; returns the activation.
pub fn leaky_relu<F: Real>(x: &Array4<F>, slope: F) -> Array4<F> {
    x.mapv(|v| if v > F::zero() { v } else { v * slope })
}

/// Backward (and input-Jacobian) of leaky-ReLU: scales by 1 or `slope`
/// according to the sign of the cached pre-activation.
pub fn leaky_relu_backward<F: Real>(pre: &Array4<F>, upstream: &Array4<F>, slope: F) -> Array4<F> {
    let mut out = upstream.clone();
    out.zip_mut_with(pre, |g, &z| {
        if z <= F::zero() {
            *g = *g * slope;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn leaky_relu_round_trip() {
        let x = Array4::from_shape_fn((1, 1, 2, 3), |(_, _, i, j)| (i as f64) - (j as f64) * 0.7);
        let y = leaky_relu(&x, 0.2);
        for (&xv, &yv) in x.iter().zip(y.iter()) {
            let expect = if xv > 0.0 { xv } else { 0.2 * xv };
            assert_eq!(yv, expect);
        }
        let up = Array4::from_elem(x.raw_dim(), 1.0);
        let g = leaky_relu_backward(&x, &up, 0.2);
        for (&xv, &gv) in x.iter().zip(g.iter()) {
            assert_eq!(gv, if xv > 0.0 { 1.0 } else { 0.2 });
        }
    }
}
