//! Batch normalization and dropout.

use super::Real;
use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;

/// Values cached by a training-mode batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<F: Real> {
    pub x_hat: Array4<F>,
    pub inv_std: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2dGrad<F: Real> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

/// Per-channel batch normalization over (N, H, W).
#[derive(Debug, Clone)]
pub struct BatchNorm2d<F: Real> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub eps: f64,
    pub momentum: f64,
}

impl<F: Real> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::from_elem(channels, F::one()),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::from_elem(channels, F::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    fn batch_moments(&self, x: &Array4<F>) -> (Array1<f64>, Array1<f64>) {
        let c = x.shape()[1];
        let m = (x.shape()[0] * x.shape()[2] * x.shape()[3]) as f64;
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        for ch in 0..c {
            let plane = x.index_axis(Axis(1), ch);
            let s: f64 = plane.iter().map(|v| v.as_f64()).sum();
            mean[ch] = s / m;
            let sq: f64 = plane
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean[ch];
                    d * d
                })
                .sum();
            var[ch] = sq / m;
        }
        (mean, var)
    }

    fn normalize(&self, x: &Array4<F>, mean: &Array1<f64>, var: &Array1<f64>) -> (Array4<F>, Array1<F>) {
        let c = x.shape()[1];
        let mut inv_std = Array1::zeros(c);
        for ch in 0..c {
            inv_std[ch] = F::from_f64(1.0 / (var[ch] + self.eps).sqrt());
        }
        let mut x_hat = x.clone();
        for ch in 0..c {
            let mu = F::from_f64(mean[ch]);
            let istd = inv_std[ch];
            x_hat
                .index_axis_mut(Axis(1), ch)
                .mapv_inplace(|v| (v - mu) * istd);
        }
        (x_hat, inv_std)
    }

    fn scale_shift(&self, x_hat: &Array4<F>) -> Array4<F> {
        let mut y = x_hat.clone();
        for (ch, (&g, &b)) in self.gamma.iter().zip(self.beta.iter()).enumerate() {
            y.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * g + b);
        }
        y
    }

    /// Training forward: batch statistics, running stats updated in place.
    pub fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, BatchNormCache<F>) {
        let (mean, var) = self.batch_moments(x);
        let m = (x.shape()[0] * x.shape()[2] * x.shape()[3]) as f64;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for ch in 0..mean.len() {
            let rm = self.running_mean[ch].as_f64() * (1.0 - self.momentum) + mean[ch] * self.momentum;
            let rv = self.running_var[ch].as_f64() * (1.0 - self.momentum)
                + var[ch] * unbias * self.momentum;
            self.running_mean[ch] = F::from_f64(rm);
            self.running_var[ch] = F::from_f64(rv);
        }
        let (x_hat, inv_std) = self.normalize(x, &mean, &var);
        let y = self.scale_shift(&x_hat);
        (y, BatchNormCache { x_hat, inv_std })
    }

    /// Inference forward with frozen running statistics.
    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let mean: Array1<f64> = self.running_mean.mapv(|v| v.as_f64());
        let var: Array1<f64> = self.running_var.mapv(|v| v.as_f64());
        let (x_hat, _) = self.normalize(x, &mean, &var);
        self.scale_shift(&x_hat)
    }

    /// Forward with batch statistics but no running-stat update (the
    /// alternative sampling mode).
    pub fn forward_batch_stats(&self, x: &Array4<F>) -> Array4<F> {
        let (mean, var) = self.batch_moments(x);
        let (x_hat, _) = self.normalize(x, &mean, &var);
        self.scale_shift(&x_hat)
    }

    pub fn backward(
        &self,
        cache: &BatchNormCache<F>,
        dy: &Array4<F>,
    ) -> (Array4<F>, BatchNorm2dGrad<F>) {
        let (n, c, h, w) = dy.dim();
        let m = F::from_f64((n * h * w) as f64);
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        let mut dx = dy.clone();
        for ch in 0..c {
            let dy_c = dy.index_axis(Axis(1), ch);
            let xh_c = cache.x_hat.index_axis(Axis(1), ch);
            let sum_dy = dy_c.sum();
            let sum_dy_xhat = dy_c
                .iter()
                .zip(xh_c.iter())
                .fold(F::zero(), |acc, (&a, &b)| acc + a * b);
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            let scale = self.gamma[ch] * cache.inv_std[ch] / m;
            let mut dx_c = dx.index_axis_mut(Axis(1), ch);
            dx_c.zip_mut_with(&xh_c, |g, &xh| {
                *g = scale * (m * *g - sum_dy - xh * sum_dy_xhat);
            });
        }
        (dx, BatchNorm2dGrad { gamma: dgamma, beta: dbeta })
    }
}

/// Inverted dropout on batch-first feature matrices.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p));
        Dropout { p }
    }

    /// Training forward: returns output and the mask (0 or 1/(1−p)).
    pub fn forward_train<F: Real, R: Rng>(&self, x: &Array2<F>, rng: &mut R) -> (Array2<F>, Array2<F>) {
        let keep = F::from_f64(1.0 / (1.0 - self.p));
        let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
            if rng.gen::<f64>() < self.p {
                F::zero()
            } else {
                keep
            }
        });
        (x * &mask, mask)
    }

    pub fn backward<F: Real>(&self, dy: &Array2<F>, mask: &Array2<F>) -> Array2<F> {
        dy * mask
    }
}
