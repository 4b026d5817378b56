//! Fully connected layer.

use super::Real;
use ndarray::{Array1, Array2};

#[derive(Debug, Clone)]
pub struct LinearGrad<F: Real> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// `y = x Wᵀ + b`, weight layout `(out, in)`, batch-first inputs.
#[derive(Debug, Clone)]
pub struct Linear<F: Real> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Linear<F> {
    pub fn new(weight: Array2<F>, bias: Array1<F>) -> Self {
        assert_eq!(weight.shape()[0], bias.len());
        Linear { weight, bias }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight.t());
        for mut row in y.outer_iter_mut() {
            row += &self.bias;
        }
        y
    }

    pub fn jacobian_forward(&self, v: &Array2<F>) -> Array2<F> {
        v.dot(&self.weight.t())
    }

    pub fn backward_input(&self, dy: &Array2<F>) -> Array2<F> {
        dy.dot(&self.weight)
    }

    /// Weight gradient from an (input-like, upstream) pair; see the conv
    /// counterpart for why the pair is exposed separately.
    pub fn weight_grad(&self, x_like: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        dy.t().dot(x_like)
    }

    pub fn backward(&self, x: &Array2<F>, dy: &Array2<F>) -> (Array2<F>, LinearGrad<F>) {
        let dx = self.backward_input(dy);
        let dw = self.weight_grad(x, dy);
        let db = dy.sum_axis(ndarray::Axis(0));
        (dx, LinearGrad { weight: dw, bias: db })
    }
}
