//! Max-pooling with cached argmax positions.

use super::Real;
use ndarray::{Array4, Axis};

/// Max-pool over non-overlapping (or strided) windows, floor semantics:
/// trailing rows/columns that do not fill a window are dropped.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl MaxPool2d {
    pub fn new(kernel: (usize, usize)) -> Self {
        MaxPool2d { kernel, stride: kernel }
    }

    pub fn out_spatial(&self, (h, w): (usize, usize)) -> (usize, usize) {
        (
            (h - self.kernel.0) / self.stride.0 + 1,
            (w - self.kernel.1) / self.stride.1 + 1,
        )
    }

    /// Returns the pooled output and, per output element, the flat `h·W + w`
    /// index of its source inside the input plane.
    pub fn forward<F: Real>(&self, x: &Array4<F>) -> (Array4<F>, Array4<u32>) {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.out_spatial((h, w));
        let mut y = Array4::zeros((n, c, oh, ow));
        let mut arg = Array4::<u32>::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                let plane = x.index_axis(Axis(0), ni);
                let plane = plane.index_axis(Axis(0), ci);
                for oi in 0..oh {
                    for oj in 0..ow {
                        let (h0, w0) = (oi * self.stride.0, oj * self.stride.1);
                        let mut best = plane[[h0, w0]];
                        let mut best_idx = h0 * w + w0;
                        for ki in 0..self.kernel.0 {
                            for kj in 0..self.kernel.1 {
                                let v = plane[[h0 + ki, w0 + kj]];
                                if v > best {
                                    best = v;
                                    best_idx = (h0 + ki) * w + (w0 + kj);
                                }
                            }
                        }
                        y[[ni, ci, oi, oj]] = best;
                        arg[[ni, ci, oi, oj]] = best_idx as u32;
                    }
                }
            }
        }
        (y, arg)
    }

    /// Scatter the upstream gradient back to the argmax positions.
    pub fn backward<F: Real>(
        &self,
        dy: &Array4<F>,
        arg: &Array4<u32>,
        in_spatial: (usize, usize),
    ) -> Array4<F> {
        let (n, c, oh, ow) = dy.dim();
        let (h, w) = in_spatial;
        let mut dx = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let flat = arg[[ni, ci, oi, oj]] as usize;
                        let (hi, wi) = (flat / w, flat % w);
                        dx[[ni, ci, hi, wi]] = dx[[ni, ci, hi, wi]] + dy[[ni, ci, oi, oj]];
                    }
                }
            }
        }
        dx
    }

    /// Input-Jacobian applied to a perturbation: gather at the cached argmax.
    pub fn jacobian_forward<F: Real>(&self, v: &Array4<F>, arg: &Array4<u32>) -> Array4<F> {
        let (n, c, oh, ow) = arg.dim();
        let w = v.shape()[3];
        let mut out = Array4::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let flat = arg[[ni, ci, oi, oj]] as usize;
                        out[[ni, ci, oi, oj]] = v[[ni, ci, flat / w, flat % w]];
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn pool_floor_semantics_and_argmax() {
        // 1×1×2×8 plane, kernel (1,3): out width floor((8−3)/3)+1 = 2.
        let x = Array4::from_shape_vec(
            (1, 1, 2, 8),
            vec![
                0.0, 5.0, 1.0, 2.0, 2.5, 2.4, 9.0, 9.0, //
                1.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        let pool = MaxPool2d::new((1, 3));
        let (y, arg) = pool.forward(&x);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 0, 1]], 2.5);
        assert_eq!(y[[0, 0, 1, 0]], 1.0);
        assert_eq!(y[[0, 0, 1, 1]], 7.0);
        // Ties keep the first occurrence (strict > comparison).
        assert_eq!(arg[[0, 0, 0, 0]], 1);

        let dy = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dx = pool.backward(&dy, &arg, (2, 8));
        assert_eq!(dx[[0, 0, 0, 1]], 1.0);
        assert_eq!(dx[[0, 0, 0, 4]], 2.0);
        assert_eq!(dx[[0, 0, 1, 0]], 3.0);
        assert_eq!(dx[[0, 0, 1, 3]], 4.0);
        assert_eq!(dx.sum(), 10.0);

        // Jacobian-forward gathers where backward scattered.
        let v = x.mapv(|v| v * 10.0);
        let jv = pool.jacobian_forward(&v, &arg);
        assert_eq!(jv[[0, 0, 0, 0]], 50.0);
        assert_eq!(jv[[0, 0, 1, 1]], 70.0);
    }
}
