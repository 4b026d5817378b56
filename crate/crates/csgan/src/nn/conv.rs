//! Valid (unpadded) 2-D convolution and transposed convolution via
//! im2col/col2im and GEMM.
//!
//! Patch matrices of all batch items are stacked column-wise so each pass is
//! one wide GEMM; im2col/col2im run per sample on parallel tasks and are
//! reassembled in index order, keeping results bit-deterministic.

use super::Real;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, Axis};
use rayon::prelude::*;

/// Patches of `x` as columns: row `(c·kh + ki)·kw + kj`, one column per
/// patch position `(pi, pj)` with top-left corner `(pi·sh, pj·sw)`.
fn im2col_into<F: Real>(
    x: &ArrayView3<'_, F>,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    out: &mut ndarray::ArrayViewMut2<'_, F>,
) {
    let (c, h, w) = x.dim();
    let ph = (h - kh) / sh + 1;
    let pw = (w - kw) / sw + 1;
    let x_owned;
    let xs = match x.as_slice() {
        Some(slice) => slice,
        None => {
            x_owned = x.to_owned();
            x_owned.as_slice().expect("owned is contiguous")
        }
    };
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let mut dst_row = out.row_mut(row);
                let dst_all = dst_row.as_slice_mut().expect("unit column stride");
                for pi in 0..ph {
                    let src_base = ci * h * w + (pi * sh + ki) * w + kj;
                    let dst = &mut dst_all[pi * pw..(pi + 1) * pw];
                    if sw == 1 {
                        dst.copy_from_slice(&xs[src_base..src_base + pw]);
                    } else {
                        for (pj, d) in dst.iter_mut().enumerate() {
                            *d = xs[src_base + pj * sw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into an image of shape
/// `(c, h, w)`, with `(ph, pw)` patch positions.
fn col2im<F: Real>(
    cols: &ndarray::ArrayView2<'_, F>,
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> Array3<F> {
    let mut img = Array3::zeros((c, h, w));
    let is = img.as_slice_mut().expect("freshly allocated");
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src_row = cols.row(row);
                let src_all = src_row.as_slice().expect("unit column stride");
                for pi in 0..ph {
                    let dst_base = ci * h * w + (pi * sh + ki) * w + kj;
                    let src = &src_all[pi * pw..(pi + 1) * pw];
                    if sw == 1 {
                        let dst = &mut is[dst_base..dst_base + pw];
                        for (d, &s) in dst.iter_mut().zip(src.iter()) {
                            *d = *d + s;
                        }
                    } else {
                        for (pj, &s) in src.iter().enumerate() {
                            let at = dst_base + pj * sw;
                            is[at] = is[at] + s;
                        }
                    }
                }
            }
        }
    }
    img
}

/// Column-stack the im2col of every sample: output is (c·kh·kw, n·l).
/// Each sample writes its own column block in parallel.
fn im2col_batch<F: Real>(
    x: &Array4<F>,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> (Array2<F>, usize) {
    let (n, c, h, w) = x.dim();
    let ph = (h - kernel.0) / stride.0 + 1;
    let pw = (w - kernel.1) / stride.1 + 1;
    let l = ph * pw;
    let mut all = Array2::zeros((c * kernel.0 * kernel.1, n * l));
    let blocks: Vec<ndarray::ArrayViewMut2<'_, F>> =
        all.axis_chunks_iter_mut(Axis(1), l).collect();
    blocks
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut block)| {
            im2col_into(&x.index_axis(Axis(0), i), kernel, stride, &mut block);
        });
    (all, l)
}

/// Feature maps flattened and column-stacked: (c, n·h·w).
fn planes_batch<F: Real>(x: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let l = h * w;
    let mut all = Array2::zeros((c, n * l));
    for i in 0..n {
        let plane = x.index_axis(Axis(0), i);
        let mat = plane.to_shape((c, l)).expect("row-major");
        all.slice_mut(s![.., i * l..(i + 1) * l]).assign(&mat);
    }
    all
}

/// Inverse of [`planes_batch`].
fn unstack_planes<F: Real>(all: &Array2<F>, (n, c, h, w): (usize, usize, usize, usize)) -> Array4<F> {
    let l = h * w;
    let mut out = Array4::zeros((n, c, h, w));
    for i in 0..n {
        let block = all.slice(s![.., i * l..(i + 1) * l]);
        out.index_axis_mut(Axis(0), i).assign(
            &block
                .to_shape((c, h, w))
                .expect("row-major"),
        );
    }
    out
}

/// Parameter gradients of a [`Conv2d`].
#[derive(Debug, Clone)]
pub struct Conv2dGrad<F: Real> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

/// Valid 2-D convolution, weight layout `(out, in, kh, kw)`.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Real> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub stride: (usize, usize),
}

impl<F: Real> Conv2d<F> {
    pub fn new(weight: Array4<F>, bias: Array1<F>, stride: (usize, usize)) -> Self {
        assert_eq!(weight.shape()[0], bias.len());
        Conv2d { weight, bias, stride }
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn out_spatial(&self, (h, w): (usize, usize)) -> (usize, usize) {
        let (kh, kw) = self.kernel();
        ((h - kh) / self.stride.0 + 1, (w - kw) / self.stride.1 + 1)
    }

    fn weight_mat(&self) -> Array2<F> {
        let (m, c, kh, kw) = self.weight.dim();
        self.weight
            .view()
            .to_shape((m, c * kh * kw))
            .expect("standard layout")
            .to_owned()
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        self.apply(x, true)
    }

    /// Jacobian applied to a perturbation: the convolution without bias.
    pub fn jacobian_forward(&self, v: &Array4<F>) -> Array4<F> {
        self.apply(v, false)
    }

    fn apply(&self, x: &Array4<F>, with_bias: bool) -> Array4<F> {
        let (n, _, h, w) = x.dim();
        let m = self.weight.shape()[0];
        let (oh, ow) = self.out_spatial((h, w));
        let (cols, l) = im2col_batch(x, self.kernel(), self.stride);
        let mut y_all = self.weight_mat().dot(&cols);
        if with_bias {
            for (r, mut row) in y_all.outer_iter_mut().enumerate() {
                row += self.bias[r];
            }
        }
        let mut out = Array4::zeros((n, m, oh, ow));
        for i in 0..n {
            let block = y_all.slice(s![.., i * l..(i + 1) * l]);
            out.index_axis_mut(Axis(0), i)
                .assign(&block.to_shape((m, oh, ow)).expect("row-major"));
        }
        out
    }

    /// Gradient w.r.t. the input given the upstream gradient.
    pub fn backward_input(&self, dy: &Array4<F>, in_spatial: (usize, usize)) -> Array4<F> {
        let (n, _, oh, ow) = dy.dim();
        let c = self.weight.shape()[1];
        let (h, w) = in_spatial;
        let dy_all = planes_batch(dy);
        let cols_all = self.weight_mat().t().dot(&dy_all);
        let l = oh * ow;
        let per: Vec<Array3<F>> = (0..n)
            .into_par_iter()
            .map(|i| {
                col2im(
                    &cols_all.slice(s![.., i * l..(i + 1) * l]),
                    (c, h, w),
                    self.kernel(),
                    self.stride,
                    (oh, ow),
                )
            })
            .collect();
        let mut dx = Array4::zeros((n, c, h, w));
        for (i, g) in per.into_iter().enumerate() {
            dx.index_axis_mut(Axis(0), i).assign(&g);
        }
        dx
    }

    /// Weight gradient from an (input-like, upstream-like) pair. The pair is
    /// `(x, dy)` in ordinary backprop; the gradient-penalty double-backward
    /// reuses the same contraction with the forward-propagated perturbation
    /// in place of `x`.
    pub fn weight_grad(&self, x_like: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
        let (m, c, kh, kw) = self.weight.dim();
        let (cols_all, _) = im2col_batch(x_like, (kh, kw), self.stride);
        let dy_all = planes_batch(dy);
        dy_all
            .dot(&cols_all.t())
            .into_shape_with_order((m, c, kh, kw))
            .expect("row-major")
    }

    pub fn bias_grad(&self, dy: &Array4<F>) -> Array1<F> {
        let m = dy.shape()[1];
        let mut db = Array1::zeros(m);
        for i in 0..m {
            db[i] = dy.index_axis(Axis(1), i).sum();
        }
        db
    }

    /// Full backward pass: input gradient plus parameter gradients.
    pub fn backward(&self, x: &Array4<F>, dy: &Array4<F>) -> (Array4<F>, Conv2dGrad<F>) {
        let dx = self.backward_input(dy, (x.shape()[2], x.shape()[3]));
        let grad = Conv2dGrad {
            weight: self.weight_grad(x, dy),
            bias: self.bias_grad(dy),
        };
        (dx, grad)
    }
}

/// Parameter gradients of a [`ConvTranspose2d`].
#[derive(Debug, Clone)]
pub struct ConvTranspose2dGrad<F: Real> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

/// Valid transposed 2-D convolution, weight layout `(in, out, kh, kw)`.
/// Output spatial size is `(in − 1)·stride + kernel`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F: Real> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub stride: (usize, usize),
}

impl<F: Real> ConvTranspose2d<F> {
    pub fn new(weight: Array4<F>, bias: Array1<F>, stride: (usize, usize)) -> Self {
        assert_eq!(weight.shape()[1], bias.len());
        ConvTranspose2d { weight, bias, stride }
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn out_spatial(&self, (h, w): (usize, usize)) -> (usize, usize) {
        let (kh, kw) = self.kernel();
        ((h - 1) * self.stride.0 + kh, (w - 1) * self.stride.1 + kw)
    }

    fn weight_mat(&self) -> Array2<F> {
        let (c_in, c_out, kh, kw) = self.weight.dim();
        self.weight
            .view()
            .to_shape((c_in, c_out * kh * kw))
            .expect("standard layout")
            .to_owned()
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (n, _, h, w) = x.dim();
        let c_out = self.weight.shape()[1];
        let (oh, ow) = self.out_spatial((h, w));
        let x_all = planes_batch(x);
        let cols_all = self.weight_mat().t().dot(&x_all);
        let l = h * w;
        let per: Vec<Array3<F>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut y = col2im(
                    &cols_all.slice(s![.., i * l..(i + 1) * l]),
                    (c_out, oh, ow),
                    self.kernel(),
                    self.stride,
                    (h, w),
                );
                for (ch, mut plane) in y.outer_iter_mut().enumerate() {
                    plane += self.bias[ch];
                }
                y
            })
            .collect();
        let mut out = Array4::zeros((n, c_out, oh, ow));
        for (i, y) in per.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), i).assign(&y);
        }
        out
    }

    /// Full backward pass.
    pub fn backward(&self, x: &Array4<F>, dy: &Array4<F>) -> (Array4<F>, ConvTranspose2dGrad<F>) {
        let (n, c_in, h, w) = x.dim();
        let (_, c_out, kh, kw) = self.weight.dim();

        // Patches of dy at the input's positions: the adjoint of a
        // transposed convolution is an ordinary convolution.
        let (cols_all, _) = im2col_batch(dy, (kh, kw), self.stride);
        let w_mat = self.weight_mat();
        let dx_all = w_mat.dot(&cols_all);
        let dx = unstack_planes(&dx_all, (n, c_in, h, w));

        let x_all = planes_batch(x);
        let dw = x_all
            .dot(&cols_all.t())
            .into_shape_with_order((c_in, c_out, kh, kw))
            .expect("row-major");

        let mut db = Array1::zeros(c_out);
        for ch in 0..c_out {
            db[ch] = dy.index_axis(Axis(1), ch).sum();
        }
        (dx, ConvTranspose2dGrad { weight: dw, bias: db })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn4(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
        Array4::from_shape_fn(shape, |_| rng.sample(StandardNormal))
    }

    fn naive_conv(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>, s: (usize, usize)) -> Array4<f64> {
        let (n, c, h, wid) = x.dim();
        let (m, _, kh, kw) = w.dim();
        let oh = (h - kh) / s.0 + 1;
        let ow = (wid - kw) / s.1 + 1;
        let mut y = Array4::zeros((n, m, oh, ow));
        for ni in 0..n {
            for mi in 0..m {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut acc = b[mi];
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    acc += x[[ni, ci, oi * s.0 + ki, oj * s.1 + kj]]
                                        * w[[mi, ci, ki, kj]];
                                }
                            }
                        }
                        y[[ni, mi, oi, oj]] = acc;
                    }
                }
            }
        }
        y
    }

    fn naive_conv_t(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>, s: (usize, usize)) -> Array4<f64> {
        let (n, c_in, h, wid) = x.dim();
        let (_, c_out, kh, kw) = w.dim();
        let oh = (h - 1) * s.0 + kh;
        let ow = (wid - 1) * s.1 + kw;
        let mut y = Array4::zeros((n, c_out, oh, ow));
        for ni in 0..n {
            for co in 0..c_out {
                for oi in 0..oh {
                    for oj in 0..ow {
                        y[[ni, co, oi, oj]] = b[co];
                    }
                }
            }
            for ci in 0..c_in {
                for co in 0..c_out {
                    for hi in 0..h {
                        for wi in 0..wid {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    y[[ni, co, hi * s.0 + ki, wi * s.1 + kj]] +=
                                        x[[ni, ci, hi, wi]] * w[[ci, co, ki, kj]];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = randn4((2, 3, 6, 9), &mut rng);
        let w = randn4((4, 3, 2, 3), &mut rng);
        let b = Array1::from_shape_fn(4, |_| rng.sample(StandardNormal));
        let conv = Conv2d::new(w.clone(), b.clone(), (2, 3));
        let y = conv.forward(&x);
        let expect = naive_conv(&x, &w, &b, (2, 3));
        assert_eq!(y.dim(), expect.dim());
        for (a, e) in y.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_forward_matches_naive_and_size_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = randn4((2, 3, 4, 5), &mut rng);
        let w = randn4((3, 2, 3, 4), &mut rng);
        let b = Array1::from_shape_fn(2, |_| rng.sample(StandardNormal));
        let deconv = ConvTranspose2d::new(w.clone(), b.clone(), (2, 3));
        let y = deconv.forward(&x);
        // (in − 1)·stride + kernel
        assert_eq!(y.dim(), (2, 2, (4 - 1) * 2 + 3, (5 - 1) * 3 + 4));
        let expect = naive_conv_t(&x, &w, &b, (2, 3));
        for (a, e) in y.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    /// Central finite difference of `f` w.r.t. one coordinate of `x`.
    fn fd<Fm: FnMut(&Array4<f64>) -> f64>(
        mut f: Fm,
        x: &Array4<f64>,
        idx: (usize, usize, usize, usize),
        h: f64,
    ) -> f64 {
        let mut xp = x.clone();
        xp[idx] += h;
        let fp = f(&xp);
        let mut xm = x.clone();
        xm[idx] -= h;
        let fm = f(&xm);
        (fp - fm) / (2.0 * h)
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = randn4((2, 2, 5, 6), &mut rng);
        let w = randn4((3, 2, 2, 2), &mut rng);
        let b = Array1::from_shape_fn(3, |_| rng.sample(StandardNormal));
        let conv = Conv2d::new(w.clone(), b.clone(), (1, 2));
        // Loss = sum of squares of outputs.
        let y = conv.forward(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let (dx, grad) = conv.backward(&x, &dy);

        let loss = |conv: &Conv2d<f64>, x: &Array4<f64>| conv.forward(x).mapv(|v| v * v).sum();

        for &idx in &[(0, 0, 0, 0), (1, 1, 2, 3), (0, 1, 4, 5)] {
            let num = fd(|xx| loss(&conv, xx), &x, idx, 1e-6);
            assert!((dx[idx] - num).abs() < 1e-5 * (1.0 + num.abs()));
        }
        for &widx in &[(0, 0, 0, 0), (2, 1, 1, 1)] {
            let mut wp = w.clone();
            wp[widx] += 1e-6;
            let lp = loss(&Conv2d::new(wp, b.clone(), (1, 2)), &x);
            let mut wm = w.clone();
            wm[widx] -= 1e-6;
            let lm = loss(&Conv2d::new(wm, b.clone(), (1, 2)), &x);
            let num = (lp - lm) / 2e-6;
            assert!((grad.weight[widx] - num).abs() < 1e-5 * (1.0 + num.abs()));
        }
        for bi in 0..3 {
            let mut bp = b.clone();
            bp[bi] += 1e-6;
            let lp = loss(&Conv2d::new(w.clone(), bp, (1, 2)), &x);
            let mut bm = b.clone();
            bm[bi] -= 1e-6;
            let lm = loss(&Conv2d::new(w.clone(), bm, (1, 2)), &x);
            let num = (lp - lm) / 2e-6;
            assert!((grad.bias[bi] - num).abs() < 1e-5 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn conv_transpose_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = randn4((2, 3, 3, 4), &mut rng);
        let w = randn4((3, 2, 2, 3), &mut rng);
        let b = Array1::from_shape_fn(2, |_| rng.sample(StandardNormal));
        let deconv = ConvTranspose2d::new(w.clone(), b.clone(), (1, 2));
        let y = deconv.forward(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let (dx, grad) = deconv.backward(&x, &dy);

        let loss =
            |d: &ConvTranspose2d<f64>, x: &Array4<f64>| d.forward(x).mapv(|v| v * v).sum();

        for &idx in &[(0, 0, 0, 0), (1, 2, 2, 3), (0, 1, 1, 2)] {
            let num = fd(|xx| loss(&deconv, xx), &x, idx, 1e-6);
            assert!((dx[idx] - num).abs() < 1e-5 * (1.0 + num.abs()));
        }
        for &widx in &[(0, 0, 0, 0), (2, 1, 1, 2)] {
            let mut wp = w.clone();
            wp[widx] += 1e-6;
            let lp = loss(&ConvTranspose2d::new(wp, b.clone(), (1, 2)), &x);
            let mut wm = w.clone();
            wm[widx] -= 1e-6;
            let lm = loss(&ConvTranspose2d::new(wm, b.clone(), (1, 2)), &x);
            let num = (lp - lm) / 2e-6;
            assert!((grad.weight[widx] - num).abs() < 1e-5 * (1.0 + num.abs()));
        }
        let mut bp = b.clone();
        bp[1] += 1e-6;
        let lp = loss(&ConvTranspose2d::new(w.clone(), bp, (1, 2)), &x);
        let mut bm = b.clone();
        bm[1] -= 1e-6;
        let lm = loss(&ConvTranspose2d::new(w.clone(), bm, (1, 2)), &x);
        let num = (lp - lm) / 2e-6;
        assert!((grad.bias[1] - num).abs() < 1e-5 * (1.0 + num.abs()));
    }
}
