//! Dual-head Wasserstein critic.
//!
//! Each head is a stack of convolutions with leaky-ReLU, max-pools after the
//! last two convolutions, and a scalar linear readout; no batch norm and no
//! output activation. One head reads raw epochs, the other their spatial
//! projections.
//!
//! Because every head is piecewise linear, the parameter gradient of the
//! gradient penalty has a closed form: run the ordinary backward pass from a
//! unit seed while caching the per-layer upstream values `h`, scale the
//! resulting input gradient into the penalty derivative `u`, then push `u`
//! forward through the layer Jacobians (masks and argmax selections frozen).
//! The weight gradient at each layer is the usual contraction, with the
//! forward-propagated perturbation standing in for the layer input. Biases
//! do not influence the input gradient, so their penalty gradient is zero.

use super::{GanError, HeadTopology};
use crate::nn::{
    bias_uniform, kaiming_uniform, leaky_relu, leaky_relu_backward, Conv2d, Conv2dGrad, Linear,
    LinearGrad, MaxPool2d, Real,
};
use ndarray::{Array1, Array2, Array4, Axis, Ix1, Ix2, Ix4};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct CriticHead<F: Real> {
    pub topo: HeadTopology,
    pub convs: Vec<Conv2d<F>>,
    pub fc: Linear<F>,
    pub pool: MaxPool2d,
}

/// Forward intermediates of one head on one batch.
pub struct HeadCache<F: Real> {
    conv_inputs: Vec<Array4<F>>,
    pre_acts: Vec<Array4<F>>,
    pool_args: Vec<Array4<u32>>,
    pool_in_spatial: Vec<(usize, usize)>,
    fc_input: Array2<F>,
    pub scores: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct HeadGrads<F: Real> {
    pub convs: Vec<Conv2dGrad<F>>,
    pub fc: LinearGrad<F>,
}

impl<F: Real> HeadGrads<F> {
    /// Zero gradients shaped like the head's parameters.
    pub fn zeros_of(head: &CriticHead<F>) -> Self {
        Self::zeros_like(head)
    }

    fn zeros_like(head: &CriticHead<F>) -> Self {
        HeadGrads {
            convs: head
                .convs
                .iter()
                .map(|c| Conv2dGrad {
                    weight: Array4::zeros(c.weight.raw_dim()),
                    bias: Array1::zeros(c.bias.raw_dim()),
                })
                .collect(),
            fc: LinearGrad {
                weight: Array2::zeros(head.fc.weight.raw_dim()),
                bias: Array1::zeros(head.fc.bias.raw_dim()),
            },
        }
    }

    pub fn accumulate(&mut self, other: &HeadGrads<F>, scale: F) {
        for (a, b) in self.convs.iter_mut().zip(other.convs.iter()) {
            a.weight.zip_mut_with(&b.weight, |x, &y| *x = *x + scale * y);
            a.bias.zip_mut_with(&b.bias, |x, &y| *x = *x + scale * y);
        }
        self.fc
            .weight
            .zip_mut_with(&other.fc.weight, |x, &y| *x = *x + scale * y);
        self.fc
            .bias
            .zip_mut_with(&other.fc.bias, |x, &y| *x = *x + scale * y);
    }

    pub fn slices(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        for c in &self.convs {
            out.push(c.weight.as_slice().expect("standard layout"));
            out.push(c.bias.as_slice().expect("standard layout"));
        }
        out.push(self.fc.weight.as_slice().expect("standard layout"));
        out.push(self.fc.bias.as_slice().expect("standard layout"));
        out
    }
}

impl<F: Real> CriticHead<F> {
    pub fn init<R: Rng>(topo: HeadTopology, rng: &mut R) -> Self {
        let slope = topo.leaky_slope;
        let convs = topo
            .convs
            .iter()
            .map(|s| {
                let fan_in = s.in_ch * s.kernel.0 * s.kernel.1;
                Conv2d::new(
                    kaiming_uniform(
                        rng,
                        Ix4(s.out_ch, s.in_ch, s.kernel.0, s.kernel.1),
                        fan_in,
                        slope,
                    ),
                    bias_uniform(rng, Ix1(s.out_ch), fan_in),
                    s.stride,
                )
            })
            .collect();
        let fc = Linear::new(
            kaiming_uniform(rng, Ix2(1, topo.flat_len), topo.flat_len, slope),
            bias_uniform(rng, Ix1(1), topo.flat_len),
        );
        CriticHead {
            pool: MaxPool2d::new(topo.pool),
            topo,
            convs,
            fc,
        }
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(), GanError> {
        let (_, c, h, w) = x.dim();
        if c != 1 || h != self.topo.rows || w != self.topo.samples {
            return Err(GanError::Shape {
                expected: format!("(N, 1, {}, {})", self.topo.rows, self.topo.samples),
                found: format!("(N, {c}, {h}, {w})"),
            });
        }
        Ok(())
    }

    /// Critic scores plus the cache needed for any backward pass.
    pub fn forward(&self, x: &Array4<F>) -> Result<HeadCache<F>, GanError> {
        self.check_input(x)?;
        let slope = F::from_f64(self.topo.leaky_slope);
        let n_convs = self.convs.len();
        let mut conv_inputs = Vec::with_capacity(n_convs);
        let mut pre_acts = Vec::with_capacity(n_convs);
        let mut pool_args = Vec::with_capacity(2);
        let mut pool_in_spatial = Vec::with_capacity(2);

        let mut cur = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            conv_inputs.push(cur.clone());
            let z = conv.forward(&cur);
            cur = leaky_relu(&z, slope);
            pre_acts.push(z);
            if i >= n_convs - 2 {
                pool_in_spatial.push((cur.shape()[2], cur.shape()[3]));
                let (pooled, arg) = self.pool.forward(&cur);
                pool_args.push(arg);
                cur = pooled;
            }
        }
        let n = cur.shape()[0];
        let fc_input = cur
            .into_shape_with_order((n, self.topo.flat_len))
            .expect("row-major");
        let scores = self.fc.forward(&fc_input).index_axis(Axis(1), 0).to_owned();
        Ok(HeadCache {
            conv_inputs,
            pre_acts,
            pool_args,
            pool_in_spatial,
            fc_input,
            scores,
        })
    }

    /// Ordinary backprop from per-sample score gradients. Returns the input
    /// gradient, parameter gradients if requested, and the per-conv upstream
    /// values needed by the penalty double-backward.
    fn backprop(
        &self,
        cache: &HeadCache<F>,
        dscore: &Array1<F>,
        want_params: bool,
    ) -> (Array4<F>, Option<HeadGrads<F>>, Vec<Array4<F>>) {
        let slope = F::from_f64(self.topo.leaky_slope);
        let n_convs = self.convs.len();
        let n = dscore.len();
        let dy_fc = dscore.view().into_shape_with_order((n, 1)).expect("1-D").to_owned();

        let mut grads = want_params.then(|| HeadGrads::zeros_like(self));
        if let Some(g) = grads.as_mut() {
            g.fc = LinearGrad {
                weight: self.fc.weight_grad(&cache.fc_input, &dy_fc),
                bias: dy_fc.sum_axis(Axis(0)),
            };
        }
        let d_flat = self.fc.backward_input(&dy_fc);

        let last_pooled = self.pool.out_spatial(cache.pool_in_spatial[1]);
        let c_last = self.topo.convs[n_convs - 1].out_ch;
        let mut d = d_flat
            .into_shape_with_order((n, c_last, last_pooled.0, last_pooled.1))
            .expect("row-major");

        let mut h_values = vec![Array4::zeros((0, 0, 0, 0)); n_convs];
        for i in (0..n_convs).rev() {
            if i >= n_convs - 2 {
                let slot = i - (n_convs - 2);
                d = self
                    .pool
                    .backward(&d, &cache.pool_args[slot], cache.pool_in_spatial[slot]);
            }
            d = leaky_relu_backward(&cache.pre_acts[i], &d, slope);
            h_values[i] = d.clone();
            if let Some(g) = grads.as_mut() {
                g.convs[i] = Conv2dGrad {
                    weight: self.convs[i].weight_grad(&cache.conv_inputs[i], &d),
                    bias: self.convs[i].bias_grad(&d),
                };
            }
            let in_spatial = (
                cache.conv_inputs[i].shape()[2],
                cache.conv_inputs[i].shape()[3],
            );
            d = self.convs[i].backward_input(&d, in_spatial);
        }
        (d, grads, h_values)
    }

    /// Parameter gradients and input gradient for a weighted sum of scores.
    pub fn backward(
        &self,
        cache: &HeadCache<F>,
        dscore: &Array1<F>,
    ) -> (Array4<F>, HeadGrads<F>) {
        let (dx, grads, _) = self.backprop(cache, dscore, true);
        (dx, grads.expect("requested"))
    }

    /// Input gradient only (used for the generator update).
    pub fn backward_input(&self, cache: &HeadCache<F>, dscore: &Array1<F>) -> Array4<F> {
        self.backprop(cache, dscore, false).0
    }

    /// Mean gradient penalty `E[(‖∇_x D(x)‖₂ − 1)²]` at the given points and
    /// its gradient w.r.t. the head parameters.
    pub fn gradient_penalty(&self, x_hat: &Array4<F>) -> Result<(f64, HeadGrads<F>), GanError> {
        let cache = self.forward(x_hat)?;
        let n = x_hat.shape()[0];
        let ones = Array1::from_elem(n, F::one());
        let (g, _, h_values) = self.backprop(&cache, &ones, false);

        // Per-sample norms and the penalty value.
        let mut value = 0.0f64;
        let mut factors = Vec::with_capacity(n);
        for i in 0..n {
            let gi = g.index_axis(Axis(0), i);
            let norm = gi.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            value += (norm - 1.0).powi(2) / n as f64;
            let factor = if norm > 1e-12 {
                2.0 * (norm - 1.0) / (n as f64 * norm)
            } else {
                0.0
            };
            factors.push(factor);
        }

        // u = dGP/dg, per sample.
        let mut v = g;
        for (i, factor) in factors.iter().enumerate() {
            let f = F::from_f64(*factor);
            v.index_axis_mut(Axis(0), i).mapv_inplace(|x| x * f);
        }

        // Forward sweep through the frozen Jacobians, contracting the
        // perturbation with the cached upstream values at every layer.
        let slope = F::from_f64(self.topo.leaky_slope);
        let n_convs = self.convs.len();
        let mut grads = HeadGrads::zeros_like(self);
        for i in 0..n_convs {
            grads.convs[i].weight = self.convs[i].weight_grad(&v, &h_values[i]);
            v = self.convs[i].jacobian_forward(&v);
            v = leaky_relu_backward(&cache.pre_acts[i], &v, slope);
            if i >= n_convs - 2 {
                let slot = i - (n_convs - 2);
                v = self.pool.jacobian_forward(&v, &cache.pool_args[slot]);
            }
        }
        let v_flat = v
            .into_shape_with_order((n, self.topo.flat_len))
            .expect("row-major");
        let ones_col = Array2::from_elem((n, 1), F::one());
        grads.fc.weight = self.fc.weight_grad(&v_flat, &ones_col);

        Ok((value, grads))
    }

    pub fn param_slices(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for c in &mut self.convs {
            out.push(c.weight.as_slice_mut().expect("standard layout"));
            out.push(c.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.fc.weight.as_slice_mut().expect("standard layout"));
        out.push(self.fc.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, ndarray::ArrayViewD<'_, F>)> {
        let mut out: Vec<(String, ndarray::ArrayViewD<'_, F>)> = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("{prefix}/conv{i}/weight"), c.weight.view().into_dyn()));
            out.push((format!("{prefix}/conv{i}/bias"), c.bias.view().into_dyn()));
        }
        out.push((format!("{prefix}/fc/weight"), self.fc.weight.view().into_dyn()));
        out.push((format!("{prefix}/fc/bias"), self.fc.bias.view().into_dyn()));
        out
    }

    pub fn load_tensors(
        &mut self,
        prefix: &str,
        tensors: &mut Vec<(String, ndarray::ArrayD<F>)>,
    ) -> Result<(), GanError> {
        use crate::tensorfile::take;
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.weight = take(tensors, &format!("{prefix}/conv{i}/weight"))?
                .into_dimensionality::<Ix4>()
                .expect("4-D tensor");
            c.bias = take(tensors, &format!("{prefix}/conv{i}/bias"))?
                .into_dimensionality::<Ix1>()
                .expect("1-D tensor");
        }
        self.fc.weight = take(tensors, &format!("{prefix}/fc/weight"))?
            .into_dimensionality::<Ix2>()
            .expect("2-D tensor");
        self.fc.bias = take(tensors, &format!("{prefix}/fc/bias"))?
            .into_dimensionality::<Ix1>()
            .expect("1-D tensor");
        Ok(())
    }
}

/// Both critic heads.
#[derive(Debug, Clone)]
pub struct Discriminator<F: Real> {
    pub eeg: CriticHead<F>,
    pub cs: CriticHead<F>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGrads<F: Real> {
    pub eeg: HeadGrads<F>,
    pub cs: HeadGrads<F>,
}

impl<F: Real> Discriminator<F> {
    pub fn init<R: Rng>(eeg: HeadTopology, cs: HeadTopology, rng: &mut R) -> Self {
        Discriminator {
            eeg: CriticHead::init(eeg, rng),
            cs: CriticHead::init(cs, rng),
        }
    }

    /// Raw critic scores of both heads.
    pub fn forward(
        &self,
        eeg: &Array4<F>,
        cs: &Array4<F>,
    ) -> Result<(Array1<F>, Array1<F>), GanError> {
        Ok((self.eeg.forward(eeg)?.scores, self.cs.forward(cs)?.scores))
    }

    pub fn param_slices(&mut self) -> Vec<&mut [F]> {
        let mut out = self.eeg.param_slices();
        out.extend(self.cs.param_slices());
        out
    }
}
