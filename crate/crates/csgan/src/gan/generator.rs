//! The sample generator: one fully connected layer reshaped to a seed
//! feature map, then five transposed convolutions. Batch norm and
//! leaky-ReLU follow every stage except the last, which is a bare linear
//! map to the epoch plane.

use super::{BnSampleMode, GanError, GeneratorTopology};
use crate::nn::{
    bias_uniform, kaiming_uniform, leaky_relu, leaky_relu_backward, BatchNorm2d, BatchNorm2dGrad,
    BatchNormCache, ConvTranspose2d, ConvTranspose2dGrad, Linear, LinearGrad, Real,
};
use ndarray::{Array2, Array4, Ix1, Ix2, Ix4};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Generator<F: Real> {
    pub topo: GeneratorTopology,
    pub fc: Linear<F>,
    pub deconvs: Vec<ConvTranspose2d<F>>,
    pub norms: Vec<BatchNorm2d<F>>,
}

/// Intermediates of a training-mode forward pass, in stage order.
pub struct GeneratorCache<F: Real> {
    noise: Array2<F>,
    fc_pre: Array2<F>,
    /// Input fed to each deconv stage.
    stage_inputs: Vec<Array4<F>>,
    /// Batch-norm caches and outputs (pre-activation) for the normed stages.
    bn_caches: Vec<BatchNormCache<F>>,
    bn_outs: Vec<Array4<F>>,
}

#[derive(Debug, Clone)]
pub struct GeneratorGrads<F: Real> {
    pub fc: LinearGrad<F>,
    pub deconvs: Vec<ConvTranspose2dGrad<F>>,
    pub norms: Vec<BatchNorm2dGrad<F>>,
}

impl<F: Real> Generator<F> {
    pub fn init<R: Rng>(topo: GeneratorTopology, rng: &mut R) -> Self {
        let slope = topo.leaky_slope;
        let fc = Linear::new(
            kaiming_uniform(rng, Ix2(topo.fc_out(), topo.noise_len), topo.noise_len, slope),
            bias_uniform(rng, Ix1(topo.fc_out()), topo.noise_len),
        );
        let mut deconvs = Vec::new();
        let mut norms = Vec::new();
        for spec in &topo.deconvs {
            let fan_in = spec.out_ch * spec.kernel.0 * spec.kernel.1;
            deconvs.push(ConvTranspose2d::new(
                kaiming_uniform(
                    rng,
                    Ix4(spec.in_ch, spec.out_ch, spec.kernel.0, spec.kernel.1),
                    fan_in,
                    slope,
                ),
                bias_uniform(rng, Ix1(spec.out_ch), fan_in),
                spec.stride,
            ));
            if spec.batch_norm {
                norms.push(BatchNorm2d::new(spec.out_ch));
            }
        }
        Generator { topo, fc, deconvs, norms }
    }

    pub fn check_noise(&self, noise: &Array2<F>) -> Result<(), GanError> {
        if noise.shape()[1] != self.topo.noise_len {
            return Err(GanError::Shape {
                expected: format!("noise length {}", self.topo.noise_len),
                found: format!("{}", noise.shape()[1]),
            });
        }
        Ok(())
    }

    fn seed_map(&self, noise: &Array2<F>) -> (Array2<F>, Array4<F>) {
        let n = noise.shape()[0];
        let (c0, h0, w0) = self.topo.reshape;
        let fc_pre = self.fc.forward(noise);
        let slope = F::from_f64(self.topo.leaky_slope);
        let activated = fc_pre.mapv(|v| if v > F::zero() { v } else { v * slope });
        let seed = activated
            .into_shape_with_order((n, c0, h0, w0))
            .expect("row-major");
        (fc_pre, seed)
    }

    /// Training-mode forward: batch statistics, running stats updated.
    pub fn forward_train(
        &mut self,
        noise: &Array2<F>,
    ) -> Result<(Array4<F>, GeneratorCache<F>), GanError> {
        self.check_noise(noise)?;
        let slope = F::from_f64(self.topo.leaky_slope);
        let (fc_pre, seed) = self.seed_map(noise);
        let mut stage_inputs = Vec::new();
        let mut bn_caches = Vec::new();
        let mut bn_outs = Vec::new();

        let mut x = seed;
        let n_stages = self.deconvs.len();
        for i in 0..n_stages {
            stage_inputs.push(x.clone());
            let z = self.deconvs[i].forward(&x);
            if i < n_stages - 1 {
                let (y, cache) = self.norms[i].forward_train(&z);
                bn_outs.push(y.clone());
                bn_caches.push(cache);
                x = leaky_relu(&y, slope);
            } else {
                x = z;
            }
        }
        let cache = GeneratorCache {
            noise: noise.clone(),
            fc_pre,
            stage_inputs,
            bn_caches,
            bn_outs,
        };
        Ok((x, cache))
    }

    /// Inference forward for sampling.
    pub fn forward_sample(
        &self,
        noise: &Array2<F>,
        mode: BnSampleMode,
    ) -> Result<Array4<F>, GanError> {
        self.check_noise(noise)?;
        let slope = F::from_f64(self.topo.leaky_slope);
        let (_, seed) = self.seed_map(noise);
        let mut x = seed;
        let n_stages = self.deconvs.len();
        for i in 0..n_stages {
            let z = self.deconvs[i].forward(&x);
            if i < n_stages - 1 {
                let y = match mode {
                    BnSampleMode::Running => self.norms[i].forward_eval(&z),
                    BnSampleMode::Batch => self.norms[i].forward_batch_stats(&z),
                };
                x = leaky_relu(&y, slope);
            } else {
                x = z;
            }
        }
        Ok(x)
    }

    /// Backprop the generated-sample gradient to all parameters.
    pub fn backward(&self, cache: &GeneratorCache<F>, d_out: &Array4<F>) -> GeneratorGrads<F> {
        let slope = F::from_f64(self.topo.leaky_slope);
        let n_stages = self.deconvs.len();
        let mut deconv_grads: Vec<Option<ConvTranspose2dGrad<F>>> = (0..n_stages).map(|_| None).collect();
        let mut norm_grads: Vec<Option<BatchNorm2dGrad<F>>> =
            (0..self.norms.len()).map(|_| None).collect();

        let mut d = d_out.clone();
        for i in (0..n_stages).rev() {
            if i < n_stages - 1 {
                // The upstream arrived through leaky-ReLU ∘ batch norm.
                d = leaky_relu_backward(&cache.bn_outs[i], &d, slope);
                let (dz, bn_grad) = self.norms[i].backward(&cache.bn_caches[i], &d);
                norm_grads[i] = Some(bn_grad);
                d = dz;
            }
            let (dx, grad) = self.deconvs[i].backward(&cache.stage_inputs[i], &d);
            deconv_grads[i] = Some(grad);
            d = dx;
        }

        let n = d.shape()[0];
        let flat = d
            .into_shape_with_order((n, self.topo.fc_out()))
            .expect("row-major");
        let d_fc = {
            // Activation backward on the FC pre-activation.
            let mut g = flat;
            g.zip_mut_with(&cache.fc_pre, |gv, &z| {
                if z <= F::zero() {
                    *gv = *gv * slope;
                }
            });
            g
        };
        let (_, fc_grad) = self.fc.backward(&cache.noise, &d_fc);

        GeneratorGrads {
            fc: fc_grad,
            deconvs: deconv_grads.into_iter().map(Option::unwrap).collect(),
            norms: norm_grads.into_iter().map(Option::unwrap).collect(),
        }
    }

    /// Optimizer parameter order: fc, then per deconv stage, then per norm.
    pub fn param_slices(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        out.push(self.fc.weight.as_slice_mut().expect("standard layout"));
        out.push(self.fc.bias.as_slice_mut().expect("standard layout"));
        for d in &mut self.deconvs {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        for b in &mut self.norms {
            out.push(b.gamma.as_slice_mut().expect("standard layout"));
            out.push(b.beta.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Serialized tensors: optimizer parameters plus batch-norm running
    /// statistics, under stable names.
    pub fn named_tensors(&self) -> Vec<(String, ndarray::ArrayViewD<'_, F>)> {
        let mut out: Vec<(String, ndarray::ArrayViewD<'_, F>)> = vec![
            ("gen/fc/weight".into(), self.fc.weight.view().into_dyn()),
            ("gen/fc/bias".into(), self.fc.bias.view().into_dyn()),
        ];
        for (i, d) in self.deconvs.iter().enumerate() {
            out.push((format!("gen/deconv{i}/weight"), d.weight.view().into_dyn()));
            out.push((format!("gen/deconv{i}/bias"), d.bias.view().into_dyn()));
        }
        for (i, b) in self.norms.iter().enumerate() {
            out.push((format!("gen/bn{i}/gamma"), b.gamma.view().into_dyn()));
            out.push((format!("gen/bn{i}/beta"), b.beta.view().into_dyn()));
            out.push((format!("gen/bn{i}/running_mean"), b.running_mean.view().into_dyn()));
            out.push((format!("gen/bn{i}/running_var"), b.running_var.view().into_dyn()));
        }
        out
    }

    pub fn load_tensors(
        &mut self,
        tensors: &mut Vec<(String, ndarray::ArrayD<F>)>,
    ) -> Result<(), GanError> {
        use crate::tensorfile::take;
        let to1 = |a: ndarray::ArrayD<F>| a.into_dimensionality::<Ix1>().expect("1-D tensor");
        self.fc.weight = take(tensors, "gen/fc/weight")?
            .into_dimensionality::<Ix2>()
            .expect("2-D tensor");
        self.fc.bias = to1(take(tensors, "gen/fc/bias")?);
        for (i, d) in self.deconvs.iter_mut().enumerate() {
            d.weight = take(tensors, &format!("gen/deconv{i}/weight"))?
                .into_dimensionality::<Ix4>()
                .expect("4-D tensor");
            d.bias = to1(take(tensors, &format!("gen/deconv{i}/bias"))?);
        }
        for (i, b) in self.norms.iter_mut().enumerate() {
            b.gamma = to1(take(tensors, &format!("gen/bn{i}/gamma"))?);
            b.beta = to1(take(tensors, &format!("gen/bn{i}/beta"))?);
            b.running_mean = to1(take(tensors, &format!("gen/bn{i}/running_mean"))?);
            b.running_var = to1(take(tensors, &format!("gen/bn{i}/running_var"))?);
        }
        Ok(())
    }
}

/// Grad slices in the same order as [`Generator::param_slices`].
impl<F: Real> GeneratorGrads<F> {
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        out.push(self.fc.weight.as_slice().expect("standard layout"));
        out.push(self.fc.bias.as_slice().expect("standard layout"));
        for d in &self.deconvs {
            out.push(d.weight.as_slice().expect("standard layout"));
            out.push(d.bias.as_slice().expect("standard layout"));
        }
        for b in &self.norms {
            out.push(b.gamma.as_slice().expect("standard layout"));
            out.push(b.beta.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Standard-normal noise batch.
pub fn draw_noise<F: Real, R: Rng>(rng: &mut R, batch: usize, noise_len: usize) -> Array2<F> {
    Array2::from_shape_fn((batch, noise_len), |_| F::standard_normal(rng))
}
