//! Benchmark CNN on spatially projected epochs.
//!
//! The first convolution splits the K·m projected rows back into K class
//! blocks; the rest of the stack extracts temporal features (two strided
//! convolutions with max-pools) and classifies through four linear layers
//! with leaky-ReLU, dropout on the hidden ones, and a softmax readout.

use crate::dataset::EpochSet;
use crate::nn::{
    bias_uniform, kaiming_uniform, leaky_relu, leaky_relu_backward, Conv2d, Dropout, Linear,
    MaxPool2d, Real,
};
use crate::tensorfile;
use ndarray::{Array1, Array2, Array4, Axis, Ix1, Ix2, Ix4};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("class {0} has no training samples")]
    EmptyClass(usize),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("training diverged at epoch {0}")]
    TrainingDiverged(usize),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tensor archive error: {0}")]
    TensorFile(#[from] crate::tensorfile::TensorFileError),
}

/// Layer plan derived from the projected-epoch geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierTopology {
    pub classes: usize,
    pub m: usize,
    pub samples: usize,
    pub flat_len: usize,
    pub leaky_slope: f64,
}

impl ClassifierTopology {
    pub fn for_projection(classes: usize, m: usize, samples: usize) -> Result<Self, ClassifierError> {
        if classes < 2 || m == 0 {
            return Err(ClassifierError::Config(format!(
                "need ≥2 classes and m ≥ 1, got K={classes}, m={m}"
            )));
        }
        let widths = Self::width_trace(samples)?;
        Ok(ClassifierTopology {
            classes,
            m,
            samples,
            flat_len: 128 * classes * widths[5],
            leaky_slope: 0.2,
        })
    }

    /// Temporal widths after each stage:
    /// input, conv(1,23)/3, conv(1,17), pool(1,6), conv(1,7), pool(1,2).
    pub fn width_trace(samples: usize) -> Result<[usize; 6], ClassifierError> {
        let too_short =
            || ClassifierError::Config(format!("epoch length {samples} too short for the stack"));
        let w1 = samples.checked_sub(23).ok_or_else(too_short)? / 3 + 1;
        let w2 = w1.checked_sub(17).ok_or_else(too_short)? + 1;
        let w3 = w2 / 6;
        let w4 = w3.checked_sub(7).filter(|_| w3 >= 7).ok_or_else(too_short)? + 1;
        let w5 = w4 / 2;
        if w5 == 0 {
            return Err(too_short());
        }
        Ok([samples, w1, w2, w3, w4, w5])
    }
}

/// Optimization settings for one classifier fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    /// Fraction of the training set held out for best-epoch selection;
    /// 0 disables the holdout and keeps the final parameters.
    pub val_fraction: f64,
    /// Expected class count; inferred from the labels when absent.
    pub classes: Option<usize>,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_size: 50,
            epochs: 200,
            dropout: 0.3,
            val_fraction: 0.1,
            classes: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Classifier<F: Real> {
    pub topo: ClassifierTopology,
    pub convs: Vec<Conv2d<F>>,
    pub fcs: Vec<Linear<F>>,
    pub pools: [MaxPool2d; 2],
}

struct ClassifierCache<F: Real> {
    conv_inputs: Vec<Array4<F>>,
    conv_pre: Vec<Array4<F>>,
    pool_args: Vec<Array4<u32>>,
    pool_in_spatial: Vec<(usize, usize)>,
    fc_inputs: Vec<Array2<F>>,
    fc_pre: Vec<Array2<F>>,
    dropout_masks: Vec<Array2<F>>,
    logits: Array2<F>,
}

impl<F: Real> Classifier<F> {
    pub fn init<R: Rng>(topo: ClassifierTopology, rng: &mut R) -> Self {
        let slope = topo.leaky_slope;
        let specs: [(usize, usize, (usize, usize), (usize, usize)); 4] = [
            (1, 16, (topo.m, 1), (topo.m, 1)),
            (16, 32, (1, 23), (1, 3)),
            (32, 64, (1, 17), (1, 1)),
            (64, 128, (1, 7), (1, 1)),
        ];
        let convs = specs
            .iter()
            .map(|&(ci, co, k, s)| {
                let fan_in = ci * k.0 * k.1;
                Conv2d::new(
                    kaiming_uniform(rng, Ix4(co, ci, k.0, k.1), fan_in, slope),
                    bias_uniform(rng, Ix1(co), fan_in),
                    s,
                )
            })
            .collect();
        let dims = [topo.flat_len, 2048, 512, 128, topo.classes];
        let fcs = (0..4)
            .map(|i| {
                Linear::new(
                    kaiming_uniform(rng, Ix2(dims[i + 1], dims[i]), dims[i], slope),
                    bias_uniform(rng, Ix1(dims[i + 1]), dims[i]),
                )
            })
            .collect();
        Classifier {
            topo,
            convs,
            fcs,
            pools: [MaxPool2d::new((1, 6)), MaxPool2d::new((1, 2))],
        }
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(), ClassifierError> {
        let (_, maps, rows, w) = x.dim();
        let want_rows = self.topo.classes * self.topo.m;
        if maps != 1 || rows != want_rows || w != self.topo.samples {
            return Err(ClassifierError::Shape {
                expected: format!("(N, 1, {want_rows}, {})", self.topo.samples),
                found: format!("(N, {maps}, {rows}, {w})"),
            });
        }
        Ok(())
    }

    /// Forward pass; dropout active only when a mask RNG is supplied.
    fn forward_impl<R: Rng>(
        &self,
        x: &Array4<F>,
        dropout: Option<(&Dropout, &mut R)>,
    ) -> Result<(Array2<F>, ClassifierCache<F>), ClassifierError> {
        self.check_input(x)?;
        let slope = F::from_f64(self.topo.leaky_slope);
        let mut conv_inputs = Vec::new();
        let mut conv_pre = Vec::new();
        let mut pool_args = Vec::new();
        let mut pool_in_spatial = Vec::new();

        let mut cur = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            conv_inputs.push(cur.clone());
            let z = conv.forward(&cur);
            cur = leaky_relu(&z, slope);
            conv_pre.push(z);
            if i >= 2 {
                let pool = &self.pools[i - 2];
                pool_in_spatial.push((cur.shape()[2], cur.shape()[3]));
                let (pooled, arg) = pool.forward(&cur);
                pool_args.push(arg);
                cur = pooled;
            }
        }
        let n = cur.shape()[0];
        let mut flat = cur
            .into_shape_with_order((n, self.topo.flat_len))
            .expect("row-major");

        let mut fc_inputs = Vec::new();
        let mut fc_pre = Vec::new();
        let mut dropout_masks = Vec::new();
        let mut dropout = dropout;
        for (i, fc) in self.fcs.iter().enumerate() {
            fc_inputs.push(flat.clone());
            let z = fc.forward(&flat);
            if i < 3 {
                fc_pre.push(z.clone());
                let mut a = z.mapv(|v| if v > F::zero() { v } else { v * slope });
                if let Some((drop, rng)) = dropout.as_mut() {
                    let (dropped, mask) = drop.forward_train(&a, *rng);
                    dropout_masks.push(mask);
                    a = dropped;
                }
                flat = a;
            } else {
                flat = z;
            }
        }
        let logits = flat;
        Ok((
            logits.clone(),
            ClassifierCache {
                conv_inputs,
                conv_pre,
                pool_args,
                pool_in_spatial,
                fc_inputs,
                fc_pre,
                dropout_masks,
                logits,
            },
        ))
    }

    /// Class probabilities with dropout disabled (inference).
    pub fn predict(&self, x: &Array4<F>) -> Result<Array2<F>, ClassifierError> {
        let (logits, _) =
            self.forward_impl::<ChaCha8Rng>(x, None)?;
        Ok(softmax(&logits))
    }

    /// One optimization step worth of gradients from a labeled batch.
    fn loss_and_grads<R: Rng>(
        &self,
        x: &Array4<F>,
        labels: &[usize],
        dropout: &Dropout,
        rng: &mut R,
    ) -> Result<(f64, ClassifierGrads<F>), ClassifierError> {
        let (logits, cache) = self.forward_impl(x, Some((dropout, rng)))?;
        let (loss, mut d) = cross_entropy(&logits, labels);

        let slope = F::from_f64(self.topo.leaky_slope);
        let mut fc_grads: Vec<Option<crate::nn::LinearGrad<F>>> =
            (0..4).map(|_| None).collect();
        for i in (0..4).rev() {
            if i < 3 {
                d = d * &cache.dropout_masks[i];
                d.zip_mut_with(&cache.fc_pre[i], |g, &z| {
                    if z <= F::zero() {
                        *g = *g * slope;
                    }
                });
            }
            let (dx, grad) = self.fcs[i].backward(&cache.fc_inputs[i], &d);
            fc_grads[i] = Some(grad);
            d = dx;
        }

        let n = x.shape()[0];
        let last_pooled = self.pools[1].out_spatial(cache.pool_in_spatial[1]);
        let mut d4 = d
            .into_shape_with_order((n, 128, last_pooled.0, last_pooled.1))
            .expect("row-major");
        let mut conv_grads: Vec<Option<crate::nn::Conv2dGrad<F>>> =
            (0..4).map(|_| None).collect();
        for i in (0..4).rev() {
            if i >= 2 {
                let pool = &self.pools[i - 2];
                d4 = pool.backward(&d4, &cache.pool_args[i - 2], cache.pool_in_spatial[i - 2]);
            }
            d4 = leaky_relu_backward(&cache.conv_pre[i], &d4, slope);
            let in_spatial = (
                cache.conv_inputs[i].shape()[2],
                cache.conv_inputs[i].shape()[3],
            );
            let grad = crate::nn::Conv2dGrad {
                weight: self.convs[i].weight_grad(&cache.conv_inputs[i], &d4),
                bias: self.convs[i].bias_grad(&d4),
            };
            conv_grads[i] = Some(grad);
            if i > 0 {
                d4 = self.convs[i].backward_input(&d4, in_spatial);
            }
        }

        Ok((
            loss,
            ClassifierGrads {
                convs: conv_grads.into_iter().map(Option::unwrap).collect(),
                fcs: fc_grads.into_iter().map(Option::unwrap).collect(),
            },
        ))
    }

    pub fn param_slices(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for c in &mut self.convs {
            out.push(c.weight.as_slice_mut().expect("standard layout"));
            out.push(c.bias.as_slice_mut().expect("standard layout"));
        }
        for f in &mut self.fcs {
            out.push(f.weight.as_slice_mut().expect("standard layout"));
            out.push(f.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, ndarray::ArrayViewD<'_, F>)> {
        let mut out: Vec<(String, ndarray::ArrayViewD<'_, F>)> = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("cls/conv{i}/weight"), c.weight.view().into_dyn()));
            out.push((format!("cls/conv{i}/bias"), c.bias.view().into_dyn()));
        }
        for (i, f) in self.fcs.iter().enumerate() {
            out.push((format!("cls/fc{i}/weight"), f.weight.view().into_dyn()));
            out.push((format!("cls/fc{i}/bias"), f.bias.view().into_dyn()));
        }
        out
    }

    pub fn load_tensors(
        &mut self,
        tensors: &mut Vec<(String, ndarray::ArrayD<F>)>,
    ) -> Result<(), ClassifierError> {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.weight = tensorfile::take(tensors, &format!("cls/conv{i}/weight"))?
                .into_dimensionality::<Ix4>()
                .expect("4-D tensor");
            c.bias = tensorfile::take(tensors, &format!("cls/conv{i}/bias"))?
                .into_dimensionality::<Ix1>()
                .expect("1-D tensor");
        }
        for (i, f) in self.fcs.iter_mut().enumerate() {
            f.weight = tensorfile::take(tensors, &format!("cls/fc{i}/weight"))?
                .into_dimensionality::<Ix2>()
                .expect("2-D tensor");
            f.bias = tensorfile::take(tensors, &format!("cls/fc{i}/bias"))?
                .into_dimensionality::<Ix1>()
                .expect("1-D tensor");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ClassifierGrads<F: Real> {
    convs: Vec<crate::nn::Conv2dGrad<F>>,
    fcs: Vec<crate::nn::LinearGrad<F>>,
}

impl<F: Real> ClassifierGrads<F> {
    fn slices(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        for c in &self.convs {
            out.push(c.weight.as_slice().expect("standard layout"));
            out.push(c.bias.as_slice().expect("standard layout"));
        }
        for f in &self.fcs {
            out.push(f.weight.as_slice().expect("standard layout"));
            out.push(f.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

fn softmax<F: Real>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy and its logit gradient.
fn cross_entropy<F: Real>(logits: &Array2<F>, labels: &[usize]) -> (f64, Array2<F>) {
    let n = logits.shape()[0];
    let probs = softmax(logits);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        loss -= probs[[i, label]].as_f64().max(1e-30).ln() / n as f64;
    }
    let scale = F::from_f64(1.0 / n as f64);
    let mut grad = probs;
    for (i, &label) in labels.iter().enumerate() {
        grad[[i, label]] = grad[[i, label]] - F::one();
    }
    grad.mapv_inplace(|v| v * scale);
    (loss, grad)
}

/// Projected epochs as network input, `(N, 1, rows, samples)`.
pub fn set_to_batch<F: Real>(set: &EpochSet) -> Array4<F> {
    let (n, r, t) = (set.n_trials(), set.n_channels(), set.n_samples());
    let mut out = Array4::zeros((n, 1, r, t));
    for i in 0..n {
        for a in 0..r {
            for b in 0..t {
                out[[i, 0, a, b]] = F::from_f64(set.epochs[[i, a, b]] as f64);
            }
        }
    }
    out
}

/// Fit the CNN on a projected training set.
///
/// When `val_fraction > 0`, a stratified slice of the training set is held
/// out and the parameters with the best holdout loss are returned;
/// otherwise the final-epoch parameters are kept.
pub fn train_classifier(
    train: &EpochSet,
    config: &ClassifierConfig,
) -> Result<Classifier<f32>, ClassifierError> {
    let k = config.classes.unwrap_or_else(|| train.n_classes());
    if k < 2 {
        return Err(ClassifierError::Config(format!(
            "need at least two classes, found {k}"
        )));
    }
    for class in 0..k {
        if train.class_indices(class).is_empty() {
            return Err(ClassifierError::EmptyClass(class));
        }
    }
    let rows = train.n_channels();
    if rows % k != 0 {
        return Err(ClassifierError::Shape {
            expected: format!("row count divisible by {k} classes"),
            found: format!("{rows}"),
        });
    }
    let m = rows / k;
    let topo = ClassifierTopology::for_projection(k, m, train.n_samples())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Classifier::<f32>::init(topo, &mut rng);
    let mut adam = crate::nn::Adam::<f32>::new(crate::nn::AdamConfig {
        lr: config.lr,
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        eps: 1e-8,
    });
    let dropout = Dropout::new(config.dropout);

    // Optional stratified holdout for best-epoch selection.
    let holdout = (config.val_fraction > 0.0)
        .then(|| {
            let count = ((train.n_trials() as f64) * config.val_fraction).round() as usize;
            (count > 0 && count < train.n_trials())
                .then(|| crate::dataset::split_single_subject(train, count, config.seed ^ 0x5eed))
        })
        .flatten()
        .transpose()
        .map_err(|e| ClassifierError::Config(format!("holdout split failed: {e}")))?;
    let (fit_set, val_set) = match &holdout {
        Some((fit, val)) => (fit.clone(), Some(val)),
        None => (train.clone(), None),
    };

    let x_all = set_to_batch::<f32>(&fit_set);
    let n = fit_set.n_trials();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Classifier<f32>)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut xb = Array4::zeros((chunk.len(), 1, rows, fit_set.n_samples()));
            let mut yb = Vec::with_capacity(chunk.len());
            for (row, &idx) in chunk.iter().enumerate() {
                xb.index_axis_mut(Axis(0), row)
                    .assign(&x_all.index_axis(Axis(0), idx));
                yb.push(fit_set.labels[idx]);
            }
            let (loss, grads) = net.loss_and_grads(&xb, &yb, &dropout, &mut rng)?;
            if !loss.is_finite() {
                return Err(ClassifierError::TrainingDiverged(epoch));
            }
            adam.step(&mut net.param_slices(), &grads.slices());
        }
        if let Some(val) = val_set {
            let val_loss = validation_loss(&net, val)?;
            if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
                best = Some((val_loss, net.clone()));
            }
        }
    }
    Ok(best.map(|(_, net)| net).unwrap_or(net))
}

fn validation_loss(net: &Classifier<f32>, val: &EpochSet) -> Result<f64, ClassifierError> {
    let x = set_to_batch::<f32>(val);
    let (logits, _) = net.forward_impl::<ChaCha8Rng>(&x, None)?;
    Ok(cross_entropy(&logits, &val.labels).0)
}

/// Evaluation result on a labeled projected set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub kappa: f64,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
    /// Per-trial class probabilities.
    pub probabilities: Vec<Vec<f64>>,
}

/// Chance-corrected agreement for balanced K-class problems.
pub fn kappa_balanced(accuracy: f64, classes: usize) -> f64 {
    let chance = 1.0 / classes as f64;
    (accuracy - chance) / (1.0 - chance)
}

/// Accuracy, kappa, and the confusion matrix of a fitted network.
pub fn evaluate(net: &Classifier<f32>, test: &EpochSet) -> Result<EvalReport, ClassifierError> {
    if test.n_trials() == 0 {
        return Err(ClassifierError::Eval("empty test set".into()));
    }
    let k = net.topo.classes;
    let x = set_to_batch::<f32>(test);
    let probs = net.predict(&x)?;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(test.n_trials());
    let mut probabilities = Vec::with_capacity(test.n_trials());
    for (i, &label) in test.labels.iter().enumerate() {
        let row = probs.index_axis(Axis(0), i);
        let mut arg = 0usize;
        for j in 1..k {
            if row[j] > row[arg] {
                arg = j;
            }
        }
        confusion[label][arg] += 1;
        if arg == label {
            correct += 1;
        }
        predictions.push(arg);
        probabilities.push(row.iter().map(|&p| p as f64).collect());
    }
    let accuracy = correct as f64 / test.n_trials() as f64;
    Ok(EvalReport {
        accuracy,
        kappa: kappa_balanced(accuracy, k),
        confusion,
        predictions,
        probabilities,
    })
}

/// Write per-trial predictions as CSV: `trial_id,true,predicted,p_0..p_{K−1}`.
pub fn write_predictions<P: AsRef<Path>>(
    report: &EvalReport,
    labels: &[usize],
    path: P,
) -> Result<(), ClassifierError> {
    use std::io::Write;
    let k = report.probabilities.first().map_or(0, |p| p.len());
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..k).map(|i| format!("p_{i}")).collect();
    writeln!(out, "trial_id,true,predicted,{}", header.join(","))?;
    for (i, (&label, pred)) in labels.iter().zip(report.predictions.iter()).enumerate() {
        let probs: Vec<String> = report.probabilities[i]
            .iter()
            .map(|p| format!("{p:.9e}"))
            .collect();
        writeln!(out, "{i},{label},{pred},{}", probs.join(","))?;
    }
    Ok(())
}

/// Save fitted parameters in the named-tensor archive format.
pub fn save_classifier<P: AsRef<Path>>(
    net: &Classifier<f32>,
    dir: P,
) -> Result<(), ClassifierError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_vec_pretty(&net.topo)?,
    )?;
    tensorfile::write(dir.join("params.f32"), &net.named_tensors())?;
    Ok(())
}

pub fn load_classifier<P: AsRef<Path>>(dir: P) -> Result<Classifier<f32>, ClassifierError> {
    let dir = dir.as_ref();
    let topo: ClassifierTopology = serde_json::from_slice(&std::fs::read(dir.join("config.json"))?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Classifier::<f32>::init(topo, &mut rng);
    let mut tensors = tensorfile::read::<f32, _>(dir.join("params.f32"))?;
    net.load_tensors(&mut tensors)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn width_trace_and_flatten_anchor() {
        // ⌊(in−k)/s⌋+1 under the published kernels.
        assert_eq!(
            ClassifierTopology::width_trace(1000).unwrap(),
            [1000, 326, 310, 51, 45, 22]
        );
        let topo = ClassifierTopology::for_projection(4, 4, 1000).unwrap();
        assert_eq!(topo.flat_len, 11264);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let topo = ClassifierTopology::for_projection(3, 2, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Classifier::<f32>::init(topo, &mut rng);
        let x = Array4::from_shape_fn((4, 1, 6, 256), |_| {
            use rand::Rng as _;
            rng.gen::<f32>() - 0.5
        });
        let probs = net.predict(&x).unwrap();
        for row in probs.outer_iter() {
            let sum: f32 = row.sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    /// Projected-space set where class k has high variance on its own row
    /// block: linearly separable by construction.
    fn separable_projected(k: usize, m: usize, t: usize, per_class: usize, seed: u64) -> EpochSet {
        let mut set = synth::white_noise_set("synthcls", k, per_class, k * m, t, seed);
        for i in 0..set.n_trials() {
            let class = set.labels[i];
            for r in 0..m {
                for c in 0..t {
                    set.epochs[[i, class * m + r, c]] *= 6.0;
                }
            }
        }
        set
    }

    #[test]
    fn learns_separable_projected_data() {
        let train = separable_projected(3, 2, 256, 30, 3);
        let config = ClassifierConfig {
            epochs: 50,
            batch_size: 30,
            val_fraction: 0.0,
            seed: 5,
            ..Default::default()
        };
        let net = train_classifier(&train, &config).unwrap();
        let report = evaluate(&net, &train).unwrap();
        assert!(
            report.accuracy >= 0.99,
            "train accuracy {} below 0.99",
            report.accuracy
        );
    }

    #[test]
    fn missing_class_is_rejected() {
        // Declared 3-class problem with no class-1 trials.
        let mut single = separable_projected(3, 2, 256, 4, 9);
        for l in single.labels.iter_mut() {
            if *l == 1 {
                *l = 0;
            }
        }
        let config = ClassifierConfig {
            epochs: 1,
            classes: Some(3),
            ..Default::default()
        };
        match train_classifier(&single, &config) {
            Err(ClassifierError::EmptyClass(1)) => {}
            other => panic!("expected EmptyClass(1), got {other:?}"),
        }

        // Single-class set under a declared 2-class problem.
        let mut one_class = separable_projected(2, 2, 256, 4, 9);
        for l in one_class.labels.iter_mut() {
            *l = 0;
        }
        let config = ClassifierConfig {
            epochs: 1,
            classes: Some(2),
            ..Default::default()
        };
        assert!(matches!(
            train_classifier(&one_class, &config),
            Err(ClassifierError::EmptyClass(1))
        ));
    }

    #[test]
    fn fixed_seed_reproduces_parameters() {
        let train = separable_projected(2, 2, 256, 8, 4);
        let config = ClassifierConfig {
            epochs: 3,
            batch_size: 8,
            val_fraction: 0.0,
            seed: 11,
            ..Default::default()
        };
        let a = train_classifier(&train, &config).unwrap();
        let b = train_classifier(&train, &config).unwrap();
        assert_eq!(a.fcs[0].weight, b.fcs[0].weight);
        assert_eq!(a.convs[3].weight, b.convs[3].weight);
    }

    #[test]
    fn evaluation_is_deterministic_and_guards_empty() {
        let train = separable_projected(2, 2, 256, 8, 4);
        let config = ClassifierConfig {
            epochs: 2,
            batch_size: 8,
            val_fraction: 0.0,
            seed: 11,
            ..Default::default()
        };
        let net = train_classifier(&train, &config).unwrap();
        let r1 = evaluate(&net, &train).unwrap();
        let r2 = evaluate(&net, &train).unwrap();
        assert_eq!(r1.predictions, r2.predictions);
        assert_eq!(r1.probabilities, r2.probabilities);

        let empty = train.select(&[]);
        assert!(matches!(
            evaluate(&net, &empty),
            Err(ClassifierError::Eval(_))
        ));
    }

    #[test]
    fn kappa_matches_published_pairs() {
        assert!((kappa_balanced(0.8296, 4) - 0.7728).abs() < 5e-4);
        assert!((kappa_balanced(0.7502, 4) - 0.6669).abs() < 5e-4);
        assert!(kappa_balanced(0.25, 4).abs() < 1e-12);
        assert!((kappa_balanced(1.0, 4) - 1.0).abs() < 1e-12);
        // Strictly increasing affine map on a grid.
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=20 {
            let acc = i as f64 / 20.0;
            let k = kappa_balanced(acc, 4);
            assert!(k > prev);
            prev = k;
        }
    }

    #[test]
    fn save_load_round_trip() {
        let train = separable_projected(2, 2, 256, 6, 4);
        let config = ClassifierConfig {
            epochs: 1,
            batch_size: 6,
            val_fraction: 0.0,
            seed: 2,
            ..Default::default()
        };
        let net = train_classifier(&train, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_classifier(&net, dir.path()).unwrap();
        let loaded = load_classifier(dir.path()).unwrap();
        let x = set_to_batch::<f32>(&train);
        assert_eq!(net.predict(&x).unwrap(), loaded.predict(&x).unwrap());
    }
}
