//! Loss, Adam, synthetic sequence data and the training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{sequence_backward, sequence_forward_batch, LstmParams};
use crate::tensor::DenseTensor;

/// Softmax cross-entropy for one logit vector. Returns the loss and
/// `softmax(logits) - onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let c = logits.len();
    if c < 2 {
        return Err(Error::Argument(format!("cross-entropy needs at least 2 classes, got {c}")));
    }
    if label >= c {
        return Err(Error::Argument(format!("label {label} out of range for {c} classes")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub l2_coefficient: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global-norm gradient clipping threshold; off when `None`.
    pub grad_clip: Option<f64>,
    /// Record wall-clock time per epoch. Off keeps logs bit-reproducible.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            l2_coefficient: 0.001,
            dropout_rate: 0.25,
            batch_size: 16,
            epochs: 200,
            seed: 0,
            grad_clip: None,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Argument(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Argument("Adam betas must lie in [0, 1)".into()));
        }
        if let Some(c) = self.grad_clip {
            if c <= 0.0 || c.is_nan() {
                return Err(Error::Argument(format!("invalid clipping threshold {c}")));
            }
        }
        Ok(())
    }
}

/// One Adam update of a single buffer. `t` counts steps from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(Error::Shape(format!(
            "Adam buffers disagree: params {}, grads {}, moments {}/{}",
            params.len(),
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(Error::Argument("Adam step counter starts at 1".into()));
    }
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for i in 0..params.len() {
        let g = grads[i] + cfg.l2_coefficient * params[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_epsilon);
    }
    Ok(())
}

/// Adam state for a list of parameter buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new<'a>(buffers: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let m: Vec<Vec<f64>> = buffers.into_iter().map(|b| vec![0.0; b.len()]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], cfg: &TrainConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam tracks {} buffers, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        for (i, p) in params.into_iter().enumerate() {
            adam_step(p, grads[i], &mut self.m[i], &mut self.v[i], self.t, cfg)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `T * N` values, step-major.
    pub inputs: Vec<f64>,
    /// Class index in `0..C`.
    pub label: usize,
}

/// Noisy copies of one fixed random template sequence per class.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub n: usize,
    pub steps: usize,
    pub classes: usize,
    pub seed: u64,
    pub templates: Vec<Vec<f64>>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub steps: usize,
    pub classes: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 576,
            steps: 6,
            classes: 5,
            samples_per_class: 50,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn build(&self) -> Result<SynthDataset> {
        make_synth_dataset(
            self.n,
            self.steps,
            self.classes,
            self.samples_per_class,
            self.noise_sigma,
            self.seed,
        )
    }
}

/// Templates have standard-normal entries. Per class, the first
/// `round(0.8 * samples_per_class)` samples form the training split.
pub fn make_synth_dataset(
    n: usize,
    steps: usize,
    classes: usize,
    samples_per_class: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SynthDataset> {
    if n == 0 || steps == 0 || classes == 0 {
        return Err(Error::Argument("N, T and C must all be at least 1".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Argument(format!("invalid noise level {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let len = n * steps;
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..len).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let n_train = (0.8 * samples_per_class as f64).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, tpl) in templates.iter().enumerate() {
        for k in 0..samples_per_class {
            let inputs = tpl.iter().map(|&v| v + noise_sigma * normal.sample(&mut rng)).collect();
            let s = Sample { inputs, label };
            if k < n_train {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    Ok(SynthDataset {
        n,
        steps,
        classes,
        seed,
        templates,
        train,
        test,
    })
}

/// Stacks samples into per-step `(B, N)` tensors.
pub fn batch_inputs(samples: &[&Sample], n: usize, steps: usize) -> Result<Vec<DenseTensor>> {
    (0..steps)
        .map(|t| {
            let mut data = Vec::with_capacity(samples.len() * n);
            for s in samples {
                if s.inputs.len() != n * steps {
                    return Err(Error::Shape(format!(
                        "sample holds {} values, expected {}",
                        s.inputs.len(),
                        n * steps
                    )));
                }
                data.extend_from_slice(&s.inputs[t * n..(t + 1) * n]);
            }
            DenseTensor::new(vec![samples.len(), n], data)
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean loss and accuracy in evaluation mode (no dropout).
pub fn evaluate(model: &LstmParams, samples: &[Sample], n: usize, steps: usize, batch: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let c = model.classes();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let xs = batch_inputs(&refs, n, steps)?;
        let (logits, _) = sequence_forward_batch(model, &xs, 0.0, 0, false)?;
        for (b, s) in chunk.iter().enumerate() {
            let z = &logits.data()[b * c..(b + 1) * c];
            loss += cross_entropy(z, s.label)?.0;
            if argmax(z) == s.label {
                correct += 1;
            }
        }
    }
    Ok((loss / samples.len() as f64, correct as f64 / samples.len() as f64))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch's minibatches.
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Zero unless [`TrainConfig::record_time`] is set.
    pub wall_ms: u64,
}

fn global_norm(grads: &[&[f64]]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Minibatch Adam on `data.train`; returns one record per epoch.
///
/// `on_epoch` sees each record as soon as it is produced.
pub fn train_with(
    model: &mut LstmParams,
    data: &SynthDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if model.input_dim() != data.n || model.classes() != data.classes {
        return Err(Error::Shape(format!(
            "model expects N={} and C={}, dataset has N={} and C={}",
            model.input_dim(),
            model.classes(),
            data.n,
            data.classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.param_slices());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let c = data.classes;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
            let b = samples.len();
            let xs = batch_inputs(&samples, data.n, data.steps)?;
            let mask_seed: u64 = rng.random();
            let (logits, cache) = sequence_forward_batch(model, &xs, cfg.dropout_rate, mask_seed, true)?;
            let mut dlogits = vec![0.0; b * c];
            for (k, s) in samples.iter().enumerate() {
                let (l, g) = cross_entropy(&logits.data()[k * c..(k + 1) * c], s.label)?;
                if !l.is_finite() {
                    return Err(Error::Divergence { epoch, loss: l });
                }
                loss_sum += l;
                for (dst, v) in dlogits[k * c..(k + 1) * c].iter_mut().zip(g) {
                    *dst = v / b as f64;
                }
            }
            let grads = sequence_backward(model, &cache, &DenseTensor::new(vec![b, c], dlogits)?)?;
            let mut slices = grads.slices();
            let clipped: Vec<Vec<f64>>;
            if let Some(limit) = cfg.grad_clip {
                let norm = global_norm(&slices);
                if norm > limit {
                    let s = limit / norm;
                    clipped = slices.iter().map(|g| g.iter().map(|v| v * s).collect()).collect();
                    slices = clipped.iter().map(Vec::as_slice).collect();
                }
            }
            adam.step(model.param_slices_mut(), &slices, cfg)?;
        }
        let loss = if data.train.is_empty() {
            0.0
        } else {
            loss_sum / data.train.len() as f64
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        let (_, train_acc) = evaluate(model, &data.train, data.n, data.steps, cfg.batch_size)?;
        let (_, test_acc) = evaluate(model, &data.test, data.n, data.steps, cfg.batch_size)?;
        let wall_ms = if cfg.record_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let rec = EpochRecord {
            epoch,
            loss,
            train_acc,
            test_acc,
            wall_ms,
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(log)
}

pub fn train(model: &mut LstmParams, data: &SynthDataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    train_with(model, data, cfg, |_| {})
}
