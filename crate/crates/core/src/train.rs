//! Synthetic data, SGD training and evaluation.
//!
//! The trainable network is a linear projection `x -> P x` of the local
//! features (identity at initialization) followed by the normalization
//! pipeline and a softmax classifier. Fine-tuning updates both `P` and the
//! classifier; the classifier-only protocol keeps `P` fixed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::grad::GradScheme;
use crate::layers::{
    pipeline_backward, pipeline_forward, softmax_xent_backward, softmax_xent_forward, FeatureMap,
    PipelineConfig,
};
use crate::linalg::Matrix;
use crate::matfun::MatFunKind;
use crate::random::{derive_seed, rng};

/// Labeled feature maps sharing one channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<FeatureMap>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<FeatureMap>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(dim_err(format!("{} labels", samples.len()), labels.len()));
        }
        if samples.is_empty() {
            return Err(Error::Input("dataset is empty".into()));
        }
        if classes < 2 {
            return Err(Error::Input(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        let d = samples[0].d();
        if let Some(bad) = samples.iter().find(|s| s.d() != d) {
            return Err(dim_err(format!("{d} channels"), bad.d()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            samples,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples[0].d()
    }
}

/// Generator settings for bursty synthetic feature maps.
///
/// Every location of a sample is one "word" direction plus noise. Each
/// class has its own preferred words; on top of that one word per sample,
/// picked uniformly from the whole vocabulary, is drawn `burst_factor`
/// times more often than the others. Large bursts dominate the pooled
/// matrix without carrying class information. A fixed nuisance direction
/// adds strong class-independent noise that a learned projection can
/// suppress.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub channels: usize,
    pub locations: usize,
    pub samples_per_class: usize,
    pub burst_factor: f64,
    pub noise_sigma: f64,
}

impl SyntheticSpec {
    /// The frozen benchmark used by the ablation fixtures.
    pub fn benchmark() -> Self {
        Self {
            classes: 4,
            channels: 8,
            locations: 64,
            samples_per_class: 40,
            burst_factor: 10.0,
            noise_sigma: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.channels < 2 {
            return Err(Error::Config(format!(
                "need classes >= 2 and channels >= 2, got {} and {}",
                self.classes, self.channels
            )));
        }
        if self.locations == 0 || self.samples_per_class == 0 {
            return Err(Error::Config(
                "locations and samples per class must be positive".into(),
            ));
        }
        if !(self.burst_factor >= 1.0 && self.burst_factor.is_finite()) {
            return Err(Error::Config(format!(
                "burst factor must be >= 1, got {}",
                self.burst_factor
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Words preferred by each class.
const WORDS_PER_CLASS: usize = 2;
/// Relative frequency of another class's words.
const FOREIGN_WORD_WEIGHT: f64 = 0.2;
/// Class-independent noise directions with standard deviation
/// `NUISANCE_GAIN * noise_sigma`.
const NUISANCE_DIRECTIONS: usize = 1;
const NUISANCE_GAIN: f64 = 5.0;

/// Class structure of a synthetic task: the word vocabulary and each
/// class's word frequencies.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    spec: SyntheticSpec,
    words: Vec<Vec<f64>>,
    class_weights: Vec<Vec<f64>>,
    nuisance: Vec<Vec<f64>>,
}

impl SyntheticTask {
    pub fn new(spec: SyntheticSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng(derive_seed(seed, 0));
        let n_words = spec.classes * WORDS_PER_CLASS;
        let words = (0..n_words)
            .map(|_| {
                let v: Vec<f64> = (0..spec.channels)
                    .map(|_| r.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let gain = NUISANCE_GAIN * spec.noise_sigma;
        let nuisance: Vec<Vec<f64>> = (0..NUISANCE_DIRECTIONS)
            .map(|_| {
                let v: Vec<f64> = (0..spec.channels)
                    .map(|_| r.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| gain * x / norm).collect()
            })
            .collect();
        let class_weights = (0..spec.classes)
            .map(|c| {
                (0..n_words)
                    .map(|w| {
                        if w / WORDS_PER_CLASS == c {
                            1.0
                        } else {
                            FOREIGN_WORD_WEIGHT
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            spec,
            words,
            class_weights,
            nuisance,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    /// `per_class` samples of every class, classes interleaved.
    pub fn sample(&self, per_class: usize, seed: u64) -> Result<Dataset> {
        let s = &self.spec;
        let mut r = rng(seed);
        let mut samples = Vec::with_capacity(per_class * s.classes);
        let mut labels = Vec::with_capacity(per_class * s.classes);
        for _ in 0..per_class {
            for c in 0..s.classes {
                samples.push(self.sample_one(c, &mut r)?);
                labels.push(c);
            }
        }
        Dataset::new(samples, labels, s.classes)
    }

    fn sample_one<R: Rng + ?Sized>(&self, class: usize, r: &mut R) -> Result<FeatureMap> {
        let s = &self.spec;
        let burst = r.random_range(0..self.words.len());
        let mut weights = self.class_weights[class].clone();
        weights[burst] *= s.burst_factor;
        let total: f64 = weights.iter().sum();
        let mut values = Matrix::zeros(s.locations, s.channels);
        for i in 0..s.locations {
            let mut u = r.random::<f64>() * total;
            let mut word = weights.len() - 1;
            for (w, &p) in weights.iter().enumerate() {
                if u < p {
                    word = w;
                    break;
                }
                u -= p;
            }
            let amp = 1.0 + 0.2 * r.sample::<f64, _>(StandardNormal);
            let row = values.row_mut(i);
            for (x, &v) in row.iter_mut().zip(&self.words[word]) {
                *x = amp * v + s.noise_sigma * r.sample::<f64, _>(StandardNormal);
            }
            for nv in &self.nuisance {
                let c: f64 = r.sample(StandardNormal);
                for (x, &v) in row.iter_mut().zip(nv) {
                    *x += c * v;
                }
            }
        }
        FeatureMap::new(values)
    }
}

/// `spec.samples_per_class` samples per class of a fresh task.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    SyntheticTask::new(*spec, seed)?.sample(spec.samples_per_class, derive_seed(seed, 1))
}

/// Train and test sets of equal size drawn from the same task.
pub fn generate_benchmark(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let task = SyntheticTask::new(*spec, seed)?;
    let train = task.sample(spec.samples_per_class, derive_seed(seed, 1))?;
    let test = task.sample(spec.samples_per_class, derive_seed(seed, 2))?;
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs after the classifier-only initialization phase.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Recorded for completeness; no SVM stage is trained.
    pub svm_c: f64,
    /// Classifier-only epochs run before `epochs`.
    pub init_epochs: usize,
    /// Update the projection during `epochs`. When false only the
    /// classifier is trained throughout.
    pub fine_tune: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 50,
            batch_size: 16,
            seed: 0,
            svm_c: 1.0,
            init_epochs: 10,
            fine_tune: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Projection, pipeline settings and classifier weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub pipeline: PipelineConfig,
    /// `channels x channels`, applied to every location.
    pub projection: Matrix,
    /// `classes x (channels^2 + 1)`, bias last.
    pub weights: Matrix,
}

impl Model {
    /// Identity projection and zero classifier.
    pub fn new(pipeline: PipelineConfig, channels: usize, classes: usize) -> Self {
        Self {
            pipeline,
            projection: Matrix::identity(channels),
            weights: Matrix::zeros(classes, channels * channels + 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.projection.rows()
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        let d = self.channels();
        if self.projection.cols() != data.channels() {
            return Err(dim_err(
                format!("{} input channels", self.projection.cols()),
                data.channels(),
            ));
        }
        if self.weights.cols() != d * d + 1 {
            return Err(dim_err(
                format!("{} weight columns", d * d + 1),
                self.weights.cols(),
            ));
        }
        if self.classes() != data.classes {
            return Err(dim_err(format!("{} classes", self.classes()), data.classes));
        }
        Ok(())
    }

    fn project(&self, f: &FeatureMap) -> Result<FeatureMap> {
        FeatureMap::new(f.values().matmul(&self.projection.transpose())?)
    }

    pub fn descriptor(&self, f: &FeatureMap) -> Result<Vec<f64>> {
        Ok(pipeline_forward(&self.project(f)?, &self.pipeline)?.0)
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, f: &FeatureMap) -> Result<usize> {
        let desc = self.descriptor(f)?;
        let x = Matrix::from_vec(1, desc.len(), desc)?;
        let z = crate::layers::logits(&x, &self.weights)?;
        Ok(argmax(z.row(0)))
    }
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

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean minibatch loss of each initialization epoch.
    pub init_losses: Vec<f64>,
    /// Mean minibatch loss of each main epoch.
    pub losses: Vec<f64>,
}

struct Sgd {
    lr: f64,
    momentum: f64,
}

impl Sgd {
    /// `v <- mu v - lr g; w <- w + v`.
    fn step(&self, w: &mut Matrix, v: &mut Matrix, g: &Matrix) {
        for ((wi, vi), gi) in w
            .as_mut_slice()
            .iter_mut()
            .zip(v.as_mut_slice())
            .zip(g.as_slice())
        {
            *vi = self.momentum * *vi - self.lr * gi;
            *wi += *vi;
        }
    }
}

fn batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng(derive_seed(seed, epoch)));
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, loss })
    }
}

/// Classifier-only epochs on fixed descriptors. `epoch_offset` keeps the
/// shuffling streams distinct across phases.
fn train_classifier(
    desc: &Matrix,
    labels: &[usize],
    weights: &mut Matrix,
    velocity: &mut Matrix,
    tcfg: &TrainConfig,
    epochs: usize,
    epoch_offset: usize,
) -> Result<Vec<f64>> {
    let sgd = Sgd {
        lr: tcfg.learning_rate,
        momentum: tcfg.momentum,
    };
    let mut losses = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let epoch = epoch_offset + e;
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in batches(labels.len(), tcfg.batch_size, tcfg.seed, epoch as u64) {
            let x = Matrix::from_fn(batch.len(), desc.cols(), |b, j| desc[(batch[b], j)]);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let fwd = softmax_xent_forward(&x, &y, weights)?;
            check_loss(fwd.loss, epoch)?;
            let grads = softmax_xent_backward(&x, &y, weights, &fwd)?;
            sgd.step(weights, velocity, &grads.weights);
            total += fwd.loss * batch.len() as f64;
            count += batch.len();
        }
        losses.push(total / count as f64);
    }
    Ok(losses)
}

/// Numerical failures inside the pipeline once the parameters have moved
/// are reported as divergence at `epoch`.
fn as_divergence(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(_) | Error::Dimension { .. } | Error::Divergence { .. } => e,
        _ => Error::Divergence {
            epoch,
            loss: f64::NAN,
        },
    }
}

fn descriptor_matrix(model: &Model, data: &Dataset) -> Result<Matrix> {
    let d2 = model.weights.cols() - 1;
    let mut out = Matrix::zeros(data.len(), d2);
    for (i, f) in data.samples.iter().enumerate() {
        out.row_mut(i).copy_from_slice(&model.descriptor(f)?);
    }
    Ok(out)
}

/// Trains a fresh [`Model`] on `data`.
///
/// `tcfg.init_epochs` classifier-only epochs initialize the softmax layer
/// with the projection fixed at the identity; then `tcfg.epochs` epochs
/// update the projection and classifier jointly (or only the classifier
/// when `fine_tune` is off). A non-finite minibatch loss aborts with
/// [`Error::Divergence`].
pub fn train(data: &Dataset, cfg: &PipelineConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    let mut model = Model::new(*cfg, data.channels(), data.classes);
    let mut w_vel = Matrix::zeros(model.weights.rows(), model.weights.cols());

    let desc = descriptor_matrix(&model, data)?;
    let init_losses = train_classifier(
        &desc,
        &data.labels,
        &mut model.weights,
        &mut w_vel,
        tcfg,
        tcfg.init_epochs,
        0,
    )?;

    if !tcfg.fine_tune {
        let losses = train_classifier(
            &desc,
            &data.labels,
            &mut model.weights,
            &mut w_vel,
            tcfg,
            tcfg.epochs,
            tcfg.init_epochs,
        )?;
        return Ok(TrainOutcome {
            model,
            init_losses,
            losses,
        });
    }

    let sgd = Sgd {
        lr: tcfg.learning_rate,
        momentum: tcfg.momentum,
    };
    let d = data.channels();
    let mut p_vel = Matrix::zeros(d, d);
    let mut losses = Vec::with_capacity(tcfg.epochs);
    for e in 0..tcfg.epochs {
        let epoch = tcfg.init_epochs + e;
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in batches(data.len(), tcfg.batch_size, tcfg.seed, epoch as u64) {
            let mut x = Matrix::zeros(batch.len(), d * d);
            let mut states = Vec::with_capacity(batch.len());
            for (b, &i) in batch.iter().enumerate() {
                let (desc, state) = model
                    .project(&data.samples[i])
                    .and_then(|f| pipeline_forward(&f, cfg))
                    .map_err(as_divergence(epoch))?;
                x.row_mut(b).copy_from_slice(&desc);
                states.push(state);
            }
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let fwd = softmax_xent_forward(&x, &y, &model.weights)?;
            check_loss(fwd.loss, epoch)?;
            let grads = softmax_xent_backward(&x, &y, &model.weights, &fwd)?;

            let mut gp = Matrix::zeros(d, d);
            for ((b, &i), state) in batch.iter().enumerate().zip(states) {
                let gx = pipeline_backward(grads.descriptors.row(b), state, cfg)
                    .map_err(as_divergence(epoch))?;
                // dL/dP = sum_i (dL/dx'_i) x_i^T
                gp = gp.add(&gx.tr_matmul(data.samples[i].values())?)?;
            }
            if !gp.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: f64::NAN,
                });
            }
            sgd.step(&mut model.weights, &mut w_vel, &grads.weights);
            sgd.step(&mut model.projection, &mut p_vel, &gp);
            total += fwd.loss * batch.len() as f64;
            count += batch.len();
        }
        losses.push(total / count as f64);
    }
    Ok(TrainOutcome {
        model,
        init_losses,
        losses,
    })
}

/// Mean cross-entropy of `model` over `data`.
pub fn dataset_loss(model: &Model, data: &Dataset) -> Result<f64> {
    model.check(data)?;
    let desc = descriptor_matrix(model, data)?;
    Ok(softmax_xent_forward(&desc, &data.labels, &model.weights)?.loss)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    model.check(data)?;
    let mut correct = 0usize;
    for (f, &label) in data.samples.iter().zip(&data.labels) {
        if model.predict(f)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Classifier-only accuracy on `test` for each exponent `p`, with the
/// matrix function of `base` replaced by `Power(p)`.
pub fn exponent_sweep(
    train_set: &Dataset,
    test_set: &Dataset,
    base: &PipelineConfig,
    tcfg: &TrainConfig,
    p_values: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let tcfg = TrainConfig {
        fine_tune: false,
        ..*tcfg
    };
    p_values
        .iter()
        .map(|&p| {
            let cfg = PipelineConfig {
                matfun: Some(MatFunKind::Power(p)),
                grad_scheme: GradScheme::PassThrough,
                ..*base
            };
            let model = train(train_set, &cfg, &tcfg)?.model;
            Ok((p, evaluate(&model, test_set)?))
        })
        .collect()
}
