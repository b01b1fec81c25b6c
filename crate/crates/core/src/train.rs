//! Desk-scale segmentation training.
//!
//! A per-pixel linear softmax classifier is trained with momentum SGD and a
//! poly learning-rate schedule. Each step draws `batch_crops` crops, reduces
//! every crop's pixel losses with the selected [`LossMode`], averages the crop
//! losses and backpropagates through the per-pixel weights of the reduction.
//! Crops are evaluated concurrently but reduced in draw order, so runs are
//! bit-reproducible for a given seed.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PoolingConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{mean_iou, ConfusionMatrix};
use crate::par::{self, Execution};
use crate::pixel::{backprop_pooled, softmax_xent, SegBatch};
use crate::sampler::{self, ClassStats, CropWindow, SamplerConfig};
use crate::solver::solve_pool;
use crate::sum::NeumaierSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Mean of the pixel losses.
    Uniform,
    /// Pixel losses scaled by `median(freq) / freq[class]`, then averaged.
    InverseMedianFreq,
    /// Loss max-pooling.
    Lmp,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Uniform => "uniform",
            LossMode::InverseMedianFreq => "inverse_median_freq",
            LossMode::Lmp => "lmp",
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(LossMode::Uniform),
            "inverse_median_freq" | "imf" => Ok(LossMode::InverseMedianFreq),
            "lmp" => Ok(LossMode::Lmp),
            other => Err(Error::invalid(
                "loss_mode",
                format!("unknown mode {other:?}; expected uniform, inverse_median_freq or lmp"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    /// Used by [`LossMode::Lmp`]; `m` resolves against each crop's valid pixels.
    pub pooling: PoolingConfig,
    pub lr0: f64,
    pub momentum: f64,
    pub poly_power: f64,
    pub iterations: usize,
    pub batch_crops: usize,
    pub crop_size: (usize, usize),
    /// `None` draws crop anchors uniformly.
    pub sampler: Option<SamplerConfig>,
    /// Coefficient of the quadratic penalty `weight_decay / 2 * ||W||^2` on the
    /// non-bias parameters.
    pub weight_decay: f64,
    /// Evaluate on the eval split every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::Uniform,
            pooling: PoolingConfig::default(),
            lr0: 0.5,
            momentum: 0.9,
            poly_power: 0.9,
            iterations: 300,
            batch_crops: 8,
            crop_size: (16, 16),
            sampler: None,
            weight_decay: 1e-4,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid("lr0", format!("must be > 0, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.poly_power > 0.0 && self.poly_power.is_finite()) {
            return Err(Error::invalid("poly_power", format!("must be > 0, got {}", self.poly_power)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if self.batch_crops == 0 {
            return Err(Error::invalid("batch_crops", "must be at least 1"));
        }
        if self.crop_size.0 == 0 || self.crop_size.1 == 0 {
            return Err(Error::invalid("crop_size", "both sides must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay", "must be finite and >= 0"));
        }
        if let Some(s) = &self.sampler {
            s.validate()?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Learning rate at `iteration` of `iterations`.
    pub fn learning_rate(&self, iteration: usize) -> f64 {
        let progress = iteration as f64 / self.iterations as f64;
        self.lr0 * (1.0 - progress).max(0.0).powf(self.poly_power)
    }
}

/// Affine per-pixel classifier: `logits = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    classes: usize,
    features: usize,
    /// Row-major `[classes x (features + 1)]`; the last column is the bias.
    params: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(classes: usize, features: usize) -> Self {
        Self {
            classes,
            features,
            params: vec![0.0; classes * (features + 1)],
        }
    }

    pub fn from_params(classes: usize, features: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != classes * (features + 1) {
            return Err(Error::LengthMismatch {
                what: "model parameters",
                expected: classes * (features + 1),
                got: params.len(),
            });
        }
        Ok(Self {
            classes,
            features,
            params,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn stride(&self) -> usize {
        self.features + 1
    }

    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let s = self.stride();
        for (c, z) in out.iter_mut().enumerate() {
            let row = &self.params[c * s..(c + 1) * s];
            *z = row[self.features] + row[..self.features].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.classes];
        self.logits_into(x, &mut z);
        argmax(&z)
    }

    /// Writes a one-line JSON header followed by the parameters as
    /// little-endian f64.
    pub fn save(&self, path: &Path, header: &ModelHeader) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut file, header)?;
        file.write_all(b"\n")?;
        for v in &self.params {
            file.write_all(&v.to_le_bytes())?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ModelHeader)> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: ModelHeader = serde_json::from_str(line.trim_end())?;
        if header.format != ModelHeader::FORMAT {
            return Err(Error::invalid("model format", format!("expected {}, found {:?}", ModelHeader::FORMAT, header.format)));
        }
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let expected = header.classes * (header.features + 1);
        if bytes.len() != expected * 8 {
            return Err(Error::LengthMismatch {
                what: "model parameter bytes",
                expected: expected * 8,
                got: bytes.len(),
            });
        }
        let params = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        Ok((Self::from_params(header.classes, header.features, params)?, header))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub classes: usize,
    pub features: usize,
    pub seed: u64,
    pub config_sha256: String,
}

impl ModelHeader {
    pub const FORMAT: &'static str = "lmp-linear-model-v1";

    pub fn new(model: &LinearModel, config: &TrainConfig) -> Self {
        Self {
            format: Self::FORMAT.to_string(),
            classes: model.classes,
            features: model.features,
            seed: config.seed,
            config_sha256: config.hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    /// Running training IoU tracked by the sampler, when one is used.
    pub sampler_iou: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Eval-split IoU per class; `None` for a class neither present nor
    /// predicted.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    /// Batch loss per step (mean over crops of each crop's reduced loss),
    /// without the weight penalty.
    pub loss_history: Vec<f64>,
    /// Plain pixel-loss mean per step over the same crops.
    pub pixel_mean_history: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
    pub config: TrainConfig,
    pub wall_time_secs: f64,
}

/// `median(freq) / freq[c]` over the classes present in the training split;
/// absent classes get weight 1.
pub fn inverse_median_frequency(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let mut freqs: Vec<f64> = counts
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| k as f64 / total as f64)
        .collect();
    if freqs.is_empty() {
        return vec![1.0; counts.len()];
    }
    freqs.sort_by(f64::total_cmp);
    let mid = freqs.len() / 2;
    let median = if freqs.len() % 2 == 1 {
        freqs[mid]
    } else {
        0.5 * (freqs[mid - 1] + freqs[mid])
    };
    counts
        .iter()
        .map(|&k| if k > 0 { median * total as f64 / k as f64 } else { 1.0 })
        .collect()
}

struct CropResult {
    loss: f64,
    pixel_mean: f64,
    grad: Vec<f64>,
    predictions: Vec<usize>,
    labels: Vec<usize>,
}

struct Ctx<'a> {
    dataset: &'a Dataset,
    config: &'a TrainConfig,
    class_weights: &'a [f64],
}

fn crop_pixels(dataset: &Dataset, window: &CropWindow) -> impl Iterator<Item = usize> {
    let width = dataset.spec.width;
    let w = *window;
    (w.row0..w.row1).flat_map(move |r| (w.col0..w.col1).map(move |c| r * width + c))
}

fn evaluate_crop(ctx: &Ctx<'_>, model: &LinearModel, image: usize, window: &CropWindow) -> Result<CropResult> {
    let img = &ctx.dataset.images[image];
    let dim = ctx.dataset.feature_dim();
    let classes = model.classes;
    let pixels: Vec<usize> = crop_pixels(ctx.dataset, window).collect();
    let mut logits = vec![0.0; pixels.len() * classes];
    let mut labels = Vec::with_capacity(pixels.len());
    for (k, &u) in pixels.iter().enumerate() {
        model.logits_into(&img.features[u * dim..(u + 1) * dim], &mut logits[k * classes..(k + 1) * classes]);
        labels.push(img.labels[u]);
    }
    let predictions: Vec<usize> = logits.chunks_exact(classes).map(argmax).collect();
    let batch = SegBatch::all_valid(logits, classes, labels.clone())?;
    let result = softmax_xent(&batch)?;
    let n = result.losses.len() as f64;
    let pixel_mean = result.losses.mean();

    let (loss, weights) = match ctx.config.loss_mode {
        LossMode::Uniform => (pixel_mean, vec![1.0 / n; result.losses.len()]),
        LossMode::InverseMedianFreq => {
            let weights: Vec<f64> = result
                .valid_index_map
                .iter()
                .map(|&k| ctx.class_weights[labels[k]] / n)
                .collect();
            let loss = NeumaierSum::sum_of(weights.iter().zip(result.losses.iter()).map(|(w, l)| w * l));
            (loss, weights)
        }
        LossMode::Lmp => {
            let out = solve_pool(&result.losses, &ctx.config.pooling)?;
            (out.pooled_loss, out.weights)
        }
    };
    let logit_grad = backprop_pooled(&result, &weights)?;

    let stride = dim + 1;
    let mut grad = vec![0.0; classes * stride];
    for (k, &u) in pixels.iter().enumerate() {
        let x = &img.features[u * dim..(u + 1) * dim];
        for (c, &g) in logit_grad[k * classes..(k + 1) * classes].iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad[c * stride..(c + 1) * stride];
            for (r, v) in row.iter_mut().zip(x) {
                *r += g * v;
            }
            row[dim] += g;
        }
    }
    Ok(CropResult {
        loss,
        pixel_mean,
        grad,
        predictions,
        labels,
    })
}

/// Trains with parallel crop evaluation when available.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(LinearModel, TrainReport)> {
    train_with(dataset, config, Execution::default())
}

pub fn train_with(dataset: &Dataset, config: &TrainConfig, exec: Execution) -> Result<(LinearModel, TrainReport)> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.eval.is_empty() {
        return Err(Error::invalid("dataset", "train and eval splits must be non-empty"));
    }
    let started = Instant::now();
    let classes = dataset.spec.classes;
    let dim = dataset.feature_dim();
    let stride = dim + 1;
    let index = dataset.index(&dataset.train);
    let class_weights = inverse_median_frequency(&index.class_counts());
    let ctx = Ctx {
        dataset,
        config,
        class_weights: &class_weights,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler_state = match &config.sampler {
        Some(s) => {
            let stats = ClassStats::new(classes, s.decay)?.with_presence(index.presence())?;
            let mut class_rng = ChaCha8Rng::seed_from_u64(config.seed);
            class_rng.set_stream(s.seed.wrapping_add(1));
            Some((stats, class_rng))
        }
        None => None,
    };

    let mut model = LinearModel::zeros(classes, dim);
    let mut velocity = vec![0.0; model.params.len()];
    let mut loss_history = Vec::with_capacity(config.iterations);
    let mut pixel_mean_history = Vec::with_capacity(config.iterations);
    let mut checkpoints = Vec::new();
    let (crop_h, crop_w) = config.crop_size;

    for it in 0..config.iterations {
        let crops: Vec<(usize, CropWindow)> = (0..config.batch_crops)
            .map(|_| {
                let anchor = match (&config.sampler, &mut sampler_state) {
                    (Some(cfg), Some((stats, class_rng))) => {
                        let class = sampler::sample_class(stats, cfg, class_rng);
                        sampler::pick_crop(&index, class, &mut rng)
                    }
                    _ => sampler::pick_uniform(&index, &mut rng),
                };
                let window = sampler::crop_window(&anchor, crop_h, crop_w, dataset.spec.height, dataset.spec.width);
                (anchor.image, window)
            })
            .collect();

        let results = par::map(exec, &crops, |(image, window)| evaluate_crop(&ctx, &model, *image, window));

        let scale = 1.0 / config.batch_crops as f64;
        let mut loss = NeumaierSum::new();
        let mut pixel_mean = NeumaierSum::new();
        let mut grad = vec![0.0; model.params.len()];
        for result in results {
            let r = result?;
            loss.add(r.loss * scale);
            pixel_mean.add(r.pixel_mean * scale);
            for (g, v) in grad.iter_mut().zip(&r.grad) {
                *g += v * scale;
            }
            if let Some((stats, _)) = &mut sampler_state {
                stats.update(&r.predictions, &r.labels, &vec![true; r.labels.len()])?;
            }
        }
        let loss = loss.value();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!("batch loss is {loss}"),
            });
        }
        loss_history.push(loss);
        pixel_mean_history.push(pixel_mean.value());

        let lr = config.learning_rate(it);
        for c in 0..classes {
            for j in 0..dim {
                let k = c * stride + j;
                grad[k] += config.weight_decay * model.params[k];
            }
        }
        for ((w, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = config.momentum * *v + lr * g;
            *w -= *v;
        }
        if let Some(k) = model.params.iter().position(|w| !w.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!("parameter {k} became {}", model.params[k]),
            });
        }

        let done = it + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.iterations {
            let (per_class_iou, mean) = evaluate_with(&model, dataset, &dataset.eval, exec)?;
            checkpoints.push(Checkpoint {
                iteration: done,
                per_class_iou,
                mean_iou: mean,
                sampler_iou: sampler_state.as_ref().map(|(s, _)| s.iou.clone()),
            });
        }
    }

    let (per_class_iou, mean) = evaluate_with(&model, dataset, &dataset.eval, exec)?;
    let report = TrainReport {
        per_class_iou,
        mean_iou: mean,
        loss_history,
        pixel_mean_history,
        checkpoints,
        config: config.clone(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Per-class IoU and mean IoU of the model's predictions over `split`.
pub fn evaluate(model: &LinearModel, dataset: &Dataset, split: &[usize]) -> Result<(Vec<Option<f64>>, f64)> {
    evaluate_with(model, dataset, split, Execution::default())
}

pub fn evaluate_with(
    model: &LinearModel,
    dataset: &Dataset,
    split: &[usize],
    exec: Execution,
) -> Result<(Vec<Option<f64>>, f64)> {
    if split.is_empty() {
        return Err(Error::invalid("split", "no images to evaluate"));
    }
    if model.classes != dataset.spec.classes || model.features != dataset.feature_dim() {
        return Err(Error::invalid("model", "shape does not match the dataset"));
    }
    let dim = dataset.feature_dim();
    let per_image = par::map(exec, split, |&i| {
        let img = &dataset.images[i];
        let preds: Vec<usize> = img.features.chunks_exact(dim).map(|x| model.predict(x)).collect();
        let mut cm = ConfusionMatrix::new(model.classes);
        cm.accumulate(&preds, &img.labels, &vec![true; preds.len()]).map(|_| cm)
    });
    let mut total = ConfusionMatrix::new(model.classes);
    for cm in per_image {
        total.merge(&cm?);
    }
    let per_class = total.per_class_iou();
    let mean = mean_iou(&per_class).ok_or(Error::NoValidPixels)?;
    Ok((per_class, mean))
}

fn argmax(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc })
        .0
}
