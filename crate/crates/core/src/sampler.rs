//! Complementary crop sampling.
//!
//! Running per-class IoU on the training data steers which class the next
//! crop is centered on: with probability `blend` a class is drawn uniformly,
//! otherwise proportionally to `1 - IoU + epsilon`, so under-performing classes
//! are visited more often while the draw stays stochastic.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;

/// Decayed confusion counts and the IoU derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub confusion: ConfusionMatrix,
    /// Per-class IoU; a class never seen nor predicted counts as 1.
    pub iou: Vec<f64>,
    pub decay: f64,
    /// Classes that occur in the training data.
    pub present: Vec<bool>,
}

impl ClassStats {
    pub fn new(classes: usize, decay: f64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("classes", format!("need at least 2, got {classes}")));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::invalid("decay", format!("must lie in (0, 1], got {decay}")));
        }
        Ok(Self {
            confusion: ConfusionMatrix::new(classes),
            iou: vec![1.0; classes],
            decay,
            present: vec![true; classes],
        })
    }

    pub fn with_presence(mut self, present: Vec<bool>) -> Result<Self> {
        if present.len() != self.classes() {
            return Err(Error::LengthMismatch {
                what: "class presence",
                expected: self.classes(),
                got: present.len(),
            });
        }
        if !present.iter().any(|&p| p) {
            return Err(Error::invalid("present", "no class is present"));
        }
        self.present = present;
        Ok(self)
    }

    pub fn classes(&self) -> usize {
        self.iou.len()
    }

    /// Decays the counts, adds the valid pixels and refreshes the IoU.
    pub fn update(&mut self, predictions: &[usize], labels: &[usize], valid: &[bool]) -> Result<()> {
        let mut next = self.confusion.clone();
        next.scale(self.decay);
        next.accumulate(predictions, labels, valid)?;
        self.confusion = next;
        self.iou = self
            .confusion
            .per_class_iou()
            .into_iter()
            .map(|v| v.unwrap_or(1.0))
            .collect();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Probability of a uniform class draw.
    pub blend: f64,
    /// Floor added to the inverse-performance weight `1 - IoU`.
    pub epsilon: f64,
    /// Confusion decay applied per update.
    pub decay: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            blend: 0.5,
            epsilon: 0.01,
            decay: 0.99,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::invalid("blend", format!("must lie in [0, 1], got {}", self.blend)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid("decay", format!("must lie in (0, 1], got {}", self.decay)));
        }
        Ok(())
    }
}

/// Exact class-draw distribution for the given IoU snapshot.
pub fn class_probabilities(stats: &ClassStats, config: &SamplerConfig) -> Vec<f64> {
    let present = stats.present.iter().filter(|&&p| p).count() as f64;
    let inverse = inverse_weights(stats, config);
    let total: f64 = inverse.iter().sum();
    stats
        .present
        .iter()
        .zip(&inverse)
        .map(|(&p, &w)| {
            if p {
                config.blend / present + (1.0 - config.blend) * w / total
            } else {
                0.0
            }
        })
        .collect()
}

fn inverse_weights(stats: &ClassStats, config: &SamplerConfig) -> Vec<f64> {
    stats
        .iou
        .iter()
        .zip(&stats.present)
        .map(|(&iou, &p)| if p { (1.0 - iou).max(0.0) + config.epsilon } else { 0.0 })
        .collect()
}

/// Draws the class the next crop is centered on. `stats` is read as an
/// immutable snapshot for the whole draw.
pub fn sample_class<R: Rng + ?Sized>(stats: &ClassStats, config: &SamplerConfig, rng: &mut R) -> usize {
    let weights: Vec<f64> = if rng.random::<f64>() < config.blend {
        stats.present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect()
    } else {
        inverse_weights(stats, config)
    };
    // weights are finite, non-negative and at least one present class has weight > 0
    WeightedIndex::new(&weights)
        .expect("class weights are positive for present classes")
        .sample(rng)
}

/// Ground-truth pixel locations of every class across a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub height: usize,
    pub width: usize,
    pub images: Vec<usize>,
    /// `per_class[c]` lists `(image id, flat pixel index)` pairs.
    pub per_class: Vec<Vec<(usize, usize)>>,
}

impl DatasetIndex {
    /// Indexes label maps given as `(image id, labels)`; `labels` is row-major
    /// `height x width`.
    pub fn build<'a>(
        classes: usize,
        height: usize,
        width: usize,
        label_maps: impl IntoIterator<Item = (usize, &'a [usize])>,
    ) -> Self {
        let mut per_class = vec![Vec::new(); classes];
        let mut images = Vec::new();
        for (id, labels) in label_maps {
            images.push(id);
            for (pixel, &c) in labels.iter().enumerate() {
                if c < classes {
                    per_class[c].push((id, pixel));
                }
            }
        }
        Self {
            height,
            width,
            images,
            per_class,
        }
    }

    pub fn presence(&self) -> Vec<bool> {
        self.per_class.iter().map(|v| !v.is_empty()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropAnchor {
    pub image: usize,
    pub row: usize,
    pub col: usize,
    /// The requested class was absent and the anchor was drawn uniformly.
    pub fallback: bool,
}

/// Half-open pixel window `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl CropWindow {
    pub fn pixels(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }
}

/// Picks a pixel of `class` uniformly over the index; if the class does not
/// occur, falls back to a uniform image and position.
pub fn pick_crop<R: Rng + ?Sized>(index: &DatasetIndex, class: usize, rng: &mut R) -> CropAnchor {
    match index.per_class.get(class).filter(|v| !v.is_empty()) {
        Some(locations) => {
            let (image, pixel) = locations[rng.random_range(0..locations.len())];
            CropAnchor {
                image,
                row: pixel / index.width,
                col: pixel % index.width,
                fallback: false,
            }
        }
        None => CropAnchor {
            fallback: true,
            ..pick_uniform(index, rng)
        },
    }
}

/// Uniform image, uniform position.
pub fn pick_uniform<R: Rng + ?Sized>(index: &DatasetIndex, rng: &mut R) -> CropAnchor {
    let image = index.images[rng.random_range(0..index.images.len())];
    CropAnchor {
        image,
        row: rng.random_range(0..index.height),
        col: rng.random_range(0..index.width),
        fallback: false,
    }
}

/// Window of `crop_h x crop_w` centered on the anchor, clipped (not padded)
/// to the image bounds.
pub fn crop_window(anchor: &CropAnchor, crop_h: usize, crop_w: usize, height: usize, width: usize) -> CropWindow {
    let clip = |center: usize, size: usize, bound: usize| {
        let start = center.saturating_sub(size / 2);
        (start.min(bound), (start + size).min(bound))
    };
    let (row0, row1) = clip(anchor.row, crop_h, height);
    let (col0, col1) = clip(anchor.col, crop_w, width);
    CropWindow {
        row0,
        row1,
        col0,
        col1,
    }
}
