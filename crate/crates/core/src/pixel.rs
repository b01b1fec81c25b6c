//! Per-pixel softmax cross-entropy and the chain rule from a pooled loss back
//! to the logits.
//!
//! Ignored pixels never enter the loss vector, so the pooling budget `m`
//! resolves against the valid-pixel count and no weight mass lands on them.

use crate::error::{Error, Result};
use crate::losses::LossVector;

/// Logits, labels and validity mask for the pixels of one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct SegBatch {
    /// Row-major `[pixels x classes]`.
    logits: Vec<f64>,
    classes: usize,
    labels: Vec<usize>,
    valid: Vec<bool>,
}

impl SegBatch {
    pub fn new(logits: Vec<f64>, classes: usize, labels: Vec<usize>, valid: Vec<bool>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("classes", format!("need at least 2, got {classes}")));
        }
        let n = labels.len();
        if valid.len() != n {
            return Err(Error::LengthMismatch {
                what: "validity mask",
                expected: n,
                got: valid.len(),
            });
        }
        if logits.len() != n * classes {
            return Err(Error::LengthMismatch {
                what: "logits",
                expected: n * classes,
                got: logits.len(),
            });
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid("logits", "non-finite value"));
        }
        for (pixel, (&label, &ok)) in labels.iter().zip(&valid).enumerate() {
            if ok && label >= classes {
                return Err(Error::LabelOutOfRange {
                    pixel,
                    label,
                    classes,
                });
            }
        }
        Ok(Self {
            logits,
            classes,
            labels,
            valid,
        })
    }

    /// A batch in which every pixel is valid.
    pub fn all_valid(logits: Vec<f64>, classes: usize, labels: Vec<usize>) -> Result<Self> {
        let valid = vec![true; labels.len()];
        Self::new(logits, classes, labels, valid)
    }

    pub fn pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.logits[pixel * self.classes..(pixel + 1) * self.classes]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Losses of the valid pixels plus their logit derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLossResult {
    pub losses: LossVector,
    /// `valid_index_map[k]` is the pixel whose loss sits at `losses[k]`.
    pub valid_index_map: Vec<usize>,
    /// Row-major `[pixels x classes]`; rows of ignored pixels are zero.
    pub logit_grad: Vec<f64>,
    pub classes: usize,
}

impl PixelLossResult {
    pub fn pixels(&self) -> usize {
        self.logit_grad.len() / self.classes
    }
}

/// Softmax cross-entropy `-log softmax(z)[y]` for each valid pixel, with
/// gradient `softmax(z) - onehot(y)`.
pub fn softmax_xent(batch: &SegBatch) -> Result<PixelLossResult> {
    let c = batch.classes;
    let n = batch.pixels();
    let mut losses = Vec::with_capacity(batch.valid_count());
    let mut index_map = Vec::with_capacity(losses.capacity());
    let mut grad = vec![0.0; n * c];
    let mut probs = vec![0.0; c];
    for u in 0..n {
        if !batch.valid[u] {
            continue;
        }
        let row = batch.row(u);
        let y = batch.labels[u];
        let (top, zmax) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, z)| if z > acc.1 { (k, z) } else { acc });
        // log-sum-exp = zmax + ln(1 + sum_{k != top} exp(z_k - zmax))
        let mut rest = 0.0;
        for (k, (&z, p)) in row.iter().zip(probs.iter_mut()).enumerate() {
            *p = (z - zmax).exp();
            if k != top {
                rest += *p;
            }
        }
        let norm = 1.0 + rest;
        losses.push((zmax - row[y]) + rest.ln_1p());
        index_map.push(u);
        let g = &mut grad[u * c..(u + 1) * c];
        for (gk, p) in g.iter_mut().zip(&probs) {
            *gk = p / norm;
        }
        g[y] -= 1.0;
    }
    if losses.is_empty() {
        return Err(Error::NoValidPixels);
    }
    Ok(PixelLossResult {
        losses: LossVector::new(losses)?,
        valid_index_map: index_map,
        logit_grad: grad,
        classes: c,
    })
}

/// Chains per-loss weights (the gradient of the reduced loss with respect to
/// each valid pixel loss) back to the logits.
pub fn backprop_pooled(result: &PixelLossResult, pooled_weights: &[f64]) -> Result<Vec<f64>> {
    if pooled_weights.len() != result.losses.len() {
        return Err(Error::LengthMismatch {
            what: "pooled weights",
            expected: result.losses.len(),
            got: pooled_weights.len(),
        });
    }
    let c = result.classes;
    let mut out = vec![0.0; result.logit_grad.len()];
    for (&u, &w) in result.valid_index_map.iter().zip(pooled_weights) {
        let src = &result.logit_grad[u * c..(u + 1) * c];
        for (o, g) in out[u * c..(u + 1) * c].iter_mut().zip(src) {
            *o = w * g;
        }
    }
    Ok(out)
}
