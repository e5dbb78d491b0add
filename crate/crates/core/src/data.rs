//! In-memory datasets and the synthetic pattern generator.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::model::Network;
use crate::rng::Rng;
use crate::stats::top_k_hits;
use crate::tensor::Tensor;

/// Images `[N, C, H, W]` with one label in `[0, class_count)` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let [n, _, _, _] = images.dims4()?;
        if labels.len() != n {
            return Err(shape_err!("{} images but {} labels", n, labels.len()));
        }
        if class_count == 0 {
            return Err(invalid!("class count must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(invalid!("label {} out of range for {} classes", bad, class_count));
        }
        if !images.is_finite() {
            return Err(Error::NonFinite("dataset images".into()));
        }
        Ok(Self { images, labels, class_count })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = self.images.gather_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Self { images, labels, class_count: self.class_count })
    }

    /// Images and labels of rows `start..end`.
    pub fn batch(&self, start: usize, end: usize) -> Result<(Tensor, &[usize])> {
        let rows: Vec<usize> = (start..end.min(self.len())).collect();
        Ok((self.images.gather_rows(&rows)?, &self.labels[start..end.min(self.len())]))
    }

    /// Relative frequency of every class.
    pub fn class_frequencies(&self) -> Vec<f64> {
        let mut counts = alloc::vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.into_iter().map(|c| c as f64 / self.len() as f64).collect()
    }
}

/// Elementwise `(x − mean) / std`.
pub fn normalize(dataset: &Dataset, mean: f32, std: f32) -> Result<Dataset> {
    if !(std > 0.0 && std.is_finite()) || !mean.is_finite() {
        return Err(invalid!("normalization needs finite mean and std > 0, got {} and {}", mean, std));
    }
    let data = dataset.images.data().iter().map(|&x| (x - mean) / std).collect();
    let images = Tensor::new(dataset.images.shape().to_vec(), data)?;
    Dataset::new(images, dataset.labels.clone(), dataset.class_count)
}

/// Number of evaluation images scored per forward pass.
pub const EVAL_BATCH: usize = 128;

/// Top-k accuracy of `network` over `dataset` in evaluation mode.
pub fn evaluate(network: &Network, dataset: &Dataset, k: usize) -> Result<f64> {
    if dataset.image_shape() != network.input_shape() {
        return Err(shape_err!(
            "dataset images are {:?}, network expects {:?}",
            dataset.image_shape(),
            network.input_shape()
        ));
    }
    let mut hits = 0;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + EVAL_BATCH).min(dataset.len());
        let (batch, labels) = dataset.batch(start, end)?;
        hits += top_k_hits(&network.predict(&batch)?, labels, k)?;
        start = end;
    }
    Ok(hits as f64 / dataset.len() as f64)
}

/// Parameters of the synthetic classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    /// Training images per class.
    pub per_class: usize,
    /// Held-out images per class.
    pub test_per_class: usize,
    /// Side length of the square single-channel images.
    pub size: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { classes: 10, per_class: 200, test_per_class: 50, size: 16, noise: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplit {
    pub train: Dataset,
    pub test: Dataset,
}

/// Noise-free pattern for `class`: a Gaussian-profile bar through the
/// centre at angle `π·class/classes`.
pub fn class_template(class: usize, classes: usize, size: usize) -> Vec<f32> {
    let centre = (size as f64 - 1.0) / 2.0;
    let theta = core::f64::consts::PI * class as f64 / classes as f64;
    let (sin_t, cos_t) = (libm::sin(theta), libm::cos(theta));
    let width = (size as f64 / 16.0).max(0.75);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - centre, y as f64 - centre);
            // distance from the bar's axis
            let d = (dx * sin_t - dy * cos_t).abs() / width;
            out.push(libm::exp(-0.5 * d * d) as f32);
        }
    }
    out
}

/// Generates a balanced train/test pair. Samples cycle through the classes
/// (`label = i mod classes`), train samples first, each drawing its noise
/// from one stream seeded with `seed`.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<SyntheticSplit> {
    if spec.classes < 2 {
        return Err(invalid!("synthetic data needs at least 2 classes"));
    }
    if spec.per_class == 0 || spec.test_per_class == 0 || spec.size < 4 {
        return Err(invalid!("synthetic data needs per-class counts >= 1 and image size >= 4"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(invalid!("noise level must be finite and non-negative"));
    }
    let templates: Vec<Vec<f32>> = (0..spec.classes).map(|c| class_template(c, spec.classes, spec.size)).collect();
    let mut rng = Rng::from_seed(seed);
    let mut make = |count: usize| -> Result<Dataset> {
        let n = count * spec.classes;
        let pixels = spec.size * spec.size;
        let mut data = Vec::with_capacity(n * pixels);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % spec.classes;
            labels.push(class);
            for &t in &templates[class] {
                let noise = if spec.noise > 0.0 { spec.noise as f64 * rng.normal() } else { 0.0 };
                data.push((t as f64 + noise) as f32);
            }
        }
        Dataset::new(Tensor::new(alloc::vec![n, 1, spec.size, spec.size], data)?, labels, spec.classes)
    };
    let train = make(spec.per_class)?;
    let test = make(spec.test_per_class)?;
    Ok(SyntheticSplit { train, test })
}
