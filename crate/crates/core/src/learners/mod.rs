//! Segmentation algorithms.
//!
//! A [`Learner`] turns a [`Dataset`] into a model implementing [`Segment`],
//! which maps an image to per-class probability planes. [`SegmenterSpec`] is
//! the concrete, serializable learner used by the ensemble; it covers three
//! self-contained reference learners and a file-backed learner that replays
//! probability maps produced elsewhere.

mod external;
pub mod features;
mod knn;
mod logistic;
mod naive_bayes;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{read_file, write_file, ChannelImage, Dataset, ProbMapSet};

pub use knn::KnnParams;
pub use logistic::LogisticParams;
pub use naive_bayes::NaiveBayesParams;

/// Output probabilities are clipped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before
/// renormalization.
pub const PROB_FLOOR: f64 = 1e-6;

pub const MODEL_MAGIC: [u8; 4] = *b"SMDL";
pub const MODEL_VERSION: u32 = 1;

pub trait Learner: Sync {
    type Model: Segment + Send;

    fn learn(&self, data: &Dataset) -> Result<Self::Model>;
}

pub trait Segment: Sync {
    fn input_channels(&self) -> usize;

    /// Probability planes for `image`. `stem` identifies the image for
    /// learners that key precomputed output by name.
    fn segment(&self, image: &ChannelImage, stem: &str) -> Result<ProbMapSet>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum SegmenterKind {
    /// Per-class Gaussian over window mean and variance of each channel.
    #[serde(rename_all = "camelCase")]
    NaiveBayesPatch {
        #[serde(default = "default_radius")]
        radius: usize,
    },
    /// Multinomial logistic regression on pixel value and window mean.
    #[serde(rename_all = "camelCase")]
    LogisticPixel {
        #[serde(default = "default_radius")]
        radius: usize,
        #[serde(default = "default_learning_rate")]
        learning_rate: f64,
        #[serde(default = "default_epochs")]
        epochs: usize,
        /// Training pixels drawn per fit; 0 uses every pixel.
        #[serde(default = "default_logistic_samples")]
        max_samples: usize,
    },
    /// k-nearest neighbours over raw windows of a class-stratified pixel sample.
    #[serde(rename_all = "camelCase")]
    KnnPatch {
        #[serde(default = "default_radius")]
        radius: usize,
        #[serde(default = "default_k")]
        k: usize,
        /// Stored reference windows; 0 keeps every training pixel.
        #[serde(default = "default_knn_samples")]
        max_samples: usize,
    },
    /// Replays `<dir>/<stem>.pmap` files.
    #[serde(rename_all = "camelCase")]
    External { dir: PathBuf },
}

fn default_radius() -> usize {
    1
}
fn default_learning_rate() -> f64 {
    0.5
}
fn default_epochs() -> usize {
    200
}
fn default_logistic_samples() -> usize {
    16384
}
fn default_k() -> usize {
    5
}
fn default_knn_samples() -> usize {
    600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterSpec {
    #[serde(flatten)]
    pub kind: SegmenterKind,
    #[serde(default)]
    pub seed: u64,
}

impl SegmenterSpec {
    pub fn naive_bayes(radius: usize) -> Self {
        Self {
            kind: SegmenterKind::NaiveBayesPatch { radius },
            seed: 0,
        }
    }

    pub fn logistic(radius: usize) -> Self {
        Self {
            kind: SegmenterKind::LogisticPixel {
                radius,
                learning_rate: default_learning_rate(),
                epochs: default_epochs(),
                max_samples: default_logistic_samples(),
            },
            seed: 0,
        }
    }

    pub fn knn(radius: usize, k: usize) -> Self {
        Self {
            kind: SegmenterKind::KnnPatch {
                radius,
                k,
                max_samples: default_knn_samples(),
            },
            seed: 0,
        }
    }

    pub fn external(dir: impl Into<PathBuf>) -> Self {
        Self {
            kind: SegmenterKind::External { dir: dir.into() },
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The three reference learners with default settings.
    pub fn reference_set() -> Vec<SegmenterSpec> {
        vec![
            Self::naive_bayes(1),
            Self::logistic(1),
            Self::knn(1, default_k()),
        ]
    }

    /// Short display name, e.g. `knnPatch`.
    pub fn label(&self) -> &'static str {
        match self.kind {
            SegmenterKind::NaiveBayesPatch { .. } => "naiveBayesPatch",
            SegmenterKind::LogisticPixel { .. } => "logisticPixel",
            SegmenterKind::KnnPatch { .. } => "knnPatch",
            SegmenterKind::External { .. } => "external",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            SegmenterKind::LogisticPixel {
                learning_rate,
                epochs,
                ..
            } => {
                if *epochs < 1 {
                    return Err(Error::Hyperparameter("epochs must be >= 1".into()));
                }
                if !(learning_rate.is_finite() && *learning_rate > 0.0) {
                    return Err(Error::Hyperparameter(format!(
                        "learning rate {learning_rate} must be positive"
                    )));
                }
            }
            SegmenterKind::KnnPatch { k, .. } => {
                if *k < 1 {
                    return Err(Error::Hyperparameter("k must be >= 1".into()));
                }
            }
            SegmenterKind::NaiveBayesPatch { .. } | SegmenterKind::External { .. } => {}
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

impl Learner for SegmenterSpec {
    type Model = TrainedSegmenter;

    fn learn(&self, data: &Dataset) -> Result<TrainedSegmenter> {
        self.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset(data.name().to_string()));
        }
        let params = match &self.kind {
            SegmenterKind::NaiveBayesPatch { radius } => {
                Params::NaiveBayes(naive_bayes::fit(data, *radius))
            }
            SegmenterKind::LogisticPixel {
                radius,
                learning_rate,
                epochs,
                max_samples,
            } => Params::Logistic(logistic::fit(
                data,
                *radius,
                *learning_rate,
                *epochs,
                *max_samples,
                self.seed,
            )?),
            SegmenterKind::KnnPatch {
                radius,
                k,
                max_samples,
            } => Params::Knn(knn::fit(data, *radius, *k, *max_samples, self.seed)),
            SegmenterKind::External { .. } => Params::External,
        };
        Ok(TrainedSegmenter {
            spec: self.clone(),
            input_channels: data.channels(),
            classes: data.classes(),
            params,
        })
    }
}

/// Learned state, stored as `f32` so persisted models reload bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    NaiveBayes(NaiveBayesParams),
    Logistic(LogisticParams),
    Knn(KnnParams),
    External,
}

impl Params {
    fn to_arrays(&self) -> Vec<Vec<f32>> {
        match self {
            Params::NaiveBayes(p) => p.to_arrays(),
            Params::Logistic(p) => p.to_arrays(),
            Params::Knn(p) => p.to_arrays(),
            Params::External => Vec::new(),
        }
    }

    fn from_arrays(kind: &SegmenterKind, arrays: Vec<Vec<f32>>, classes: usize) -> Result<Self> {
        Ok(match kind {
            SegmenterKind::NaiveBayesPatch { .. } => {
                Params::NaiveBayes(NaiveBayesParams::from_arrays(arrays, classes)?)
            }
            SegmenterKind::LogisticPixel { .. } => {
                Params::Logistic(LogisticParams::from_arrays(arrays, classes)?)
            }
            SegmenterKind::KnnPatch { .. } => Params::Knn(KnnParams::from_arrays(arrays)?),
            SegmenterKind::External { .. } => Params::External,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSegmenter {
    spec: SegmenterSpec,
    input_channels: usize,
    classes: usize,
    params: Params,
}

impl TrainedSegmenter {
    pub fn spec(&self) -> &SegmenterSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// `SMDL | version | json len | spec json | channels | classes | arrays`,
    /// integers u32 little-endian, each array a u32 length then binary32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let json = self.spec.to_canonical_json();
        let arrays = self.params.to_arrays();
        let mut out = Vec::new();
        out.extend_from_slice(&MODEL_MAGIC);
        put_u32(&mut out, MODEL_VERSION);
        put_u32(&mut out, json.len() as u32);
        out.extend_from_slice(json.as_bytes());
        put_u32(&mut out, self.input_channels as u32);
        put_u32(&mut out, self.classes as u32);
        put_u32(&mut out, arrays.len() as u32);
        for a in &arrays {
            put_u32(&mut out, a.len() as u32);
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic {
                what: "model",
                expected: MODEL_MAGIC,
                found: magic,
            });
        }
        let version = cur.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "model",
                version,
            });
        }
        let json_len = cur.u32()? as usize;
        let spec: SegmenterSpec =
            serde_json::from_slice(cur.take(json_len)?).map_err(|e| {
                Error::invalid("model", format!("spec json: {e}"))
            })?;
        let input_channels = cur.u32()? as usize;
        let classes = cur.u32()? as usize;
        let count = cur.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let raw = cur.take(len.checked_mul(4).ok_or_else(|| {
                Error::DimensionOverflow(format!("array of {len} values"))
            })?)?;
            arrays.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        if cur.pos != bytes.len() {
            return Err(Error::invalid(
                "model",
                format!("{} trailing bytes", bytes.len() - cur.pos),
            ));
        }
        let params = Params::from_arrays(&spec.kind, arrays, classes)?;
        Ok(Self {
            spec,
            input_channels,
            classes,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))
    }
}

impl Segment for TrainedSegmenter {
    fn input_channels(&self) -> usize {
        self.input_channels
    }

    fn segment(&self, image: &ChannelImage, stem: &str) -> Result<ProbMapSet> {
        if image.channels() != self.input_channels {
            return Err(Error::ChannelMismatch {
                expected: self.input_channels,
                got: image.channels(),
            });
        }
        match (&self.params, &self.spec.kind) {
            (Params::NaiveBayes(p), SegmenterKind::NaiveBayesPatch { radius }) => {
                finalize(image, self.classes, p.scores(image, *radius))
            }
            (Params::Logistic(p), SegmenterKind::LogisticPixel { radius, .. }) => {
                finalize(image, self.classes, p.scores(image, *radius))
            }
            (Params::Knn(p), SegmenterKind::KnnPatch { radius, k, .. }) => {
                finalize(image, self.classes, p.scores(image, *radius, *k, self.classes))
            }
            (Params::External, SegmenterKind::External { dir }) => {
                external::replay(dir, stem, image, self.classes)
            }
            _ => Err(Error::invalid("model", "parameters do not match spec kind")),
        }
    }
}

/// Clips pixel-major probabilities to `[PROB_FLOOR, 1 - PROB_FLOOR]`,
/// renormalizes, and lays them out as planes.
fn finalize(image: &ChannelImage, classes: usize, probs: Vec<f64>) -> Result<ProbMapSet> {
    let n = image.pixels();
    debug_assert_eq!(probs.len(), n * classes);
    let mut planes = vec![0f32; n * classes];
    for p in 0..n {
        let row = &probs[p * classes..(p + 1) * classes];
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("segmenter output"));
        }
        let clipped: Vec<f64> = row
            .iter()
            .map(|v| v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
            .collect();
        let sum: f64 = clipped.iter().sum();
        for (m, v) in clipped.iter().enumerate() {
            planes[m * n + p] = (v / sum) as f32;
        }
    }
    ProbMapSet::new(image.width(), image.height(), classes, planes)
}

/// Numerically stable softmax of `scores` in place.
fn softmax(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        let u = 1.0 / scores.len() as f64;
        scores.iter_mut().for_each(|s| *s = u);
        return;
    }
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    scores.iter_mut().for_each(|s| *s /= sum);
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn check_arrays(arrays: &[Vec<f32>], want: usize, kind: &str) -> Result<()> {
    if arrays.len() != want {
        return Err(Error::invalid(
            "model",
            format!("{kind} expects {want} arrays, found {}", arrays.len()),
        ));
    }
    Ok(())
}
