use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::value_and_mean;
use super::{check_arrays, softmax};
use crate::error::{Error, Result};
use crate::imagery::{ChannelImage, Dataset};

/// Multinomial logistic regression over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    pub feature_mean: Vec<f32>,
    pub feature_scale: Vec<f32>,
    /// `classes x (dims + 1)`, bias last.
    pub weights: Vec<f32>,
}

pub(super) fn fit(
    data: &Dataset,
    radius: usize,
    learning_rate: f64,
    epochs: usize,
    max_samples: usize,
    seed: u64,
) -> Result<LogisticParams> {
    let classes = data.classes();
    let dims = 2 * data.channels();
    let pixels = data.width() * data.height();
    let total = pixels * data.len();

    let mut picked: Vec<usize> = if max_samples == 0 || max_samples >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, total, max_samples).into_vec()
    };
    picked.sort_unstable();

    let mut x = Vec::with_capacity(picked.len() * dims);
    let mut y = Vec::with_capacity(picked.len());
    let mut cursor = 0;
    for (i, s) in data.items().iter().enumerate() {
        let lo = i * pixels;
        let hi = lo + pixels;
        if cursor >= picked.len() || picked[cursor] >= hi {
            continue;
        }
        let f = value_and_mean(&s.image, radius);
        while cursor < picked.len() && picked[cursor] < hi {
            let p = picked[cursor] - lo;
            x.extend_from_slice(f.row(p));
            y.push(s.mask.labels()[p] as usize);
            cursor += 1;
        }
    }
    let n = y.len();

    let mut mean = vec![0f64; dims];
    let mut scale = vec![0f64; dims];
    for row in x.chunks_exact(dims) {
        for j in 0..dims {
            mean[j] += row[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in x.chunks_exact(dims) {
        for j in 0..dims {
            let d = row[j] - mean[j];
            scale[j] += d * d;
        }
    }
    for s in scale.iter_mut() {
        let sd = (*s / n as f64).sqrt();
        *s = if sd > 1e-12 { sd } else { 1.0 };
    }
    // Round the standardization to f32 so training sees what inference will.
    let mean: Vec<f64> = mean.iter().map(|&v| v as f32 as f64).collect();
    let scale: Vec<f64> = scale.iter().map(|&v| v as f32 as f64).collect();
    for row in x.chunks_exact_mut(dims) {
        for j in 0..dims {
            row[j] = (row[j] - mean[j]) / scale[j];
        }
    }

    let stride = dims + 1;
    let mut w = vec![0f64; classes * stride];
    let mut grad = vec![0f64; classes * stride];
    let mut prob = vec![0f64; classes];
    for _ in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, &label) in x.chunks_exact(dims).zip(&y) {
            for m in 0..classes {
                let wm = &w[m * stride..(m + 1) * stride];
                prob[m] = wm[dims] + row.iter().zip(wm).map(|(a, b)| a * b).sum::<f64>();
            }
            softmax(&mut prob);
            for m in 0..classes {
                let err = prob[m] - (label == m) as u8 as f64;
                let gm = &mut grad[m * stride..(m + 1) * stride];
                for j in 0..dims {
                    gm[j] += err * row[j];
                }
                gm[dims] += err;
            }
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= learning_rate * gi / n as f64;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("logistic weights diverged".into()));
    }
    Ok(LogisticParams {
        feature_mean: mean.iter().map(|&v| v as f32).collect(),
        feature_scale: scale.iter().map(|&v| v as f32).collect(),
        weights: w.iter().map(|&v| v as f32).collect(),
    })
}

impl LogisticParams {
    pub(super) fn scores(&self, image: &ChannelImage, radius: usize) -> Vec<f64> {
        let dims = self.feature_mean.len();
        let stride = dims + 1;
        let classes = self.weights.len() / stride;
        let f = value_and_mean(image, radius);
        let mut out = vec![0f64; image.pixels() * classes];
        let mut z = vec![0f64; dims];
        for p in 0..image.pixels() {
            for (j, v) in f.row(p).iter().enumerate() {
                z[j] = (v - self.feature_mean[j] as f64) / self.feature_scale[j] as f64;
            }
            let row = &mut out[p * classes..(p + 1) * classes];
            for (m, slot) in row.iter_mut().enumerate() {
                let wm = &self.weights[m * stride..(m + 1) * stride];
                *slot = wm[dims] as f64
                    + z.iter().zip(wm).map(|(a, &b)| a * b as f64).sum::<f64>();
            }
            softmax(row);
        }
        out
    }

    pub(super) fn to_arrays(&self) -> Vec<Vec<f32>> {
        vec![
            self.feature_mean.clone(),
            self.feature_scale.clone(),
            self.weights.clone(),
        ]
    }

    pub(super) fn from_arrays(arrays: Vec<Vec<f32>>, classes: usize) -> Result<Self> {
        check_arrays(&arrays, 3, "logisticPixel")?;
        let mut it = arrays.into_iter();
        let (feature_mean, feature_scale, weights) =
            (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        if feature_mean.len() != feature_scale.len()
            || weights.len() != classes * (feature_mean.len() + 1)
        {
            return Err(Error::invalid("model", "logisticPixel array sizes disagree"));
        }
        Ok(Self {
            feature_mean,
            feature_scale,
            weights,
        })
    }
}
