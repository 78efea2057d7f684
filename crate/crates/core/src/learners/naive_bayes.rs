use super::features::mean_variance;
use super::{check_arrays, softmax};
use crate::error::{Error, Result};
use crate::imagery::{ChannelImage, Dataset};

/// Gaussian naive Bayes over window statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesParams {
    /// Pixel frequency of each class; 0 marks a class absent from training.
    pub priors: Vec<f32>,
    /// `classes x dims`, row-major.
    pub means: Vec<f32>,
    pub variances: Vec<f32>,
}

pub(super) fn fit(data: &Dataset, radius: usize) -> NaiveBayesParams {
    let classes = data.classes();
    let dims = 2 * data.channels();
    let mut count = vec![0f64; classes];
    let mut sum = vec![0f64; classes * dims];
    let mut sum_sq = vec![0f64; classes * dims];
    for s in data.items() {
        let f = mean_variance(&s.image, radius);
        for (p, &label) in s.mask.labels().iter().enumerate() {
            let m = label as usize;
            count[m] += 1.0;
            for (j, &v) in f.row(p).iter().enumerate() {
                sum[m * dims + j] += v;
                sum_sq[m * dims + j] += v * v;
            }
        }
    }
    let total: f64 = count.iter().sum();
    let mut means = vec![0f64; classes * dims];
    let mut variances = vec![0f64; classes * dims];
    for m in 0..classes {
        if count[m] == 0.0 {
            continue;
        }
        for j in 0..dims {
            let mu = sum[m * dims + j] / count[m];
            means[m * dims + j] = mu;
            variances[m * dims + j] = (sum_sq[m * dims + j] / count[m] - mu * mu).max(0.0);
        }
    }
    let floor = 1e-9 * variances.iter().copied().fold(0.0, f64::max) + 1e-6;
    NaiveBayesParams {
        priors: count.iter().map(|&c| (c / total) as f32).collect(),
        means: means.iter().map(|&v| v as f32).collect(),
        variances: variances.iter().map(|&v| (v + floor) as f32).collect(),
    }
}

impl NaiveBayesParams {
    pub(super) fn scores(&self, image: &ChannelImage, radius: usize) -> Vec<f64> {
        let classes = self.priors.len();
        let f = mean_variance(image, radius);
        let dims = f.dims;
        let log_norm: Vec<f64> = (0..classes)
            .map(|m| {
                (0..dims)
                    .map(|j| -0.5 * (2.0 * std::f64::consts::PI * self.variances[m * dims + j] as f64).ln())
                    .sum()
            })
            .collect();
        let mut out = vec![0f64; image.pixels() * classes];
        for p in 0..image.pixels() {
            let x = f.row(p);
            let row = &mut out[p * classes..(p + 1) * classes];
            for (m, slot) in row.iter_mut().enumerate() {
                if self.priors[m] <= 0.0 {
                    *slot = f64::NEG_INFINITY;
                    continue;
                }
                let mut ll = (self.priors[m] as f64).ln() + log_norm[m];
                for (j, &v) in x.iter().enumerate() {
                    let d = v - self.means[m * dims + j] as f64;
                    ll -= d * d / (2.0 * self.variances[m * dims + j] as f64);
                }
                *slot = ll;
            }
            softmax(row);
        }
        out
    }

    pub(super) fn to_arrays(&self) -> Vec<Vec<f32>> {
        vec![
            self.priors.clone(),
            self.means.clone(),
            self.variances.clone(),
        ]
    }

    pub(super) fn from_arrays(arrays: Vec<Vec<f32>>, classes: usize) -> Result<Self> {
        check_arrays(&arrays, 3, "naiveBayesPatch")?;
        let mut it = arrays.into_iter();
        let (priors, means, variances) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        if priors.len() != classes
            || means.len() != variances.len()
            || classes == 0
            || means.len() % classes != 0
        {
            return Err(Error::invalid("model", "naiveBayesPatch array sizes disagree"));
        }
        Ok(Self {
            priors,
            means,
            variances,
        })
    }
}
