use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::check_arrays;
use super::features::{patch_into, patch_len};
use crate::error::{Error, Result};
use crate::imagery::{ChannelImage, Dataset};

/// Stored reference windows and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnParams {
    /// `samples x dims`, row-major.
    pub patches: Vec<f32>,
    pub labels: Vec<f32>,
}

/// Keeps at most `max_samples` windows split evenly over the classes present;
/// classes with fewer pixels than their share contribute all of them.
pub(super) fn fit(
    data: &Dataset,
    radius: usize,
    _k: usize,
    max_samples: usize,
    seed: u64,
) -> KnnParams {
    let classes = data.classes();
    let pixels = data.width() * data.height();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in data.items().iter().enumerate() {
        for (p, &l) in s.mask.labels().iter().enumerate() {
            by_class[l as usize].push(i * pixels + p);
        }
    }
    let present = by_class.iter().filter(|v| !v.is_empty()).count().max(1);
    let quota = if max_samples == 0 {
        usize::MAX
    } else {
        max_samples.div_ceil(present)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for members in &by_class {
        if members.len() <= quota {
            chosen.extend_from_slice(members);
        } else {
            let idx = rand::seq::index::sample(&mut rng, members.len(), quota);
            chosen.extend(idx.iter().map(|i| members[i]));
        }
    }
    chosen.sort_unstable();

    let dims = patch_len(data.channels(), radius);
    let mut patches = Vec::with_capacity(chosen.len() * dims);
    let mut labels = Vec::with_capacity(chosen.len());
    let mut buf = Vec::with_capacity(dims);
    for &g in &chosen {
        let s = data.item(g / pixels);
        let p = g % pixels;
        patch_into(&s.image, p % s.image.width(), p / s.image.width(), radius, &mut buf);
        patches.extend_from_slice(&buf);
        labels.push(s.mask.labels()[p] as f32);
    }
    KnnParams { patches, labels }
}

impl KnnParams {
    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    /// Vote fractions among the `k` nearest windows (squared Euclidean).
    /// Equal distances resolve to the earlier stored window.
    pub(super) fn scores(
        &self,
        image: &ChannelImage,
        radius: usize,
        k: usize,
        classes: usize,
    ) -> Vec<f64> {
        let n = self.samples();
        let dims = if n == 0 { 0 } else { self.patches.len() / n };
        let k = k.min(n).max(1);
        let mut out = vec![0f64; image.pixels() * classes];
        let mut buf = Vec::with_capacity(dims);
        // (distance, index) sorted ascending, at most k long
        let mut best: Vec<(f32, usize)> = Vec::with_capacity(k + 1);
        for y in 0..image.height() {
            for x in 0..image.width() {
                let p = y * image.width() + x;
                let row = &mut out[p * classes..(p + 1) * classes];
                if n == 0 {
                    row.iter_mut().for_each(|v| *v = 1.0 / classes as f64);
                    continue;
                }
                patch_into(image, x, y, radius, &mut buf);
                best.clear();
                for s in 0..n {
                    let reference = &self.patches[s * dims..(s + 1) * dims];
                    let bound = if best.len() == k { best[k - 1].0 } else { f32::INFINITY };
                    let mut d = 0f32;
                    for (a, b) in buf.iter().zip(reference) {
                        let t = a - b;
                        d += t * t;
                    }
                    if d < bound {
                        let at = best.partition_point(|&(bd, _)| bd <= d);
                        best.insert(at, (d, s));
                        best.truncate(k);
                    }
                }
                for &(_, s) in &best {
                    row[self.labels[s] as usize] += 1.0 / best.len() as f64;
                }
            }
        }
        out
    }

    pub(super) fn to_arrays(&self) -> Vec<Vec<f32>> {
        vec![self.patches.clone(), self.labels.clone()]
    }

    pub(super) fn from_arrays(arrays: Vec<Vec<f32>>) -> Result<Self> {
        check_arrays(&arrays, 2, "knnPatch")?;
        let mut it = arrays.into_iter();
        let (patches, labels) = (it.next().unwrap(), it.next().unwrap());
        let ok = if labels.is_empty() {
            patches.is_empty()
        } else {
            patches.len() % labels.len() == 0
        };
        if !ok {
            return Err(Error::invalid("model", "knnPatch array sizes disagree"));
        }
        Ok(Self { patches, labels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{LabelImage, Sample};

    #[test]
    fn stratified_quota_keeps_small_classes() {
        let labels: Vec<u8> = (0..100).map(|p| (p < 5) as u8).collect();
        let s = Sample {
            stem: "a".into(),
            image: ChannelImage::new(10, 10, 1, (0..100).map(|p| p as f32 / 100.0).collect())
                .unwrap(),
            mask: LabelImage::new(10, 10, labels).unwrap(),
        };
        let data = Dataset::new("a", 2, vec![s]).unwrap();
        let p = fit(&data, 0, 1, 20, 3);
        assert_eq!(p.samples(), 15);
        assert_eq!(p.labels.iter().filter(|&&l| l == 1.0).count(), 5);
    }

    #[test]
    fn ties_pick_earlier_window() {
        let p = KnnParams {
            patches: vec![0.5, 0.5],
            labels: vec![1.0, 0.0],
        };
        let img = ChannelImage::new(1, 1, 1, vec![0.5]).unwrap();
        let s = p.scores(&img, 0, 1, 2);
        assert_eq!(s, vec![0.0, 1.0]);
    }
}
