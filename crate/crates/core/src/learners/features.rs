//! Per-pixel feature extraction with clamp-to-edge borders.

use crate::imagery::ChannelImage;

/// Mean of each `(2r+1)^2` window, clamping coordinates at the border.
pub fn box_mean(plane: &[f32], width: usize, height: usize, radius: usize) -> Vec<f64> {
    box_filter(plane, width, height, radius, |v| v as f64)
}

/// Window mean of squared values.
pub fn box_mean_sq(plane: &[f32], width: usize, height: usize, radius: usize) -> Vec<f64> {
    box_filter(plane, width, height, radius, |v| (v as f64) * (v as f64))
}

fn box_filter(
    plane: &[f32],
    width: usize,
    height: usize,
    radius: usize,
    f: impl Fn(f32) -> f64,
) -> Vec<f64> {
    let r = radius as isize;
    let span = (2 * radius + 1) as f64;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

    let mut horiz = vec![0f64; width * height];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut s = 0.0;
            for dx in -r..=r {
                s += f(row[clamp(x as isize + dx, width)]);
            }
            horiz[y * width + x] = s;
        }
    }
    let mut out = vec![0f64; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for dy in -r..=r {
                s += horiz[clamp(y as isize + dy, height) * width + x];
            }
            out[y * width + x] = s / (span * span);
        }
    }
    out
}

/// Pixel-major feature matrix: `values[p * dims + j]`.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub dims: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.dims..(p + 1) * self.dims]
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.dims.max(1)
    }
}

fn interleave(planes: &[Vec<f64>], pixels: usize) -> FeatureMatrix {
    let dims = planes.len();
    let mut values = vec![0f64; pixels * dims];
    for (j, plane) in planes.iter().enumerate() {
        for (p, &v) in plane.iter().enumerate() {
            values[p * dims + j] = v;
        }
    }
    FeatureMatrix { dims, values }
}

/// Per channel: window mean and window variance.
pub fn mean_variance(image: &ChannelImage, radius: usize) -> FeatureMatrix {
    let (w, h) = (image.width(), image.height());
    let mut planes = Vec::with_capacity(2 * image.channels());
    for c in 0..image.channels() {
        let plane = image.plane(c);
        let mean = box_mean(plane, w, h, radius);
        let var = box_mean_sq(plane, w, h, radius)
            .into_iter()
            .zip(&mean)
            .map(|(sq, m)| (sq - m * m).max(0.0))
            .collect();
        planes.push(mean);
        planes.push(var);
    }
    interleave(&planes, image.pixels())
}

/// Per channel: the pixel value and its window mean.
pub fn value_and_mean(image: &ChannelImage, radius: usize) -> FeatureMatrix {
    let (w, h) = (image.width(), image.height());
    let mut planes = Vec::with_capacity(2 * image.channels());
    for c in 0..image.channels() {
        let plane = image.plane(c);
        planes.push(plane.iter().map(|&v| v as f64).collect());
        planes.push(box_mean(plane, w, h, radius));
    }
    interleave(&planes, image.pixels())
}

/// Raw `(2r+1)^2` window around `(x, y)` for every channel, clamped at the border.
/// Layout: channel-major, then window rows, then window columns.
pub fn patch_into(image: &ChannelImage, x: usize, y: usize, radius: usize, out: &mut Vec<f32>) {
    out.clear();
    let (w, h) = (image.width(), image.height());
    let r = radius as isize;
    for c in 0..image.channels() {
        let plane = image.plane(c);
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                out.push(plane[yy * w + xx]);
            }
        }
    }
}

pub fn patch_len(channels: usize, radius: usize) -> usize {
    channels * (2 * radius + 1) * (2 * radius + 1)
}
