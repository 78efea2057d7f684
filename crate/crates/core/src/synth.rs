//! Deterministic synthetic segmentation data: random ellipses and convex
//! polygons, one color and texture per class, over a textured and noisy
//! background. Pixel values are quantized to 8 bits so that an in-memory
//! dataset and its PNG round trip are identical.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::imagery::{save_mask, ChannelImage, Dataset, LabelImage, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub seed: u64,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
    /// Shapes drawn per foreground class, inclusive range.
    pub shapes_per_class: (usize, usize),
    /// Shape radius as a fraction of the shorter image side.
    pub radius: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 60,
            width: 64,
            height: 64,
            classes: 3,
            seed: 7,
            noise: 0.18,
            shapes_per_class: (1, 2),
            radius: (0.12, 0.22),
        }
    }
}

impl SynthConfig {
    pub fn new(count: usize, width: usize, height: usize, classes: usize, seed: u64) -> Self {
        Self {
            count,
            width,
            height,
            classes,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Hyperparameter("image count must be at least 1".into()));
        }
        if !(2..=256).contains(&self.classes) {
            return Err(Error::Hyperparameter(format!(
                "class count {} outside 2..=256",
                self.classes
            )));
        }
        if self.width < 4 || self.height < 4 {
            return Err(Error::Hyperparameter(format!(
                "image size {}x{} below 4x4",
                self.width, self.height
            )));
        }
        let (lo, hi) = self.shapes_per_class;
        if lo > hi {
            return Err(Error::Hyperparameter(format!("shape count range {lo}..={hi} is empty")));
        }
        let (rlo, rhi) = self.radius;
        if !(rlo > 0.0 && rlo <= rhi && rhi <= 1.0) {
            return Err(Error::Hyperparameter(format!("radius range {rlo}..{rhi} invalid")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Hyperparameter(format!("noise {} invalid", self.noise)));
        }
        Ok(())
    }

    pub fn stem(&self, i: usize) -> String {
        format!("img{i:04}")
    }
}

/// Appearance of one class.
#[derive(Debug, Clone, Copy)]
struct Style {
    color: [f64; 3],
    /// Amplitude and spatial frequency of the sinusoidal texture.
    texture: (f64, f64),
}

fn style(class: usize) -> Style {
    const FIXED: [[f64; 3]; 4] = [
        [0.42, 0.40, 0.36],
        [0.70, 0.38, 0.32],
        [0.36, 0.52, 0.70],
        [0.42, 0.66, 0.38],
    ];
    let color = FIXED.get(class).copied().unwrap_or_else(|| {
        let hue = (class as f64 * 0.618_034).fract() * 2.0 * PI;
        [
            0.5 + 0.2 * hue.cos(),
            0.5 + 0.2 * (hue + 2.0 * PI / 3.0).cos(),
            0.5 + 0.2 * (hue + 4.0 * PI / 3.0).cos(),
        ]
    });
    Style {
        color,
        texture: (0.06, 0.25 + 0.35 * (class % 4) as f64),
    }
}

enum Shape {
    Ellipse { cx: f64, cy: f64, a: f64, b: f64, cos: f64, sin: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Shape {
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let side = w.min(h);
        let r = side * rng.random_range(cfg.radius.0..=cfg.radius.1);
        let cx = rng.random_range(0.1 * w..=0.9 * w);
        let cy = rng.random_range(0.1 * h..=0.9 * h);
        if rng.random_bool(0.5) {
            let theta = rng.random_range(0.0..PI);
            Shape::Ellipse {
                cx,
                cy,
                a: r,
                b: r * rng.random_range(0.55..=1.0),
                cos: theta.cos(),
                sin: theta.sin(),
            }
        } else {
            let n = rng.random_range(3..=6usize);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            angles.sort_by(f64::total_cmp);
            let vertices = angles
                .into_iter()
                .map(|t| {
                    let rr = r * rng.random_range(0.8..=1.25);
                    (cx + rr * t.cos(), cy + rr * t.sin())
                })
                .collect();
            Shape::Polygon { vertices }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipse { cx, cy, a, b, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Polygon { vertices } => {
                let mut inside = false;
                let mut j = vertices.len() - 1;
                for i in 0..vertices.len() {
                    let (xi, yi) = vertices[i];
                    let (xj, yj) = vertices[j];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders image `i` as 8-bit RGB (interleaved) plus its mask.
fn render(cfg: &SynthConfig, i: usize) -> (Vec<u8>, LabelImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let (w, h) = (cfg.width, cfg.height);
    let mut labels = vec![0u8; w * h];
    for class in 1..cfg.classes {
        let count = rng.random_range(cfg.shapes_per_class.0..=cfg.shapes_per_class.1);
        for _ in 0..count {
            let shape = Shape::random(&mut rng, cfg);
            for y in 0..h {
                for x in 0..w {
                    if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        labels[y * w + x] = class as u8;
                    }
                }
            }
        }
    }

    let gain = rng.random_range(0.92..=1.08);
    let phases: Vec<(f64, f64)> = (0..cfg.classes)
        .map(|_| (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let noise = Normal::new(0.0, cfg.noise).expect("noise validated");
    let mut rgb = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let class = labels[y * w + x] as usize;
            let s = style(class);
            let (px, py) = phases[class];
            let (amp, freq) = s.texture;
            let tex = amp * (freq * x as f64 + px).sin() * (freq * y as f64 + py).sin();
            for c in 0..3 {
                let v = gain * s.color[c] + tex + noise.sample(&mut rng);
                rgb[(y * w + x) * 3 + c] = quantize(v);
            }
        }
    }
    (rgb, LabelImage::new(w, h, labels).expect("mask matches dimensions"))
}

fn to_channels(w: usize, h: usize, rgb: &[u8]) -> ChannelImage {
    let n = w * h;
    let mut data = vec![0f32; n * 3];
    for p in 0..n {
        for c in 0..3 {
            data[c * n + p] = rgb[p * 3 + c] as f32 / 255.0;
        }
    }
    ChannelImage::new(w, h, 3, data).expect("8-bit values are in range")
}

/// Builds the dataset in memory.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let items = exec::map_range(cfg.count, |i| {
        let (rgb, mask) = render(cfg, i);
        Sample {
            stem: cfg.stem(i),
            image: to_channels(cfg.width, cfg.height, &rgb),
            mask,
        }
    });
    Dataset::new(format!("synth-{}", cfg.seed), cfg.classes, items)
}

/// Writes `images/<stem>.png` (RGB) and `masks/<stem>.png` (class indices)
/// under `root`.
pub fn write(cfg: &SynthConfig, root: &Path) -> Result<()> {
    cfg.validate()?;
    let images = root.join("images");
    let masks = root.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    exec::try_map_range(cfg.count, |i| {
        let (rgb, mask) = render(cfg, i);
        let stem = cfg.stem(i);
        let path = images.join(format!("{stem}.png"));
        RgbImage::from_raw(cfg.width as u32, cfg.height as u32, rgb)
            .expect("buffer matches dimensions")
            .save(&path)
            .map_err(|source| Error::Image { path, source })?;
        save_mask(&masks.join(format!("{stem}.png")), &mask)
    })?;
    Ok(())
}

/// Fraction of all pixels carrying each class.
pub fn class_frequencies(data: &Dataset) -> Vec<f64> {
    let mut counts = vec![0u64; data.classes()];
    let mut total = 0u64;
    for s in data.items() {
        for &l in s.mask.labels() {
            counts[l as usize] += 1;
        }
        total += s.mask.len() as u64;
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}
