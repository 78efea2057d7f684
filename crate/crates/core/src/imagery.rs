//! Raster data model: label masks, multi-channel images, per-class
//! probability maps, and on-disk datasets.
//!
//! All rasters are row-major; multi-plane rasters are channel-planar, so
//! plane `c` occupies `data[c * w * h .. (c + 1) * w * h]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{ColorType, DynamicImage, GrayImage, ImageReader};

use crate::error::{Error, Result};

/// Tolerance on per-pixel probability sums.
pub const SUM_TOLERANCE: f64 = 1e-6;

pub const PMAP_MAGIC: [u8; 4] = *b"PMAP";
/// Version tag for normalized probability maps.
pub const PMAP_VERSION: u32 = 1;
/// Version tag for max-normalized class-membership dumps.
pub const PMAP_VERSION_MEMBERSHIP: u32 = 2;

const PMAP_HEADER_LEN: usize = 20;
/// Upper bound on the number of values a single map may hold.
const PMAP_MAX_VALUES: u64 = 1 << 31;

/// Per-pixel class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("label image", "zero dimension"));
        }
        if labels.len() != width * height {
            return Err(Error::invalid(
                "label image",
                format!("{} labels for {}x{}", labels.len(), width, height),
            ));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Result<Self> {
        Self::new(width, height, vec![label; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// First pixel whose label is `>= classes`, as `(x, y, label)`.
    pub fn find_overflow(&self, classes: usize) -> Option<(usize, usize, u8)> {
        self.labels
            .iter()
            .position(|&l| l as usize >= classes)
            .map(|i| (i % self.width, i / self.width, self.labels[i]))
    }

    pub fn same_shape(&self, other: &LabelImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Channel-planar raster of unit-interval intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ChannelImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid("channel image", "zero dimension"));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(
                "channel image",
                format!(
                    "{} values for {}x{}x{}",
                    data.len(),
                    width,
                    height,
                    channels
                ),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "channel image",
                format!("value {v} outside [0, 1]"),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[c * self.pixels() + y * self.width + x]
    }

    /// Reads an 8- or 16-bit PNG (gray or color) scaled to `[0, 1]`.
    /// Gray images yield one channel, color images three; alpha is dropped.
    pub fn load(path: &Path) -> Result<Self> {
        let img = open_image(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let gray = matches!(
            img.color(),
            ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16
        );
        let (channels, interleaved): (usize, Vec<f32>) = if gray {
            (1, img.to_luma32f().into_raw())
        } else {
            (3, img.to_rgb32f().into_raw())
        };
        let n = w * h;
        let mut data = vec![0f32; n * channels];
        for (i, px) in interleaved.chunks_exact(channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * n + i] = v.clamp(0.0, 1.0);
            }
        }
        Self::new(w, h, channels, data)
    }
}

/// Per-pixel class probabilities for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMapSet {
    width: usize,
    height: usize,
    classes: usize,
    planes: Vec<f32>,
}

impl ProbMapSet {
    /// Builds a map and checks the range and per-pixel sum invariants.
    pub fn new(width: usize, height: usize, classes: usize, planes: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || classes == 0 {
            return Err(Error::invalid("probability map", "zero dimension"));
        }
        let n = width * height;
        if planes.len() != n * classes {
            return Err(Error::invalid(
                "probability map",
                format!(
                    "{} values for {}x{} with {} classes",
                    planes.len(),
                    width,
                    height,
                    classes
                ),
            ));
        }
        for (i, &v) in planes.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    "probability map",
                    format!("value {v} at plane {} pixel {} outside [0, 1]", i / n, i % n),
                ));
            }
        }
        for p in 0..n {
            let sum: f64 = (0..classes).map(|m| planes[m * n + p] as f64).sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::invalid(
                    "probability map",
                    format!("pixel ({}, {}) sums to {sum}", p % width, p / width),
                ));
            }
        }
        Ok(Self {
            width,
            height,
            classes,
            planes,
        })
    }

    /// Same plane on every pixel, e.g. `uniform(w, h, &[0.5, 0.5])`.
    pub fn constant(width: usize, height: usize, probs: &[f32]) -> Result<Self> {
        let n = width * height;
        let planes = probs
            .iter()
            .flat_map(|&p| std::iter::repeat_n(p, n))
            .collect();
        Self::new(width, height, probs.len(), planes)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, m: usize) -> &[f32] {
        let n = self.pixels();
        &self.planes[m * n..(m + 1) * n]
    }

    pub fn planes(&self) -> &[f32] {
        &self.planes
    }

    pub fn get(&self, x: usize, y: usize, m: usize) -> f32 {
        self.planes[m * self.pixels() + y * self.width + x]
    }

    /// Per-pixel argmax; ties go to the lowest class index.
    pub fn argmax(&self) -> LabelImage {
        let n = self.pixels();
        let labels = (0..n)
            .map(|p| {
                let mut best = 0usize;
                for m in 1..self.classes {
                    if self.planes[m * n + p] > self.planes[best * n + p] {
                        best = m;
                    }
                }
                best as u8
            })
            .collect();
        LabelImage {
            width: self.width,
            height: self.height,
            labels,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_pmap(
            PMAP_VERSION,
            self.width,
            self.height,
            self.classes,
            &self.planes,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = RawPlanes::decode(bytes)?;
        if raw.version != PMAP_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "probability map",
                version: raw.version,
            });
        }
        Self::new(raw.width, raw.height, raw.classes, raw.values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
    }
}

/// Undecoded contents of a `PMAP` container, any version.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPlanes {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub values: Vec<f32>,
}

impl RawPlanes {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                expected: PMAP_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != PMAP_MAGIC {
            return Err(Error::BadMagic {
                what: "probability map",
                expected: PMAP_MAGIC,
                found: magic,
            });
        }
        if bytes.len() < PMAP_HEADER_LEN {
            return Err(Error::Truncated {
                expected: PMAP_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let (version, width, height, classes) = (word(1), word(2), word(3), word(4));
        if version != PMAP_VERSION && version != PMAP_VERSION_MEMBERSHIP {
            return Err(Error::UnsupportedVersion {
                what: "probability map",
                version,
            });
        }
        let count = width as u64 * height as u64 * classes as u64;
        if count > PMAP_MAX_VALUES {
            return Err(Error::DimensionOverflow(format!(
                "{width}x{height}x{classes} exceeds {PMAP_MAX_VALUES} values"
            )));
        }
        let count = count as usize;
        let expected = PMAP_HEADER_LEN + 4 * count;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::invalid(
                "probability map",
                format!("{} trailing bytes", bytes.len() - expected),
            ));
        }
        let values = bytes[PMAP_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            version,
            width: width as usize,
            height: height as usize,
            classes: classes as usize,
            values,
        })
    }
}

pub(crate) fn encode_pmap(
    version: u32,
    width: usize,
    height: usize,
    classes: usize,
    values: &[f32],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(PMAP_HEADER_LEN + 4 * values.len());
    out.extend_from_slice(&PMAP_MAGIC);
    for v in [version, width as u32, height as u32, classes as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Crisp indicator planes for a mask.
pub fn one_hot(mask: &LabelImage, classes: usize) -> Result<ProbMapSet> {
    if let Some((x, y, label)) = mask.find_overflow(classes) {
        return Err(Error::LabelOverflow {
            stem: String::new(),
            x,
            y,
            label: label as u32,
            classes,
        });
    }
    let n = mask.len();
    let mut planes = vec![0f32; n * classes];
    for (p, &l) in mask.labels().iter().enumerate() {
        planes[l as usize * n + p] = 1.0;
    }
    ProbMapSet::new(mask.width(), mask.height(), classes, planes)
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub stem: String,
    pub image: ChannelImage,
    pub mask: LabelImage,
}

/// Ordered collection of samples sharing one raster shape.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    classes: usize,
    items: Vec<Arc<Sample>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, classes: usize, items: Vec<Sample>) -> Result<Self> {
        Self::from_shared(name, classes, items.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(
        name: impl Into<String>,
        classes: usize,
        items: Vec<Arc<Sample>>,
    ) -> Result<Self> {
        let name = name.into();
        if classes < 2 || classes > 256 {
            return Err(Error::Hyperparameter(format!(
                "class count {classes} outside [2, 256]"
            )));
        }
        let Some(first) = items.first() else {
            return Err(Error::EmptyDataset(name));
        };
        let shape = (
            first.image.width(),
            first.image.height(),
            first.image.channels(),
        );
        for s in &items {
            let got = (s.image.width(), s.image.height(), s.image.channels());
            if got != shape {
                return Err(Error::DimensionMismatch(format!(
                    "`{}` is {}x{}x{}, dataset is {}x{}x{}",
                    s.stem, got.0, got.1, got.2, shape.0, shape.1, shape.2
                )));
            }
            if s.mask.width() != shape.0 || s.mask.height() != shape.1 {
                return Err(Error::DimensionMismatch(format!(
                    "mask of `{}` is {}x{}, image is {}x{}",
                    s.stem,
                    s.mask.width(),
                    s.mask.height(),
                    shape.0,
                    shape.1
                )));
            }
            if let Some((x, y, label)) = s.mask.find_overflow(classes) {
                return Err(Error::LabelOverflow {
                    stem: s.stem.clone(),
                    x,
                    y,
                    label: label as u32,
                    classes,
                });
            }
        }
        Ok(Self {
            name,
            classes,
            items,
        })
    }

    /// Loads `<root>/images/<stem>.png` paired with `<root>/masks/<stem>.png`.
    pub fn load(root: &Path, classes: usize) -> Result<Self> {
        let images = list_pngs(&root.join("images"))?;
        let masks = list_pngs(&root.join("masks"))?;
        if images.is_empty() {
            return Err(Error::EmptyDataset(root.display().to_string()));
        }
        if let Some(stem) = images
            .keys()
            .find(|s| !masks.contains_key(*s))
            .or_else(|| masks.keys().find(|s| !images.contains_key(*s)))
        {
            return Err(Error::UnpairedSample(stem.clone()));
        }
        let mut items = Vec::with_capacity(images.len());
        for (stem, image_path) in &images {
            let image = ChannelImage::load(image_path)?;
            let mask = load_mask(&masks[stem])?;
            if let Some((x, y, label)) = mask.find_overflow(classes) {
                return Err(Error::LabelOverflow {
                    stem: stem.clone(),
                    x,
                    y,
                    label: label as u32,
                    classes,
                });
            }
            items.push(Sample {
                stem: stem.clone(),
                image,
                mask,
            });
        }
        let name = root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| root.display().to_string());
        Self::new(name, classes, items)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Arc<Sample>] {
        &self.items
    }

    pub fn item(&self, i: usize) -> &Sample {
        &self.items[i]
    }

    pub fn width(&self) -> usize {
        self.items[0].image.width()
    }

    pub fn height(&self) -> usize {
        self.items[0].image.height()
    }

    pub fn channels(&self) -> usize {
        self.items[0].image.channels()
    }

    /// Items at `indices`, in that order. Samples are shared, not copied.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::from_shared(
            self.name.clone(),
            self.classes,
            indices.iter().map(|&i| Arc::clone(&self.items[i])).collect(),
        )
    }
}

/// `stem -> path` for every `.png` directly under `dir`.
pub fn list_pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png || !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem() {
            out.insert(stem.to_string_lossy().into_owned(), path);
        }
    }
    Ok(out)
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an 8-bit single-channel PNG whose pixel values are class indices.
pub fn load_mask(path: &Path) -> Result<LabelImage> {
    let img = open_image(path)?;
    let DynamicImage::ImageLuma8(gray) = img else {
        return Err(Error::invalid(
            "mask",
            format!(
                "{} is {:?}, expected 8-bit single channel",
                path.display(),
                img.color()
            ),
        ));
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    LabelImage::new(w, h, gray.into_raw())
}

pub fn save_mask(path: &Path, mask: &LabelImage) -> Result<()> {
    let img = GrayImage::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.labels().to_vec(),
    )
    .expect("label buffer matches dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}
