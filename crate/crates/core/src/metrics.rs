//! Dice coefficient and average Hausdorff distance over crisp label images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::imagery::LabelImage;

/// Above this many target points the directed distance uses a bucket grid.
const GRID_THRESHOLD: usize = 4096;

/// Pixel counts behind one class's Dice score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiceCounts {
    pub intersection: u64,
    pub predicted: u64,
    pub truth: u64,
}

impl DiceCounts {
    pub fn merge(&mut self, other: &DiceCounts) {
        self.intersection += other.intersection;
        self.predicted += other.predicted;
        self.truth += other.truth;
    }

    pub fn both_empty(&self) -> bool {
        self.predicted == 0 && self.truth == 0
    }

    /// `2|P∩G| / (|P| + |G|)`, or 1 when both are empty.
    pub fn dice(&self) -> f64 {
        if self.both_empty() {
            1.0
        } else {
            2.0 * self.intersection as f64 / (self.predicted + self.truth) as f64
        }
    }
}

fn check_pair(pred: &LabelImage, truth: &LabelImage) -> Result<()> {
    if !pred.same_shape(truth) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    Ok(())
}

/// Counts for every class in `0..classes` over one image pair.
pub fn dice_counts(pred: &LabelImage, truth: &LabelImage, classes: usize) -> Result<Vec<DiceCounts>> {
    check_pair(pred, truth)?;
    let mut counts = vec![DiceCounts::default(); classes];
    for (&p, &g) in pred.labels().iter().zip(truth.labels()) {
        let (p, g) = (p as usize, g as usize);
        if p < classes {
            counts[p].predicted += 1;
        }
        if g < classes {
            counts[g].truth += 1;
        }
        if p == g && p < classes {
            counts[p].intersection += 1;
        }
    }
    Ok(counts)
}

/// Pooled Dice for class `m` over aligned image lists.
pub fn dice(preds: &[LabelImage], truths: &[LabelImage], m: usize) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut total = DiceCounts::default();
    for (p, g) in preds.iter().zip(truths) {
        total.merge(&dice_counts(p, g, m + 1)?[m]);
    }
    Ok(total.dice())
}

/// Boundary pixels of one class, as `(x, y)` in row-major order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<(i32, i32)>,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A pixel of class `m` is on the contour when it touches the image border
/// or has a 4-neighbour of another class.
pub fn extract_contour(mask: &LabelImage, m: usize) -> Contour {
    let (w, h) = (mask.width(), mask.height());
    let l = mask.labels();
    let is = |x: usize, y: usize| l[y * w + x] as usize == m;
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !is(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !is(x - 1, y)
                || !is(x + 1, y)
                || !is(x, y - 1)
                || !is(x, y + 1);
            if edge {
                points.push((x as i32, y as i32));
            }
        }
    }
    Contour { points }
}

fn dist_sq(a: (i32, i32), b: (i32, i32)) -> i64 {
    let dx = (a.0 - b.0) as i64;
    let dy = (a.1 - b.1) as i64;
    dx * dx + dy * dy
}

/// Uniform bucket grid for exact nearest-point queries.
struct Grid {
    cell: i32,
    origin: (i32, i32),
    cols: i32,
    rows: i32,
    buckets: Vec<Vec<(i32, i32)>>,
}

impl Grid {
    fn new(points: &[(i32, i32)]) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
        for &(x, y) in points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let area = ((x1 - x0 + 1) as f64) * ((y1 - y0 + 1) as f64);
        // roughly four points per occupied cell
        let cell = ((area * 4.0 / points.len() as f64).sqrt().ceil() as i32).max(1);
        let cols = (x1 - x0) / cell + 1;
        let rows = (y1 - y0) / cell + 1;
        let mut buckets = vec![Vec::new(); (cols * rows) as usize];
        for &(x, y) in points {
            let (cx, cy) = ((x - x0) / cell, (y - y0) / cell);
            buckets[(cy * cols + cx) as usize].push((x, y));
        }
        Self {
            cell,
            origin: (x0, y0),
            cols,
            rows,
            buckets,
        }
    }

    fn nearest_sq(&self, q: (i32, i32)) -> i64 {
        let cx = ((q.0 - self.origin.0).div_euclid(self.cell)).clamp(0, self.cols - 1);
        let cy = ((q.1 - self.origin.1).div_euclid(self.cell)).clamp(0, self.rows - 1);
        let mut best = i64::MAX;
        let max_ring = self.cols.max(self.rows);
        for r in 0..=max_ring {
            if r > 0 {
                // any point r rings away is at least this far along one axis
                let lower = ((r - 1) * self.cell + 1) as i64;
                if lower * lower > best {
                    break;
                }
            }
            for yy in (cy - r)..=(cy + r) {
                if yy < 0 || yy >= self.rows {
                    continue;
                }
                let on_edge_row = yy == cy - r || yy == cy + r;
                let mut xx = cx - r;
                while xx <= cx + r {
                    if xx >= 0 && xx < self.cols {
                        for &p in &self.buckets[(yy * self.cols + xx) as usize] {
                            best = best.min(dist_sq(q, p));
                        }
                    }
                    xx += if on_edge_row || r == 0 { 1 } else { 2 * r };
                }
            }
        }
        best
    }
}

/// Mean over `a` of the distance to the nearest point of `b`. Both non-empty.
fn directed(a: &Contour, b: &Contour) -> f64 {
    let sum: f64 = if b.len() > GRID_THRESHOLD {
        let grid = Grid::new(&b.points);
        a.points
            .iter()
            .map(|&p| (grid.nearest_sq(p) as f64).sqrt())
            .sum()
    } else {
        a.points
            .iter()
            .map(|&p| {
                let m = b.points.iter().map(|&q| dist_sq(p, q)).min().unwrap();
                (m as f64).sqrt()
            })
            .sum()
    };
    sum / a.len() as f64
}

/// `max(d(A, B), d(B, A))` with `d` the mean nearest-point distance.
/// Both empty gives `Some(0.0)`; exactly one empty is undefined (`None`).
pub fn avg_hausdorff(a: &Contour, b: &Contour) -> Option<f64> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Some(0.0),
        (true, false) | (false, true) => None,
        (false, false) => Some(directed(a, b).max(directed(b, a))),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Score a one-sided empty contour pair as distance 0 instead of undefined.
    pub legacy_empty_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassReport {
    pub class: usize,
    /// Dice over counts pooled across all images.
    pub dice: f64,
    /// Mean of per-image Dice, for comparison.
    pub dice_image_mean: f64,
    pub counts: DiceCounts,
    /// Images where neither prediction nor truth contain the class.
    pub dice_both_empty_images: usize,
    /// Mean average-Hausdorff over images where it is defined.
    pub hausdorff: Option<f64>,
    pub hausdorff_defined_images: usize,
    pub hausdorff_undefined_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricReport {
    pub name: String,
    pub images: usize,
    pub classes: usize,
    pub legacy_empty_zero: bool,
    pub per_class: Vec<ClassReport>,
}

impl MetricReport {
    /// Mean pooled Dice over classes `1..M`.
    pub fn foreground_dice(&self) -> f64 {
        let fg = &self.per_class[1..];
        fg.iter().map(|c| c.dice).sum::<f64>() / fg.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct ImageMetrics {
    counts: Vec<DiceCounts>,
    hausdorff: Vec<Option<f64>>,
}

fn image_metrics(pred: &LabelImage, truth: &LabelImage, classes: usize) -> Result<ImageMetrics> {
    let counts = dice_counts(pred, truth, classes)?;
    let hausdorff = (0..classes)
        .map(|m| avg_hausdorff(&extract_contour(truth, m), &extract_contour(pred, m)))
        .collect();
    Ok(ImageMetrics { counts, hausdorff })
}

/// Per-class Dice (pooled and per-image mean) and mean average-Hausdorff.
pub fn evaluate(
    name: &str,
    preds: &[LabelImage],
    truths: &[LabelImage],
    classes: usize,
    options: EvalOptions,
) -> Result<MetricReport> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let per_image = exec::try_map_range(preds.len(), |i| {
        image_metrics(&preds[i], &truths[i], classes)
            .map_err(|e| e.context(format!("image {i}")))
    })?;

    let per_class = (0..classes)
        .map(|m| {
            let mut counts = DiceCounts::default();
            let (mut dice_sum, mut both_empty) = (0.0, 0usize);
            let (mut hd_sum, mut defined, mut undefined) = (0.0, 0usize, 0usize);
            for im in &per_image {
                let c = im.counts[m];
                counts.merge(&c);
                dice_sum += c.dice();
                both_empty += c.both_empty() as usize;
                match im.hausdorff[m] {
                    Some(d) => {
                        hd_sum += d;
                        defined += 1;
                    }
                    None if options.legacy_empty_zero => defined += 1,
                    None => undefined += 1,
                }
            }
            let n = per_image.len();
            ClassReport {
                class: m,
                dice: counts.dice(),
                dice_image_mean: if n == 0 { 1.0 } else { dice_sum / n as f64 },
                counts,
                dice_both_empty_images: both_empty,
                hausdorff: (defined > 0).then(|| hd_sum / defined as f64),
                hausdorff_defined_images: defined,
                hausdorff_undefined_images: undefined,
            }
        })
        .collect();

    Ok(MetricReport {
        name: name.to_string(),
        images: preds.len(),
        classes,
        legacy_empty_zero: options.legacy_empty_zero,
        per_class,
    })
}

/// Plain-text comparison: one row per report, Dice and Hausdorff per class.
pub fn render_table(reports: &[MetricReport]) -> String {
    let classes = reports.iter().map(|r| r.classes).max().unwrap_or(0);
    let mut header = vec!["method".to_string()];
    for m in 0..classes {
        header.push(format!("dice[{m}]"));
        header.push(format!("hd[{m}]"));
    }
    header.push("fg-dice".to_string());
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![r.name.clone()];
        for m in 0..classes {
            match r.per_class.get(m) {
                Some(c) => {
                    row.push(format!("{:.4}", c.dice));
                    row.push(match c.hausdorff {
                        Some(d) if c.hausdorff_undefined_images == 0 => format!("{d:.3}"),
                        Some(d) => format!("{d:.3} ({}u)", c.hausdorff_undefined_images),
                        None => "undef".to_string(),
                    });
                }
                None => {
                    row.push("-".into());
                    row.push("-".into());
                }
            }
        }
        row.push(if r.classes > 1 {
            format!("{:.4}", r.foreground_dice())
        } else {
            "-".into()
        });
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j == 0 {
                    format!("{c:<w$}", w = widths[j])
                } else {
                    format!("{c:>w$}", w = widths[j])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
