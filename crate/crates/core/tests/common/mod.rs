//! Independent reference implementations used to check the library.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `wᵀGw − 2bᵀw + yy`.
pub fn objective(g: &[f64], b: &[f64], yy: f64, w: &[f64]) -> f64 {
    let k = w.len();
    let mut quad = 0.0;
    for i in 0..k {
        for j in 0..k {
            quad += w[i] * g[i * k + j] * w[j];
        }
    }
    quad - 2.0 * b.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() + yy
}

/// Box-constrained least squares by trying all `3^K` assignments of each
/// coordinate to lower bound, upper bound or free. The free block is solved
/// with an SVD pseudo-inverse; infeasible candidates are discarded.
pub fn bvls_enumerate(g: &[f64], b: &[f64], yy: f64, lo: &[f64], hi: &[f64]) -> (Vec<f64>, f64) {
    let k = b.len();
    let scale = 1.0 + lo.iter().chain(hi).map(|v| v.abs()).fold(0.0, f64::max);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for code in 0..3usize.pow(k as u32) {
        let mut state = vec![0u8; k];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut w = vec![0.0; k];
        let free: Vec<usize> = (0..k).filter(|&i| state[i] == 2).collect();
        for i in 0..k {
            match state[i] {
                0 => w[i] = lo[i],
                1 => w[i] = hi[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let n = free.len();
            let gff = DMatrix::from_fn(n, n, |r, c| g[free[r] * k + free[c]]);
            let rhs = DVector::from_fn(n, |r, _| {
                let i = free[r];
                b[i] - (0..k)
                    .filter(|j| state[*j] != 2)
                    .map(|j| g[i * k + j] * w[j])
                    .sum::<f64>()
            });
            let Ok(pinv) = gff.pseudo_inverse(1e-12) else { continue };
            let z = pinv * rhs;
            for (r, &i) in free.iter().enumerate() {
                w[i] = z[r];
            }
        }
        let feasible = (0..k).all(|i| w[i] >= lo[i] - 1e-12 * scale && w[i] <= hi[i] + 1e-12 * scale);
        if !feasible {
            continue;
        }
        for i in 0..k {
            w[i] = w[i].clamp(lo[i], hi[i]);
        }
        let f = objective(g, b, yy, &w);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((w, f));
        }
    }
    best.expect("the all-lower-bound vertex is always feasible")
}

/// A least-squares problem whose `N x K` design has probability-like
/// columns, returned as `(gram, rhs, yy, a, y)`.
pub fn random_problem(rng: &mut ChaCha8Rng, k: usize, n: usize) -> (Vec<f64>, Vec<f64>, f64, Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..n * k).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    let mut g = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    let mut yy = 0.0;
    for r in 0..n {
        let row = &a[r * k..(r + 1) * k];
        for i in 0..k {
            b[i] += row[i] * y[r];
            for j in 0..k {
                g[i * k + j] += row[i] * row[j];
            }
        }
        yy += y[r] * y[r];
    }
    (g, b, yy, a, y)
}

/// Row-major class masks with a few random rectangles.
pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, classes: u8) -> Vec<u8> {
    let mut m = vec![0u8; w * h];
    for _ in 0..rng.random_range(0..4) {
        let c = rng.random_range(0..classes);
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (x1, y1) = (rng.random_range(x0..w), rng.random_range(y0..h));
        for y in y0..=y1 {
            for x in x0..=x1 {
                m[y * w + x] = c;
            }
        }
    }
    for _ in 0..rng.random_range(0..6) {
        let p = rng.random_range(0..w * h);
        m[p] = rng.random_range(0..classes);
    }
    m
}

/// `(intersection, predicted, truth)` for class `c`, counted pixel by pixel.
pub fn dense_dice_counts(pred: &[u8], truth: &[u8], c: u8) -> (u64, u64, u64) {
    let mut out = (0, 0, 0);
    for (p, t) in pred.iter().zip(truth) {
        out.0 += (*p == c && *t == c) as u64;
        out.1 += (*p == c) as u64;
        out.2 += (*t == c) as u64;
    }
    out
}

/// Boundary pixels found by padding the mask with a class that cannot occur.
pub fn dense_contour(mask: &[u8], w: usize, h: usize, c: u8) -> Vec<(f64, f64)> {
    let pad = |x: isize, y: isize| -> Option<u8> {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            None
        } else {
            Some(mask[y as usize * w + x as usize])
        }
    };
    let mut pts = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if pad(x, y) != Some(c) {
                continue;
            }
            let nbrs = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)];
            if nbrs.iter().any(|&(a, b)| pad(a, b) != Some(c)) {
                pts.push((x as f64, y as f64));
            }
        }
    }
    pts
}

/// Mean over `a` of the distance to the nearest point of `b`.
pub fn dense_directed(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / a.len() as f64
}

pub fn dense_avg_hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> Option<f64> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Some(0.0),
        (false, false) => Some(dense_directed(a, b).max(dense_directed(b, a))),
        _ => None,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
