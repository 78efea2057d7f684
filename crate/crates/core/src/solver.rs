//! Box-constrained linear least squares from streamed normal equations.
//!
//! A tall problem `min ||A w - y||` is summarized by its Gram system
//! `G = AᵀA`, `b = Aᵀy`, `yy = yᵀy`, accumulated one row at a time. The
//! objective is then `wᵀGw - 2bᵀw + yy` and every solver below works on the
//! `K x K` system only, so memory stays `O(K²)` however many rows stream by.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative KKT tolerance every returned solution must meet.
pub const KKT_TOLERANCE: f64 = 1e-8;
/// Working tolerance of the active-set loop, tighter than [`KKT_TOLERANCE`].
const PIVOT_TOLERANCE: f64 = 1e-10;
const SYMMETRY_TOLERANCE: f64 = 1e-9;
const PSD_TOLERANCE: f64 = 1e-8;
const RANK_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramSystem {
    k: usize,
    /// Row-major `k x k`.
    gram: Vec<f64>,
    rhs: Vec<f64>,
    yy: f64,
    rows: u64,
}

impl GramSystem {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            gram: vec![0.0; k * k],
            rhs: vec![0.0; k],
            yy: 0.0,
            rows: 0,
        }
    }

    /// Assembles a system directly, e.g. for tests or offline analysis.
    pub fn from_parts(k: usize, gram: Vec<f64>, rhs: Vec<f64>, yy: f64, rows: u64) -> Result<Self> {
        if gram.len() != k * k || rhs.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "gram {} and rhs {} for k = {k}",
                gram.len(),
                rhs.len()
            )));
        }
        let sys = Self {
            k,
            gram,
            rhs,
            yy,
            rows,
        };
        sys.check_finite()?;
        Ok(sys)
    }

    /// Gram system of an explicit dense problem (`rows x k`, row-major).
    pub fn from_dense(k: usize, a: &[f64], y: &[f64]) -> Result<Self> {
        let mut sys = Self::new(k);
        for (row, &t) in a.chunks_exact(k.max(1)).zip(y) {
            sys.accumulate(row, t)?;
        }
        Ok(sys)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn yy(&self) -> f64 {
        self.yy
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn accumulate(&mut self, row: &[f64], target: f64) -> Result<()> {
        if row.len() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "row of length {} for k = {}",
                row.len(),
                self.k
            )));
        }
        if !target.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression row"));
        }
        self.add_row(row, target);
        Ok(())
    }

    /// Unchecked variant for hot loops whose inputs are already validated.
    pub(crate) fn add_row(&mut self, row: &[f64], target: f64) {
        let k = self.k;
        for i in 0..k {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            let g = &mut self.gram[i * k..(i + 1) * k];
            for j in 0..k {
                g[j] += ri * row[j];
            }
            self.rhs[i] += target * ri;
        }
        self.yy += target * target;
        self.rows += 1;
    }

    /// Folds another shard into this one.
    pub fn merge(&mut self, other: &GramSystem) -> Result<()> {
        if other.k != self.k {
            return Err(Error::DimensionMismatch(format!(
                "merging k = {} into k = {}",
                other.k, self.k
            )));
        }
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.rhs.iter_mut().zip(&other.rhs) {
            *a += b;
        }
        self.yy += other.yy;
        self.rows += other.rows;
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self.gram.iter().chain(&self.rhs).any(|v| !v.is_finite()) || !self.yy.is_finite() {
            return Err(Error::NonFinite("gram system"));
        }
        Ok(())
    }

    /// Checks finiteness, symmetry and positive semi-definiteness.
    pub fn validate(&self) -> Result<()> {
        self.check_finite()?;
        let k = self.k;
        for i in 0..k {
            for j in i + 1..k {
                let (a, b) = (self.gram[i * k + j], self.gram[j * k + i]);
                let mag = a.abs().max(b.abs());
                if (a - b).abs() > SYMMETRY_TOLERANCE * mag {
                    return Err(Error::Numerical(format!(
                        "gram not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        if k > 0 {
            let trace: f64 = (0..k).map(|i| self.gram[i * k + i]).sum();
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(k, k, &self.gram));
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if min < -PSD_TOLERANCE * trace.abs() {
                return Err(Error::Numerical(format!(
                    "gram not positive semi-definite: eigenvalue {min}, trace {trace}"
                )));
            }
        }
        Ok(())
    }

    fn check_len(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "weights of length {} for k = {}",
                w.len(),
                self.k
            )));
        }
        Ok(())
    }

    /// `wᵀGw - 2bᵀw + yy`, i.e. the squared residual norm.
    pub fn objective(&self, w: &[f64]) -> Result<f64> {
        self.check_len(w)?;
        let gw = self.gram_times(w);
        let quad: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        let lin: f64 = w.iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
        Ok(quad - 2.0 * lin + self.yy)
    }

    /// `||A w - y||₂` reconstructed from the compressed system.
    pub fn residual(&self, w: &[f64]) -> Result<f64> {
        Ok(self.objective(w)?.max(0.0).sqrt())
    }

    /// Objective gradient `2(Gw - b)`.
    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_len(w)?;
        Ok(self
            .gram_times(w)
            .iter()
            .zip(&self.rhs)
            .map(|(gw, b)| 2.0 * (gw - b))
            .collect())
    }

    fn gram_times(&self, w: &[f64]) -> Vec<f64> {
        let k = self.k;
        (0..k)
            .map(|i| {
                self.gram[i * k..(i + 1) * k]
                    .iter()
                    .zip(w)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    fn kkt_scale(&self) -> f64 {
        self.rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("gram system serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "lower has {} bounds, upper {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::invalid(
                    "box constraint",
                    format!("bounds [{l}, {u}] at {i}"),
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 1]` on every coordinate.
    pub fn unit(k: usize) -> Self {
        Self {
            lower: vec![0.0; k],
            upper: vec![1.0; k],
        }
    }

    pub fn nonnegative(k: usize) -> Self {
        Self {
            lower: vec![0.0; k],
            upper: vec![f64::INFINITY; k],
        }
    }

    pub fn unbounded(k: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; k],
            upper: vec![f64::INFINITY; k],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        w.len() == self.len()
            && w
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| v >= l && v <= u)
    }
}

/// Constraint scheme for the per-class weight fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    /// `0 <= w <= 1`.
    #[default]
    Bvls,
    /// `w >= 0`.
    Nnls,
    Unconstrained,
    /// `sum(w) = 1`, otherwise free.
    Sum1,
}

impl SolverMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bvls" => Some(Self::Bvls),
            "nnls" => Some(Self::Nnls),
            "unconstrained" => Some(Self::Unconstrained),
            "sum1" => Some(Self::Sum1),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bvls => "bvls",
            Self::Nnls => "nnls",
            Self::Unconstrained => "unconstrained",
            Self::Sum1 => "sum1",
        }
    }

    pub fn solve(self, sys: &GramSystem) -> Result<Vec<f64>> {
        match self {
            Self::Bvls => solve_bvls(sys, &BoxConstraint::unit(sys.k())),
            Self::Nnls => solve_nnls(sys),
            Self::Unconstrained => solve_unconstrained(sys),
            Self::Sum1 => solve_sum_to_one(sys),
        }
    }
}

/// Fusion weights `w[k][m]`: row = model, column = class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct WeightMatrix {
    models: usize,
    classes: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let models = rows.len();
        let classes = rows.first().map_or(0, Vec::len);
        if models == 0 || classes == 0 || rows.iter().any(|r| r.len() != classes) {
            return Err(Error::invalid("weight matrix", "rows must be non-empty and equal length"));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight matrix"));
        }
        Ok(Self {
            models,
            classes,
            values,
        })
    }

    /// Builds from per-class weight vectors (each of length K).
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let models = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != models) {
            return Err(Error::invalid("weight matrix", "columns differ in length"));
        }
        Self::from_rows(
            (0..models)
                .map(|k| columns.iter().map(|c| c[k]).collect())
                .collect(),
        )
    }

    pub fn filled(models: usize, classes: usize, value: f64) -> Result<Self> {
        Self::from_rows(vec![vec![value; classes]; models])
    }

    /// Weight 1 on `model` for every class, 0 elsewhere.
    pub fn one_hot(models: usize, classes: usize, model: usize) -> Result<Self> {
        Self::from_rows(
            (0..models)
                .map(|k| vec![(k == model) as u8 as f64; classes])
                .collect(),
        )
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, model: usize, class: usize) -> f64 {
        self.values[model * self.classes + class]
    }

    pub fn column(&self, class: usize) -> Vec<f64> {
        (0..self.models).map(|k| self.get(k, class)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.classes).map(<[f64]>::to_vec).collect()
    }

    pub fn within(&self, lower: f64, upper: f64) -> bool {
        self.values.iter().all(|v| (lower..=upper).contains(v))
    }
}

impl TryFrom<Vec<Vec<f64>>> for WeightMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<WeightMatrix> for Vec<Vec<f64>> {
    fn from(w: WeightMatrix) -> Self {
        w.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Upper,
    Free,
}

/// Largest KKT violation of `w` divided by `max(1, ||b||∞)`.
///
/// With `g = 2(Gw - b)`: a free coordinate contributes `|g|`, one at its lower
/// bound `max(0, -g)`, one at its upper bound `max(0, g)`.
pub fn kkt_violation(sys: &GramSystem, w: &[f64], bounds: &BoxConstraint) -> Result<f64> {
    let g = sys.gradient(w)?;
    let mut worst = 0f64;
    for i in 0..w.len() {
        let (l, u) = (bounds.lower[i], bounds.upper[i]);
        let v = if l == u {
            0.0
        } else if w[i] <= l {
            (-g[i]).max(0.0)
        } else if w[i] >= u {
            g[i].max(0.0)
        } else {
            g[i].abs()
        };
        worst = worst.max(v);
    }
    Ok(worst / sys.kkt_scale())
}

/// Bounded-variable least squares by a primal active-set method.
///
/// Coordinates start at a finite bound (lower first). Each outer step frees
/// the bound coordinate with the most negative directional derivative, then
/// the inner loop minimizes over the free set, stepping back to the first
/// bound crossed and fixing it, until the free minimizer is feasible. The
/// loop runs at most `3K²` steps.
pub fn solve_bvls(sys: &GramSystem, bounds: &BoxConstraint) -> Result<Vec<f64>> {
    let k = sys.k();
    if k == 0 {
        return Err(Error::invalid("gram system", "k = 0"));
    }
    if bounds.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} bounds for k = {k}",
            bounds.len()
        )));
    }
    sys.validate()?;
    let (lo, hi) = (&bounds.lower, &bounds.upper);
    let tol = PIVOT_TOLERANCE * sys.kkt_scale();

    let mut state = vec![Bound::Free; k];
    let mut w = vec![0.0; k];
    for i in 0..k {
        if lo[i].is_finite() {
            state[i] = Bound::Lower;
            w[i] = lo[i];
        } else if hi[i].is_finite() {
            state[i] = Bound::Upper;
            w[i] = hi[i];
        }
    }

    let max_steps = 3 * k * k;
    let mut steps = 0usize;
    // coordinate released by the last outer step, until the inner loop moves
    let mut freed: Option<usize> = None;
    // coordinate that could not move when released; skipped until progress
    let mut stuck: Option<usize> = None;
    loop {
        // Inner loop: minimize over the free set, retreating to bounds.
        loop {
            let free: Vec<usize> = (0..k).filter(|&i| state[i] == Bound::Free).collect();
            if free.is_empty() {
                break;
            }
            let z = free_minimizer(sys, &w, &free);
            let mut alpha = 1.0f64;
            let mut blocking = None;
            for (slot, &i) in free.iter().enumerate() {
                let (from, to) = (w[i], z[slot]);
                let crossing = if to < lo[i] {
                    Some(((lo[i] - from) / (to - from), Bound::Lower))
                } else if to > hi[i] {
                    Some(((hi[i] - from) / (to - from), Bound::Upper))
                } else {
                    None
                };
                if let Some((a, side)) = crossing {
                    let a = a.clamp(0.0, 1.0);
                    if blocking.is_none() || a < alpha {
                        alpha = a;
                        blocking = Some((i, side));
                    }
                }
            }
            let Some((i, side)) = blocking else {
                for (slot, &i) in free.iter().enumerate() {
                    w[i] = z[slot];
                }
                stuck = None;
                break;
            };
            let rebind = |w: &mut Vec<f64>, state: &mut Vec<Bound>, j: usize, side: Bound| {
                state[j] = side;
                w[j] = if side == Bound::Lower { lo[j] } else { hi[j] };
            };
            if alpha == 0.0 && freed == Some(i) {
                rebind(&mut w, &mut state, i, side);
                stuck = Some(i);
                break;
            }
            freed = None;
            if alpha > 0.0 {
                stuck = None;
            }
            for (slot, &j) in free.iter().enumerate() {
                w[j] += alpha * (z[slot] - w[j]);
            }
            rebind(&mut w, &mut state, i, side);
            for &j in &free {
                if state[j] == Bound::Free {
                    if w[j] <= lo[j] {
                        rebind(&mut w, &mut state, j, Bound::Lower);
                    } else if w[j] >= hi[j] {
                        rebind(&mut w, &mut state, j, Bound::Upper);
                    }
                }
            }
            steps += 1;
            if steps > max_steps {
                return Err(Error::Numerical(format!(
                    "bvls did not converge in {max_steps} steps"
                )));
            }
        }

        // Outer step: release the most violated bound.
        let g = sys.gradient(&w)?;
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..k {
            if lo[i] == hi[i] || Some(i) == stuck {
                continue;
            }
            let pull = match state[i] {
                Bound::Lower => -g[i] / 2.0,
                Bound::Upper => g[i] / 2.0,
                Bound::Free => continue,
            };
            if pull > tol && pick.is_none_or(|(_, best)| pull > best) {
                pick = Some((i, pull));
            }
        }
        let Some((i, _)) = pick else {
            break;
        };
        state[i] = Bound::Free;
        freed = Some(i);
        steps += 1;
        if steps > max_steps {
            return Err(Error::Numerical(format!(
                "bvls did not converge in {max_steps} steps"
            )));
        }
    }

    let violation = kkt_violation(sys, &w, bounds)?;
    if violation > KKT_TOLERANCE {
        return Err(Error::Numerical(format!(
            "bvls solution violates KKT by {violation:e}"
        )));
    }
    Ok(w)
}

/// Non-negative least squares: [`solve_bvls`] on `[0, ∞)`.
pub fn solve_nnls(sys: &GramSystem) -> Result<Vec<f64>> {
    solve_bvls(sys, &BoxConstraint::nonnegative(sys.k()))
}

/// Solves `Gw = b` by Cholesky, adding `1e-10 * trace / K` to the diagonal
/// when the system is numerically singular. A zero system yields `w = 0`.
pub fn solve_unconstrained(sys: &GramSystem) -> Result<Vec<f64>> {
    let k = sys.k();
    if k == 0 {
        return Err(Error::invalid("gram system", "k = 0"));
    }
    sys.validate()?;
    damped_cholesky_solve(sys.gram(), sys.rhs(), k)
}

/// Minimizes subject to `sum(w) = 1` by eliminating the last coordinate:
/// `w = e_K + Z v` with `Z = [I; -1ᵀ]`.
pub fn solve_sum_to_one(sys: &GramSystem) -> Result<Vec<f64>> {
    let k = sys.k();
    if k == 0 {
        return Err(Error::invalid("gram system", "k = 0"));
    }
    sys.validate()?;
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let r = k - 1;
    let g = sys.gram();
    let at = |i: usize, j: usize| g[i * k + j];
    let last = k - 1;
    // ZᵀGZ and Zᵀ(b - G e_K)
    let mut reduced = vec![0.0; r * r];
    let mut rhs = vec![0.0; r];
    for i in 0..r {
        for j in 0..r {
            reduced[i * r + j] = at(i, j) - at(i, last) - at(last, j) + at(last, last);
        }
        let c_i = sys.rhs()[i] - at(i, last);
        let c_last = sys.rhs()[last] - at(last, last);
        rhs[i] = c_i - c_last;
    }
    let v = damped_cholesky_solve(&reduced, &rhs, r)?;
    let mut w = v.clone();
    w.push(1.0 - v.iter().sum::<f64>());
    Ok(w)
}

fn damped_cholesky_solve(a: &[f64], b: &[f64], k: usize) -> Result<Vec<f64>> {
    let trace: f64 = (0..k).map(|i| a[i * k + i]).sum();
    if trace <= 0.0 {
        return Ok(vec![0.0; k]);
    }
    let threshold = 1e-12 * trace / k as f64;
    let factor = match cholesky(a, k, threshold) {
        Some(l) => l,
        None => {
            let mut damped = a.to_vec();
            let delta = 1e-10 * trace / k as f64;
            for i in 0..k {
                damped[i * k + i] += delta;
            }
            cholesky(&damped, k, 0.0)
                .ok_or_else(|| Error::Numerical("damped system is not positive definite".into()))?
        }
    };
    let x = cholesky_solve(&factor, b, k);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("unconstrained solution"));
    }
    Ok(x)
}

/// Lower-triangular `L` with `LLᵀ = A`, or `None` if a pivot is `<= threshold`.
fn cholesky(a: &[f64], k: usize, threshold: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= l[j * k + p] * l[j * k + p];
        }
        if d <= threshold {
            return None;
        }
        let d = d.sqrt();
        l[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            l[i * k + j] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..k {
        for p in 0..i {
            y[i] -= l[i * k + p] * y[p];
        }
        y[i] /= l[i * k + i];
    }
    for i in (0..k).rev() {
        for p in i + 1..k {
            y[i] -= l[p * k + i] * y[p];
        }
        y[i] /= l[i * k + i];
    }
    y
}

/// Minimizer of the objective over the coordinates in `free`, others held at
/// `w`. Solved as a step `G_FF d = (b - Gw)_F` via pivoted Cholesky; columns
/// numerically dependent on earlier pivots keep `d = 0`. One round of
/// iterative refinement follows.
fn free_minimizer(sys: &GramSystem, w: &[f64], free: &[usize]) -> Vec<f64> {
    let k = sys.k();
    let f = free.len();
    let g = sys.gram();
    let sub: Vec<f64> = free
        .iter()
        .flat_map(|&i| free.iter().map(move |&j| g[i * k + j]))
        .collect();
    let residual = |w: &[f64]| -> Vec<f64> {
        free.iter()
            .map(|&i| {
                sys.rhs()[i]
                    - g[i * k..(i + 1) * k]
                        .iter()
                        .zip(w)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    };
    let pivoted = PivotedCholesky::new(&sub, f);
    let mut d = pivoted.solve(&residual(w));
    let mut trial = w.to_vec();
    for (slot, &i) in free.iter().enumerate() {
        trial[i] += d[slot];
    }
    let correction = pivoted.solve(&residual(&trial));
    for (di, ci) in d.iter_mut().zip(&correction) {
        *di += ci;
    }
    free.iter()
        .enumerate()
        .map(|(slot, &i)| w[i] + d[slot])
        .collect()
}

/// Cholesky with diagonal pivoting, truncated at numerical rank.
struct PivotedCholesky {
    n: usize,
    rank: usize,
    /// `perm[p]` is the original index of pivot `p`.
    perm: Vec<usize>,
    /// Lower-triangular factor of the permuted leading block, `n x n` storage.
    l: Vec<f64>,
}

impl PivotedCholesky {
    fn new(a: &[f64], n: usize) -> Self {
        let mut work = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut l = vec![0.0; n * n];
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0f64, f64::max);
        let threshold = RANK_TOLERANCE * max_diag * n as f64;
        let mut rank = 0;
        for j in 0..n {
            // pick the largest remaining diagonal (Schur complement)
            let (mut best, mut best_val) = (j, f64::NEG_INFINITY);
            for p in j..n {
                let idx = perm[p];
                let mut d = work[idx * n + idx];
                for q in 0..j {
                    d -= l[p * n + q] * l[p * n + q];
                }
                if d > best_val {
                    best_val = d;
                    best = p;
                }
            }
            if best_val <= threshold || best_val <= 0.0 {
                break;
            }
            perm.swap(j, best);
            for q in 0..j {
                l.swap(j * n + q, best * n + q);
            }
            let dj = best_val.sqrt();
            l[j * n + j] = dj;
            for p in j + 1..n {
                let mut s = work[perm[p] * n + perm[j]];
                for q in 0..j {
                    s -= l[p * n + q] * l[j * n + q];
                }
                l[p * n + j] = s / dj;
            }
            rank += 1;
        }
        work.clear();
        Self { n, rank, perm, l }
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, r) = (self.n, self.rank);
        let mut y: Vec<f64> = (0..r).map(|p| rhs[self.perm[p]]).collect();
        for i in 0..r {
            for q in 0..i {
                y[i] -= self.l[i * n + q] * y[q];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..r).rev() {
            for p in i + 1..r {
                y[i] -= self.l[p * n + i] * y[p];
            }
            y[i] /= self.l[i * n + i];
        }
        let mut out = vec![0.0; n];
        for p in 0..r {
            out[self.perm[p]] = y[p];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(g: f64, b: f64) -> GramSystem {
        GramSystem::from_parts(1, vec![g], vec![b], 0.0, 1).unwrap()
    }

    fn random_problem(rng: &mut ChaCha8Rng, k: usize, rows: usize) -> (Vec<f64>, Vec<f64>) {
        let a: Vec<f64> = (0..rows * k).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..rows).map(|_| (rng.random::<f64>() < 0.4) as u8 as f64).collect();
        (a, y)
    }

    #[test]
    fn empty_accumulation_is_zero() {
        let s = GramSystem::new(3);
        assert!(s.gram().iter().all(|&v| v == 0.0));
        assert!(s.rhs().iter().all(|&v| v == 0.0));
        assert_eq!(s.rows(), 0);
    }

    #[test]
    fn two_rows_give_identity() {
        let mut s = GramSystem::new(2);
        s.accumulate(&[1.0, 0.0], 1.0).unwrap();
        s.accumulate(&[0.0, 1.0], 0.0).unwrap();
        assert_eq!(s.gram(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.rhs(), &[1.0, 0.0]);
        assert_eq!(s.yy(), 1.0);
        assert_eq!(s.rows(), 2);
    }

    #[test]
    fn accumulate_rejects_non_finite() {
        let mut s = GramSystem::new(2);
        assert!(matches!(
            s.accumulate(&[f64::NAN, 0.0], 1.0),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            s.accumulate(&[0.0, 0.0], f64::INFINITY),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn shard_merge_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, y) = random_problem(&mut rng, 4, 300);
        let whole = GramSystem::from_dense(4, &a, &y).unwrap();
        let mut left = GramSystem::from_dense(4, &a[..4 * 120], &y[..120]).unwrap();
        let right = GramSystem::from_dense(4, &a[4 * 120..], &y[120..]).unwrap();
        left.merge(&right).unwrap();
        for (p, q) in left.gram().iter().zip(whole.gram()) {
            assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
        for (p, q) in left.rhs().iter().zip(whole.rhs()) {
            assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
        assert_eq!(left.rows(), 300);
    }

    #[test]
    fn scalar_interior_minimum() {
        assert_eq!(solve_bvls(&scalar(4.0, 2.0), &BoxConstraint::unit(1)).unwrap(), vec![0.5]);
    }

    #[test]
    fn scalar_clipped_at_upper() {
        assert_eq!(solve_bvls(&scalar(1.0, 3.0), &BoxConstraint::unit(1)).unwrap(), vec![1.0]);
    }

    #[test]
    fn nnls_separable() {
        let s = GramSystem::from_parts(2, vec![1.0, 0.0, 0.0, 1.0], vec![-1.0, 2.0], 5.0, 2).unwrap();
        assert_eq!(solve_nnls(&s).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn unconstrained_identity_returns_rhs() {
        let s = GramSystem::from_parts(3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], vec![0.3, -7.0, 2.5], 0.0, 3)
            .unwrap();
        assert_eq!(solve_unconstrained(&s).unwrap(), vec![0.3, -7.0, 2.5]);
    }

    #[test]
    fn unconstrained_damps_singular_system() {
        // Two identical columns: any split of the weight is optimal.
        let s = GramSystem::from_parts(2, vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 1.0], 1.0, 1).unwrap();
        let w = solve_unconstrained(&s).unwrap();
        assert!(s.residual(&w).unwrap() < 1e-4);
    }

    #[test]
    fn degenerate_class_returns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, _) = random_problem(&mut rng, 3, 50);
        let s = GramSystem::from_dense(3, &a, &[0.0; 50]).unwrap();
        assert_eq!(solve_bvls(&s, &BoxConstraint::unit(3)).unwrap(), vec![0.0; 3]);
        assert_eq!(solve_unconstrained(&s).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rejects_k_zero_and_non_psd() {
        assert!(solve_bvls(&GramSystem::new(0), &BoxConstraint::unit(0)).is_err());
        let bad = GramSystem::from_parts(2, vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0], 0.0, 1).unwrap();
        assert!(matches!(
            solve_bvls(&bad, &BoxConstraint::unit(2)),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn sum_to_one_constraint_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, y) = random_problem(&mut rng, 4, 80);
        let s = GramSystem::from_dense(4, &a, &y).unwrap();
        let w = solve_sum_to_one(&s).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // optimal along any direction preserving the sum
        let g = s.gradient(&w).unwrap();
        for i in 0..3 {
            assert!((g[i] - g[3]).abs() < 1e-8 * s.kkt_scale());
        }
    }

    #[test]
    fn bvls_handles_duplicate_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a2, y) = random_problem(&mut rng, 2, 60);
        let a: Vec<f64> = a2.chunks(2).flat_map(|r| [r[0], r[1], r[0]]).collect();
        let s = GramSystem::from_dense(3, &a, &y).unwrap();
        let w = solve_bvls(&s, &BoxConstraint::unit(3)).unwrap();
        assert!(kkt_violation(&s, &w, &BoxConstraint::unit(3)).unwrap() <= KKT_TOLERANCE);
    }

    #[test]
    fn residual_of_zero_weights_is_sqrt_yy() {
        let s = GramSystem::from_parts(2, vec![2.0, 0.0, 0.0, 2.0], vec![1.0, 1.0], 9.0, 4).unwrap();
        assert_eq!(s.residual(&[0.0, 0.0]).unwrap(), 3.0);
        assert!(s.residual(&[0.0]).is_err());
    }

    #[test]
    fn json_dump_round_trips() {
        let s = GramSystem::from_parts(2, vec![2.0, 0.5, 0.5, 2.0], vec![1.0, 0.25], 9.0, 4).unwrap();
        let back: GramSystem = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bvls_beats_random_feasible_probes(seed in any::<u64>(), k in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, y) = random_problem(&mut rng, k, 4 * k + 3);
            let s = GramSystem::from_dense(k, &a, &y).unwrap();
            let bounds = BoxConstraint::unit(k);
            let w = solve_bvls(&s, &bounds).unwrap();
            prop_assert!(bounds.contains(&w));
            prop_assert!(kkt_violation(&s, &w, &bounds).unwrap() <= KKT_TOLERANCE);
            let best = s.objective(&w).unwrap();
            for _ in 0..1000 {
                let probe: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                prop_assert!(best <= s.objective(&probe).unwrap() + 1e-9);
            }
        }

        #[test]
        fn nnls_equals_bvls_with_infinite_upper(seed in any::<u64>(), k in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, y) = random_problem(&mut rng, k, 3 * k + 2);
            let s = GramSystem::from_dense(k, &a, &y).unwrap();
            let nn = solve_nnls(&s).unwrap();
            let bv = solve_bvls(&s, &BoxConstraint::new(vec![0.0; k], vec![f64::INFINITY; k]).unwrap()).unwrap();
            prop_assert_eq!(nn, bv);
        }

        #[test]
        fn unbounded_bvls_matches_unconstrained(seed in any::<u64>(), k in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, y) = random_problem(&mut rng, k, 5 * k + 10);
            let s = GramSystem::from_dense(k, &a, &y).unwrap();
            let free = solve_bvls(&s, &BoxConstraint::unbounded(k)).unwrap();
            let direct = solve_unconstrained(&s).unwrap();
            for (p, q) in free.iter().zip(&direct) {
                prop_assert!((p - q).abs() <= 1e-8 * q.abs().max(1.0));
            }
        }

        #[test]
        fn solution_stable_under_row_reordering(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = 6 * k + 5;
            let (a, y) = random_problem(&mut rng, k, rows);
            let forward = GramSystem::from_dense(k, &a, &y).unwrap();
            let ra: Vec<f64> = a.chunks(k).rev().flatten().copied().collect();
            let ry: Vec<f64> = y.iter().rev().copied().collect();
            let backward = GramSystem::from_dense(k, &ra, &ry).unwrap();
            let b = BoxConstraint::unit(k);
            let w1 = solve_bvls(&forward, &b).unwrap();
            let w2 = solve_bvls(&backward, &b).unwrap();
            for (p, q) in w1.iter().zip(&w2) {
                prop_assert!((p - q).abs() <= 1e-8);
            }
        }

        #[test]
        fn residual_matches_dense(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = 3 * k + 4;
            let (a, y) = random_problem(&mut rng, k, rows);
            let s = GramSystem::from_dense(k, &a, &y).unwrap();
            let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let dense: f64 = a.chunks(k).zip(&y)
                .map(|(r, t)| {
                    let e = r.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>() - t;
                    e * e
                })
                .sum::<f64>()
                .sqrt();
            prop_assert!((s.residual(&w).unwrap() - dense).abs() <= 1e-9);
        }
    }
}
