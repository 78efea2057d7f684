//! Weighted fusion of per-model probability maps and the final argmax.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imagery::{encode_pmap, write_file, LabelImage, ProbMapSet, RawPlanes, PMAP_VERSION_MEMBERSHIP};
use crate::solver::WeightMatrix;

/// Per-class membership scores `CM_m = Σ_k w[k][m] · P_k(m)`. Not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMembership {
    width: usize,
    height: usize,
    classes: usize,
    planes: Vec<f64>,
}

impl ClassMembership {
    pub fn new(width: usize, height: usize, classes: usize, planes: Vec<f64>) -> Result<Self> {
        if planes.len() != width * height * classes {
            return Err(Error::DimensionMismatch(format!(
                "{} membership values for {width}x{height}x{classes}",
                planes.len()
            )));
        }
        if planes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("class membership"));
        }
        Ok(Self {
            width,
            height,
            classes,
            planes,
        })
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

    pub fn plane(&self, m: usize) -> &[f64] {
        let n = self.pixels();
        &self.planes[m * n..(m + 1) * n]
    }

    pub fn planes(&self) -> &[f64] {
        &self.planes
    }

    pub fn scaled(&self, factor: f64) -> ClassMembership {
        ClassMembership {
            planes: self.planes.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Sum-normalized copy for display. Negative scores count as 0; a pixel
    /// with no mass becomes uniform.
    pub fn normalized(&self) -> Result<ProbMapSet> {
        let n = self.pixels();
        let m = self.classes;
        let mut out = vec![0f32; n * m];
        for p in 0..n {
            let sum: f64 = (0..m).map(|c| self.planes[c * n + p].max(0.0)).sum();
            for c in 0..m {
                out[c * n + p] = if sum > 0.0 {
                    (self.planes[c * n + p].max(0.0) / sum) as f32
                } else {
                    1.0 / m as f32
                };
            }
        }
        ProbMapSet::new(self.width, self.height, m, out)
    }

    /// Max-normalized per pixel and clipped to `[0, 1]`, in the `PMAP`
    /// container with version 2.
    pub fn to_dump_bytes(&self) -> Vec<u8> {
        let n = self.pixels();
        let m = self.classes;
        let mut out = vec![0f32; n * m];
        for p in 0..n {
            let max = (0..m).map(|c| self.planes[c * n + p]).fold(f64::NEG_INFINITY, f64::max);
            for c in 0..m {
                let v = self.planes[c * n + p];
                let scaled = if max > 0.0 { v / max } else { 0.0 };
                out[c * n + p] = scaled.clamp(0.0, 1.0) as f32;
            }
        }
        encode_pmap(PMAP_VERSION_MEMBERSHIP, self.width, self.height, m, &out)
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_dump_bytes())
    }

    /// Reads a version-2 dump back as max-normalized planes.
    pub fn from_dump_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = RawPlanes::decode(bytes)?;
        if raw.version != PMAP_VERSION_MEMBERSHIP {
            return Err(Error::UnsupportedVersion {
                what: "membership dump",
                version: raw.version,
            });
        }
        Self::new(
            raw.width,
            raw.height,
            raw.classes,
            raw.values.iter().map(|&v| v as f64).collect(),
        )
    }
}

/// `CM_m(p) = Σ_k w[k][m] · P_k(m | p)`.
pub fn combine(maps: &[ProbMapSet], weights: &WeightMatrix) -> Result<ClassMembership> {
    let Some(first) = maps.first() else {
        return Err(Error::DimensionMismatch("no maps to combine".into()));
    };
    if maps.len() != weights.models() {
        return Err(Error::DimensionMismatch(format!(
            "{} maps but {} weight rows",
            maps.len(),
            weights.models()
        )));
    }
    let (w, h, m) = (first.width(), first.height(), first.classes());
    if m != weights.classes() {
        return Err(Error::DimensionMismatch(format!(
            "maps have {m} classes, weights {}",
            weights.classes()
        )));
    }
    if let Some(bad) = maps
        .iter()
        .find(|pm| (pm.width(), pm.height(), pm.classes()) != (w, h, m))
    {
        return Err(Error::DimensionMismatch(format!(
            "map is {}x{}x{}, expected {w}x{h}x{m}",
            bad.width(),
            bad.height(),
            bad.classes()
        )));
    }
    let n = w * h;
    let mut planes = vec![0f64; n * m];
    for class in 0..m {
        let out = &mut planes[class * n..(class + 1) * n];
        for (k, pm) in maps.iter().enumerate() {
            let wk = weights.get(k, class);
            if wk == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(pm.plane(class)) {
                *o += wk * p as f64;
            }
        }
    }
    ClassMembership::new(w, h, m, planes)
}

/// Per-pixel argmax over classes; ties go to the lowest class index.
pub fn decide(cm: &ClassMembership) -> LabelImage {
    let n = cm.pixels();
    let labels = (0..n)
        .map(|p| {
            let mut best = 0usize;
            for m in 1..cm.classes {
                if cm.planes[m * n + p] > cm.planes[best * n + p] {
                    best = m;
                }
            }
            best as u8
        })
        .collect();
    LabelImage::new(cm.width, cm.height, labels).expect("membership has valid shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pixel(probs: &[f32]) -> ProbMapSet {
        ProbMapSet::constant(1, 1, probs).unwrap()
    }

    #[test]
    fn hand_evaluated_two_models_two_classes() {
        let maps = [pixel(&[0.6, 0.4]), pixel(&[0.2, 0.8])];
        let w = WeightMatrix::from_rows(vec![vec![0.75, 0.1], vec![0.25, 0.9]]).unwrap();
        let cm = combine(&maps, &w).unwrap();
        assert!((cm.plane(0)[0] - 0.5).abs() < 1e-7);
        assert!((cm.plane(1)[0] - 0.76).abs() < 1e-7);
        assert_eq!(decide(&cm).labels(), &[1]);
    }

    #[test]
    fn equal_weights_average() {
        let maps = [pixel(&[0.6, 0.4]), pixel(&[0.2, 0.8])];
        let w = WeightMatrix::filled(2, 2, 0.5).unwrap();
        let cm = combine(&maps, &w).unwrap();
        assert!((cm.plane(0)[0] - 0.4).abs() < 1e-7);
        assert!((cm.plane(1)[0] - 0.6).abs() < 1e-7);
        assert_eq!(decide(&cm).labels(), &[1]);
    }

    #[test]
    fn one_hot_weights_select_model() {
        let maps = [pixel(&[0.6, 0.4]), pixel(&[0.2, 0.8])];
        let cm = combine(&maps, &WeightMatrix::one_hot(2, 2, 0).unwrap()).unwrap();
        assert_eq!(cm.plane(0)[0], 0.6f32 as f64);
        assert_eq!(cm.plane(1)[0], 0.4f32 as f64);
    }

    #[test]
    fn zero_weights_give_zero_membership() {
        let maps = [pixel(&[0.6, 0.4])];
        let cm = combine(&maps, &WeightMatrix::filled(1, 2, 0.0).unwrap()).unwrap();
        assert!(cm.planes().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decide_picks_larger_and_breaks_ties_low() {
        let cm = ClassMembership::new(2, 1, 2, vec![0.3, 0.5, 0.7, 0.5]).unwrap();
        assert_eq!(decide(&cm).labels(), &[1, 0]);
    }

    #[test]
    fn dimension_errors() {
        let maps = [pixel(&[0.6, 0.4]), ProbMapSet::constant(2, 1, &[0.5, 0.5]).unwrap()];
        assert!(combine(&maps, &WeightMatrix::filled(2, 2, 0.5).unwrap()).is_err());
        assert!(combine(&maps[..1], &WeightMatrix::filled(2, 2, 0.5).unwrap()).is_err());
    }

    #[test]
    fn dump_round_trip_is_max_normalized() {
        let cm = ClassMembership::new(1, 2, 2, vec![0.2, 0.0, 0.4, 0.0]).unwrap();
        let back = ClassMembership::from_dump_bytes(&cm.to_dump_bytes()).unwrap();
        assert_eq!(back.planes(), &[0.5, 0.0, 1.0, 0.0]);
        assert!(ProbMapSet::from_bytes(&cm.to_dump_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn decide_invariant_under_positive_scaling(
            values in proptest::collection::vec(0.0f64..1.0, 3 * 12),
            factor in 0.01f64..100.0,
        ) {
            let cm = ClassMembership::new(4, 3, 3, values).unwrap();
            prop_assert_eq!(decide(&cm), decide(&cm.scaled(factor)));
            prop_assert_eq!(decide(&cm), decide(&cm.scaled(3.7)));
        }

        #[test]
        fn combine_is_linear_in_weights(
            raw in proptest::collection::vec(0.05f64..1.0, 2 * 2 * 6),
            w1 in proptest::collection::vec(0.0f64..1.0, 4),
            w2 in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            let maps: Vec<ProbMapSet> = raw.chunks(12).map(|c| {
                let mut planes = vec![0f32; 12];
                for p in 0..6 {
                    let s = c[p] + c[6 + p];
                    planes[p] = (c[p] / s) as f32;
                    planes[6 + p] = 1.0 - planes[p];
                }
                ProbMapSet::new(3, 2, 2, planes).unwrap()
            }).collect();
            let a = WeightMatrix::from_rows(w1.chunks(2).map(<[f64]>::to_vec).collect()).unwrap();
            let b = WeightMatrix::from_rows(w2.chunks(2).map(<[f64]>::to_vec).collect()).unwrap();
            let sum = WeightMatrix::from_rows(
                w1.iter().zip(&w2).map(|(x, y)| x + y).collect::<Vec<_>>().chunks(2).map(<[f64]>::to_vec).collect()
            ).unwrap();
            let (ca, cb, cs) = (combine(&maps, &a).unwrap(), combine(&maps, &b).unwrap(), combine(&maps, &sum).unwrap());
            for i in 0..cs.planes().len() {
                prop_assert!((cs.planes()[i] - ca.planes()[i] - cb.planes()[i]).abs() <= 1e-12);
            }
        }
    }
}
