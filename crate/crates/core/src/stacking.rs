//! Two-layer stacking: cross-validated probability maps from the first layer
//! become extra image channels for the second layer, whose cross-validated
//! predictions feed one weighted least-squares fit per class.
//!
//! Training order:
//!
//! 1. partition the items into `T` folds and, for every fold and learner,
//!    train on the other folds and segment the held-out items;
//! 2. append those `M·K` maps to each image (`C + M·K` channels);
//! 3. repeat the cross-validation on the augmented set and stream every
//!    pixel's predictions into per-class Gram systems;
//! 4. solve for the per-class weights;
//! 5. train the final first- and second-layer models on all items.
//!
//! The one-layer variant stops after step 1 and fits the weights on the
//! first-layer maps directly.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combiner::{combine, decide, ClassMembership};
use crate::error::{Error, Result, ResultExt};
use crate::exec::{self, Workers};
use crate::imagery::{read_file, write_file, ChannelImage, Dataset, LabelImage, ProbMapSet, Sample};
use crate::learners::{Learner, Segment, SegmenterSpec, TrainedSegmenter};
use crate::solver::{GramSystem, SolverMode, WeightMatrix};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_SEED: u64 = 20_200_917;

/// Assignment of items to `T` disjoint folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    folds: usize,
    assignment: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    /// Shuffles `0..n` with `seed` and deals the items round-robin.
    pub fn new(n: usize, folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::Hyperparameter(format!("fold count {folds} < 2")));
        }
        if folds > n {
            return Err(Error::Hyperparameter(format!(
                "fold count {folds} exceeds item count {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0; n];
        for (pos, &item) in order.iter().enumerate() {
            assignment[item] = pos % folds;
        }
        Ok(Self {
            folds,
            assignment,
            seed,
        })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn items(&self) -> usize {
        self.assignment.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self, item: usize) -> usize {
        self.assignment[item]
    }

    /// Items of fold `t`, ascending.
    pub fn members(&self, t: usize) -> Vec<usize> {
        (0..self.items()).filter(|&i| self.assignment[i] == t).collect()
    }

    /// Items outside fold `t`, ascending.
    pub fn complement(&self, t: usize) -> Vec<usize> {
        (0..self.items()).filter(|&i| self.assignment[i] != t).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.folds];
        for &t in &self.assignment {
            s[t] += 1;
        }
        s
    }
}

/// Cross-validated maps: `maps[item][k]` comes from learner `k` trained
/// without the item's fold.
pub fn out_of_fold_maps<L: Learner>(
    data: &Dataset,
    learners: &[L],
    plan: &FoldPlan,
) -> Result<Vec<Vec<ProbMapSet>>> {
    if plan.items() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "fold plan covers {} items, dataset has {}",
            plan.items(),
            data.len()
        )));
    }
    let k_count = learners.len();
    let jobs = plan.folds() * k_count;
    let results = exec::try_map_range(jobs, |job| {
        let (t, k) = (job / k_count, job % k_count);
        let ctx = || format!("fold {t}, model {k}");
        let train = data.subset(&plan.complement(t)).context_with(ctx)?;
        let model = learners[k].learn(&train).context_with(ctx)?;
        plan.members(t)
            .into_iter()
            .map(|i| {
                let s = data.item(i);
                model.segment(&s.image, &s.stem).map(|pm| (i, pm))
            })
            .collect::<Result<Vec<_>>>()
            .context_with(ctx)
    })?;

    let mut slots: Vec<Vec<Option<ProbMapSet>>> = vec![vec![None; k_count]; data.len()];
    for (job, maps) in results.into_iter().enumerate() {
        let k = job % k_count;
        for (i, pm) in maps {
            slots[i][k] = Some(pm);
        }
    }
    Ok(slots
        .into_iter()
        .map(|row| row.into_iter().map(|m| m.expect("every item is in one fold")).collect())
        .collect())
}

/// Appends the maps as channels: original `C` channels, then for each model
/// `k` its `M` class planes in order. Channel `C + k·M + m` holds `P_k(m)`.
pub fn augment(image: &ChannelImage, maps: &[ProbMapSet]) -> Result<ChannelImage> {
    let n = image.pixels();
    let mut data = Vec::with_capacity(n * (image.channels() + maps.iter().map(ProbMapSet::classes).sum::<usize>()));
    data.extend_from_slice(image.data());
    let mut extra = 0;
    for (k, pm) in maps.iter().enumerate() {
        if pm.width() != image.width() || pm.height() != image.height() {
            return Err(Error::DimensionMismatch(format!(
                "map {k} is {}x{}, image is {}x{}",
                pm.width(),
                pm.height(),
                image.width(),
                image.height()
            )));
        }
        if k > 0 && pm.classes() != maps[0].classes() {
            return Err(Error::DimensionMismatch(format!(
                "map {k} has {} classes, map 0 has {}",
                pm.classes(),
                maps[0].classes()
            )));
        }
        data.extend_from_slice(pm.planes());
        extra += pm.classes();
    }
    ChannelImage::new(image.width(), image.height(), image.channels() + extra, data)
}

/// The second-layer training set: every image augmented with its maps.
pub fn augment_dataset(data: &Dataset, maps: &[Vec<ProbMapSet>]) -> Result<Dataset> {
    if maps.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} map sets for {} items",
            maps.len(),
            data.len()
        )));
    }
    let items = exec::try_map_range(data.len(), |i| {
        let s = data.item(i);
        Ok(Sample {
            stem: s.stem.clone(),
            image: augment(&s.image, &maps[i])?,
            mask: s.mask.clone(),
        })
    })?;
    Dataset::new(format!("{}*", data.name()), data.classes(), items)
}

/// Number of regression rows `N·W·H` for `n` images of `w x h`.
pub fn second_level_row_count(n: u64, width: u64, height: u64) -> u64 {
    n * width * height
}

/// Columns of the stacked prediction matrix: `M·K`.
pub fn second_level_column_count(classes: usize, models: usize) -> usize {
    classes * models
}

/// Streams one image's rows into the per-class systems: for class `m` each
/// pixel contributes `[P_1(m), .., P_K(m)]` with target `[label == m]`.
pub fn accumulate_item(maps: &[ProbMapSet], mask: &LabelImage, systems: &mut [GramSystem]) -> Result<()> {
    let k_count = maps.len();
    if systems.iter().any(|s| s.k() != k_count) {
        return Err(Error::DimensionMismatch("system size differs from model count".into()));
    }
    for (k, pm) in maps.iter().enumerate() {
        if pm.width() != mask.width() || pm.height() != mask.height() || pm.classes() != systems.len() {
            return Err(Error::DimensionMismatch(format!(
                "map {k} is {}x{}x{}, mask {}x{} with {} classes",
                pm.width(),
                pm.height(),
                pm.classes(),
                mask.width(),
                mask.height(),
                systems.len()
            )));
        }
    }
    let mut row = vec![0f64; k_count];
    for (m, sys) in systems.iter_mut().enumerate() {
        let planes: Vec<&[f32]> = maps.iter().map(|pm| pm.plane(m)).collect();
        for (p, &label) in mask.labels().iter().enumerate() {
            for (slot, plane) in row.iter_mut().zip(&planes) {
                *slot = plane[p] as f64;
            }
            sys.add_row(&row, (label as usize == m) as u8 as f64);
        }
    }
    Ok(())
}

/// Compressed second-level data: per-class Gram systems over all rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondLevelSummary {
    pub rows: u64,
    pub columns: usize,
    pub systems: Vec<GramSystem>,
}

impl SecondLevelSummary {
    fn from_items(per_item: Vec<Vec<GramSystem>>, classes: usize, models: usize) -> Result<Self> {
        let mut systems = vec![GramSystem::new(models); classes];
        for item in &per_item {
            for (total, part) in systems.iter_mut().zip(item) {
                total.merge(part)?;
            }
        }
        Ok(Self {
            rows: systems.first().map_or(0, GramSystem::rows),
            columns: second_level_column_count(classes, models),
            systems,
        })
    }
}

fn item_systems(maps: &[ProbMapSet], mask: &LabelImage, classes: usize) -> Result<Vec<GramSystem>> {
    let mut systems = vec![GramSystem::new(maps.len()); classes];
    accumulate_item(maps, mask, &mut systems)?;
    Ok(systems)
}

/// Summarizes already-computed per-item maps (the one-layer fit).
pub fn summarize_maps(data: &Dataset, maps: &[Vec<ProbMapSet>]) -> Result<SecondLevelSummary> {
    let models = maps.first().map_or(0, Vec::len);
    let per_item = exec::try_map_range(data.len(), |i| {
        item_systems(&maps[i], &data.item(i).mask, data.classes())
    })?;
    SecondLevelSummary::from_items(per_item, data.classes(), models)
}

/// Cross-validated second-level predictions, streamed fold by fold into
/// Gram systems. Each held-out item's maps are dropped once accumulated, so
/// the full `N·W·H x M·K` matrix never exists in memory. Per-item systems
/// are merged in item order, so the result does not depend on scheduling.
pub fn assemble_second_level<L: Learner>(
    data: &Dataset,
    learners: &[L],
    plan: &FoldPlan,
) -> Result<SecondLevelSummary> {
    if plan.items() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "fold plan covers {} items, dataset has {}",
            plan.items(),
            data.len()
        )));
    }
    let classes = data.classes();
    let folds = exec::try_map_range(plan.folds(), |t| {
        let train = data.subset(&plan.complement(t))?;
        let models = exec::try_map_range(learners.len(), |k| {
            learners[k]
                .learn(&train)
                .context_with(|| format!("fold {t}, model {k}"))
        })?;
        let members = plan.members(t);
        let systems = exec::try_map(&members, |&i| {
            let s = data.item(i);
            let maps = models
                .iter()
                .map(|m| m.segment(&s.image, &s.stem))
                .collect::<Result<Vec<_>>>()
                .context_with(|| format!("fold {t}, item `{}`", s.stem))?;
            item_systems(&maps, &s.mask, classes)
        })?;
        Ok::<_, Error>(members.into_iter().zip(systems).collect::<Vec<_>>())
    })?;
    let mut per_item: Vec<Option<Vec<GramSystem>>> = vec![None; data.len()];
    for (i, sys) in folds.into_iter().flatten() {
        per_item[i] = Some(sys);
    }
    SecondLevelSummary::from_items(
        per_item.into_iter().map(|s| s.expect("every item is in one fold")).collect(),
        classes,
        learners.len(),
    )
}

/// Solves one weight column per class.
pub fn fit_weights(summary: &SecondLevelSummary, mode: SolverMode) -> Result<WeightMatrix> {
    let columns = exec::try_map(&summary.systems, |sys| mode.solve(sys))
        .map_err(|e| e.context(format!("{} weight fit", mode.name())))?;
    WeightMatrix::from_columns(&columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EnsembleMode {
    #[default]
    TwoLayer,
    /// First layer plus weights, no second layer.
    OneLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub learners: Vec<SegmenterSpec>,
    /// Second-layer learners; defaults to `learners`.
    pub layer2_learners: Option<Vec<SegmenterSpec>>,
    pub folds: usize,
    pub seed: u64,
    pub solver: SolverMode,
    pub mode: EnsembleMode,
    pub workers: Workers,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            learners: SegmenterSpec::reference_set(),
            layer2_learners: None,
            folds: DEFAULT_FOLDS,
            seed: DEFAULT_SEED,
            solver: SolverMode::default(),
            mode: EnsembleMode::default(),
            workers: Workers::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub classes: usize,
    pub models: usize,
    pub layer2_models: usize,
    pub folds: usize,
    pub channels: usize,
    pub seed: u64,
    pub mode: EnsembleMode,
    pub solver: SolverMode,
    pub learners: Vec<SegmenterSpec>,
    pub layer2_learners: Vec<SegmenterSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub manifest: Manifest,
    pub layer1: Vec<TrainedSegmenter>,
    /// Empty in one-layer mode.
    pub layer2: Vec<TrainedSegmenter>,
    pub weights: WeightMatrix,
}

/// What the weight fit saw, for inspection and regression checks.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EnsembleModel,
    pub summary: SecondLevelSummary,
    pub first_layer_plan: FoldPlan,
    pub second_layer_plan: Option<FoldPlan>,
    pub timings: Vec<(&'static str, Duration)>,
}

/// Runs the full training procedure.
pub fn train_ensemble(data: &Dataset, cfg: &EnsembleConfig) -> Result<TrainOutcome> {
    cfg.workers.install(|| train_inner(data, cfg))
}

fn train_inner(data: &Dataset, cfg: &EnsembleConfig) -> Result<TrainOutcome> {
    if cfg.learners.is_empty() {
        return Err(Error::Hyperparameter("at least one learner is required".into()));
    }
    for spec in cfg.learners.iter().chain(cfg.layer2_learners.iter().flatten()) {
        spec.validate()?;
    }
    let layer2_specs = cfg.layer2_learners.clone().unwrap_or_else(|| cfg.learners.clone());
    if layer2_specs.is_empty() {
        return Err(Error::Hyperparameter("at least one second-layer learner is required".into()));
    }
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, Duration)>| {
        timings.push((name, clock.elapsed()));
        clock = Instant::now();
    };

    let plan = FoldPlan::new(data.len(), cfg.folds, cfg.seed)?;
    let oof = out_of_fold_maps(data, &cfg.learners, &plan).context_with(|| "first-layer cross-validation".into())?;
    lap("first-layer cross-validation", &mut timings);

    let (summary, second_plan, augmented) = match cfg.mode {
        EnsembleMode::OneLayer => (summarize_maps(data, &oof)?, None, None),
        EnsembleMode::TwoLayer => {
            let augmented = augment_dataset(data, &oof).context_with(|| "augmentation".into())?;
            drop(oof);
            let plan2 = FoldPlan::new(data.len(), cfg.folds, cfg.seed.wrapping_add(1))?;
            let summary = assemble_second_level(&augmented, &layer2_specs, &plan2)
                .context_with(|| "second-layer cross-validation".into())?;
            lap("second-layer cross-validation", &mut timings);
            (summary, Some(plan2), Some(augmented))
        }
    };

    let weights = fit_weights(&summary, cfg.solver)?;
    lap("weight fit", &mut timings);

    let layer1 = exec::try_map(&cfg.learners, |spec| spec.learn(data))
        .context_with(|| "final first-layer training".into())?;
    let layer2 = match &augmented {
        Some(aug) => exec::try_map(&layer2_specs, |spec| spec.learn(aug))
            .context_with(|| "final second-layer training".into())?,
        None => Vec::new(),
    };
    lap("final training", &mut timings);

    let manifest = Manifest {
        classes: data.classes(),
        models: cfg.learners.len(),
        layer2_models: layer2.len(),
        folds: cfg.folds,
        channels: data.channels(),
        seed: cfg.seed,
        mode: cfg.mode,
        solver: cfg.solver,
        learners: cfg.learners.clone(),
        layer2_learners: if cfg.mode == EnsembleMode::TwoLayer {
            layer2_specs
        } else {
            Vec::new()
        },
    };
    Ok(TrainOutcome {
        model: EnsembleModel {
            manifest,
            layer1,
            layer2,
            weights,
        },
        summary,
        first_layer_plan: plan,
        second_layer_plan: second_plan,
        timings,
    })
}

/// Output of the test procedure for one image.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub labels: LabelImage,
    pub membership: ClassMembership,
    /// Maps of the final first-layer models.
    pub layer1: Vec<ProbMapSet>,
}

impl Prediction {
    /// Class memberships normalized to sum to one per pixel.
    pub fn normalized_membership(&self) -> Result<ProbMapSet> {
        self.membership.normalized()
    }
}

impl EnsembleModel {
    pub fn classes(&self) -> usize {
        self.manifest.classes
    }

    pub fn channels(&self) -> usize {
        self.manifest.channels
    }

    /// First layer, augmentation, second layer, weighted combination,
    /// argmax (ties to the lowest class).
    pub fn predict(&self, image: &ChannelImage, stem: &str) -> Result<Prediction> {
        if image.channels() != self.channels() {
            return Err(Error::ChannelMismatch {
                expected: self.channels(),
                got: image.channels(),
            });
        }
        let layer1 = self
            .layer1
            .iter()
            .map(|m| m.segment(image, stem))
            .collect::<Result<Vec<_>>>()
            .context_with(|| format!("first layer on `{stem}`"))?;
        let membership = if self.layer2.is_empty() {
            combine(&layer1, &self.weights)?
        } else {
            let augmented = augment(image, &layer1)?;
            let layer2 = self
                .layer2
                .iter()
                .map(|m| m.segment(&augmented, stem))
                .collect::<Result<Vec<_>>>()
                .context_with(|| format!("second layer on `{stem}`"))?;
            combine(&layer2, &self.weights)?
        };
        Ok(Prediction {
            labels: decide(&membership),
            membership,
            layer1,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let l1 = dir.join("layer1");
        let l2 = dir.join("layer2");
        for d in [dir, &l1, &l2] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for (k, m) in self.layer1.iter().enumerate() {
            m.save(&l1.join(format!("{k}.model")))?;
        }
        for (k, m) in self.layer2.iter().enumerate() {
            m.save(&l2.join(format!("{k}.model")))?;
        }
        write_json(&dir.join("weights.json"), &self.weights)?;
        write_json(&dir.join("manifest.json"), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let weights: WeightMatrix = read_json(&dir.join("weights.json"))?;
        let layer1 = (0..manifest.models)
            .map(|k| TrainedSegmenter::load(&dir.join("layer1").join(format!("{k}.model"))))
            .collect::<Result<Vec<_>>>()?;
        let layer2 = (0..manifest.layer2_models)
            .map(|k| TrainedSegmenter::load(&dir.join("layer2").join(format!("{k}.model"))))
            .collect::<Result<Vec<_>>>()?;
        let fused = if layer2.is_empty() { layer1.len() } else { layer2.len() };
        if weights.models() != fused || weights.classes() != manifest.classes {
            return Err(Error::DimensionMismatch(format!(
                "weights are {}x{}, manifest expects {}x{}",
                weights.models(),
                weights.classes(),
                fused,
                manifest.classes
            )));
        }
        Ok(Self {
            manifest,
            layer1,
            layer2,
            weights,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_items_five_folds() {
        let plan = FoldPlan::new(10, 5, 1).unwrap();
        assert_eq!(plan.sizes(), vec![2; 5]);
        let mut all: Vec<usize> = (0..5).flat_map(|t| plan.members(t)).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn seven_items_five_folds() {
        let mut sizes = FoldPlan::new(7, 5, 3).unwrap().sizes();
        sizes.sort_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![2, 2, 1, 1, 1]);
    }

    #[test]
    fn plan_is_deterministic_and_validated() {
        assert_eq!(FoldPlan::new(9, 3, 4).unwrap(), FoldPlan::new(9, 3, 4).unwrap());
        assert!(FoldPlan::new(4, 5, 0).is_err());
        assert!(FoldPlan::new(4, 1, 0).is_err());
    }

    #[test]
    fn augment_constant_half_map() {
        let img = ChannelImage::new(2, 1, 1, vec![0.1, 0.9]).unwrap();
        let pm = ProbMapSet::constant(2, 1, &[0.5, 0.5]).unwrap();
        let out = augment(&img, &[pm]).unwrap();
        assert_eq!(out.channels(), 3);
        assert_eq!(out.data(), &[0.1, 0.9, 0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn augment_rejects_mismatched_map() {
        let img = ChannelImage::new(2, 1, 1, vec![0.1, 0.9]).unwrap();
        let pm = ProbMapSet::constant(1, 1, &[0.5, 0.5]).unwrap();
        assert!(augment(&img, &[pm]).is_err());
    }

    #[test]
    fn row_and_column_counts() {
        assert_eq!(second_level_row_count(800, 640, 544), 278_528_000);
        assert_eq!(second_level_row_count(2, 2, 2), 8);
        assert_eq!(second_level_column_count(3, 6), 18);
    }

    #[test]
    fn accumulate_item_hand_check() {
        let mask = LabelImage::new(2, 1, vec![0, 1]).unwrap();
        let a = ProbMapSet::new(2, 1, 2, vec![1.0, 0.25, 0.0, 0.75]).unwrap();
        let b = ProbMapSet::new(2, 1, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let mut sys = vec![GramSystem::new(2), GramSystem::new(2)];
        accumulate_item(&[a, b], &mask, &mut sys).unwrap();
        // class 0 rows: (1, .5) -> 1 and (.25, .5) -> 0
        assert_eq!(sys[0].gram(), &[1.0625, 0.625, 0.625, 0.5]);
        assert_eq!(sys[0].rhs(), &[1.0, 0.5]);
        // class 1 rows: (0, .5) -> 0 and (.75, .5) -> 1
        assert_eq!(sys[1].rhs(), &[0.75, 0.5]);
        assert_eq!(sys[1].rows(), 2);
    }

    proptest! {
        #[test]
        fn fold_plan_invariants(n in 2usize..200, t in 2usize..12, seed in any::<u64>()) {
            prop_assume!(t <= n);
            let plan = FoldPlan::new(n, t, seed).unwrap();
            let sizes = plan.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for i in 0..n {
                prop_assert!(plan.fold_of(i) < t);
                prop_assert!(!plan.complement(plan.fold_of(i)).contains(&i));
            }
        }

        #[test]
        fn augment_channel_index_arithmetic(
            c in 1usize..4, m in 2usize..4, k in 1usize..4, seed in any::<u64>()
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (3usize, 2usize);
            let n = w * h;
            let img = ChannelImage::new(w, h, c, (0..n * c).map(|_| rng.random::<f32>()).collect()).unwrap();
            let maps: Vec<ProbMapSet> = (0..k).map(|_| {
                let raw: Vec<f64> = (0..n * m).map(|_| rng.random::<f64>() + 0.01).collect();
                let mut planes = vec![0f32; n * m];
                for p in 0..n {
                    let s: f64 = (0..m).map(|j| raw[j * n + p]).sum();
                    for j in 0..m { planes[j * n + p] = (raw[j * n + p] / s) as f32; }
                }
                ProbMapSet::new(w, h, m, planes).unwrap()
            }).collect();
            let out = augment(&img, &maps).unwrap();
            prop_assert_eq!(out.channels(), c + m * k);
            for kk in 0..k {
                for mm in 0..m {
                    prop_assert_eq!(out.plane(c + kk * m + mm), maps[kk].plane(mm));
                }
            }
            for cc in 0..c {
                prop_assert_eq!(out.plane(cc), img.plane(cc));
            }
        }
    }
}
