//! Run configuration: JSON file values, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use segstack::learners::SegmenterSpec;
use segstack::solver::SolverMode;
use segstack::stacking::{DEFAULT_FOLDS, DEFAULT_SEED};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub classes: usize,
    pub learners: Vec<SegmenterSpec>,
    pub layer2_learners: Option<Vec<SegmenterSpec>>,
    pub folds: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    pub solver: SolverMode,
    pub ole: bool,
    pub legacy_empty_zero: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            classes: 2,
            learners: SegmenterSpec::reference_set(),
            layer2_learners: None,
            folds: DEFAULT_FOLDS,
            seed: DEFAULT_SEED,
            workers: None,
            solver: SolverMode::Bvls,
            ole: false,
            legacy_empty_zero: false,
        }
    }
}

/// Flag values; `None` keeps the file (or default) value.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub classes: Option<usize>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub solver: Option<SolverMode>,
    pub ole: bool,
    pub legacy_empty_zero: bool,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("reading config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("parsing config {}: {e}", path.display())))
    }

    /// Defaults, then the optional file, then flags.
    pub fn resolve(file: Option<&Path>, flags: Overrides) -> Result<Self, Failure> {
        let mut cfg = match file {
            Some(p) => Self::read(p)?,
            None => Self::default(),
        };
        if flags.data.is_some() {
            cfg.data = flags.data;
        }
        if flags.out.is_some() {
            cfg.out = flags.out;
        }
        if let Some(m) = flags.classes {
            cfg.classes = m;
        }
        if let Some(t) = flags.folds {
            cfg.folds = t;
        }
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if flags.workers.is_some() {
            cfg.workers = flags.workers;
        }
        if let Some(s) = flags.solver {
            cfg.solver = s;
        }
        cfg.ole |= flags.ole;
        cfg.legacy_empty_zero |= flags.legacy_empty_zero;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.learners.is_empty() {
            return Err(Failure::Config("at least one learner is required".into()));
        }
        if self.folds < 2 {
            return Err(Failure::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(2..=256).contains(&self.classes) {
            return Err(Failure::Config(format!("classes must be in 2..=256, got {}", self.classes)));
        }
        if self.workers == Some(0) {
            return Err(Failure::Config("workers must be at least 1".into()));
        }
        for spec in self.learners.iter().chain(self.layer2_learners.iter().flatten()) {
            spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
        }
        Ok(())
    }
}
