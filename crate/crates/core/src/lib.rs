//! Two-layer stacked ensembles for image segmentation.
//!
//! First-layer segmenters are cross-validated to produce per-class
//! probability maps for every training image; the maps are appended to the
//! images as channels and a second layer of segmenters is trained on the
//! result. Their cross-validated predictions are fused per class with
//! weights from a box-constrained least-squares fit, solved from streamed
//! normal equations so the pixel-level design matrix is never materialized.
//!
//! Modules:
//!
//! - [`imagery`]: rasters, probability maps, datasets and the `PMAP` format
//! - [`learners`]: the segmenter abstraction and reference learners
//! - [`stacking`]: fold planning, augmentation, training and prediction
//! - [`solver`]: Gram systems and the BVLS / NNLS / unconstrained solvers
//! - [`combiner`]: weighted class memberships and the final argmax
//! - [`metrics`]: Dice and average Hausdorff distance
//! - [`synth`]: deterministic synthetic segmentation datasets

pub mod combiner;
pub mod error;
pub mod exec;
pub mod imagery;
pub mod learners;
pub mod metrics;
pub mod solver;
pub mod stacking;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
