//! Kernel-perturbation boosting of support vector machines for class-imbalanced data.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataio`]: CSV ingestion, standardization, stratified folds, imbalance-preserving subsampling.
//! - [`kernels`]: RBF Gram matrices and the conformal rescaling `K'(x, x') = D(x) K(x, x') D(x')`.
//! - [`svm`]: an SMO solver for the C-SVM dual on a precomputed kernel.
//! - [`boost`]: the KPBoost-SVM training loop and weighted-vote prediction.
//! - [`roi`]: the region-of-influence variant (KPBoostROI-SVM).
//! - [`disjuncts`]: per-class neighbourhood-graph disjunct identification and knee selection.
//! - [`metrics`]: Gmean, AUC, GSDI and the μ trade-off measure for classifier selection.
//! - [`multiclass`]: one-versus-one and one-versus-all wrappers.
//! - [`eval`]: fold evaluation and cross-validation plumbing.

pub mod boost;
pub mod dataio;
pub mod disjuncts;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod metrics;
pub mod multiclass;
pub mod roi;
pub mod svm;

pub use boost::{BoostParams, Ensemble, Prediction, RoundRecord};
pub use dataio::{Dataset, FoldPlan, Standardizer};
pub use disjuncts::{DisjunctOptions, DisjunctPartition, KappaDeltaCurve};
pub use error::{Error, Result};
pub use kernels::KernelMatrix;
pub use metrics::{ClassAccuracyTable, ConfusionMatrix};
pub use multiclass::{OvaEnsemble, OvoEnsemble};
pub use roi::{RoiParams, RoiRadii};
pub use svm::{SvmSettings, TrainedSvm};

/// Sign with the tie rule used throughout: `0` maps to `+1`.
#[inline]
pub fn sign(value: f64) -> f64 {
    if value >= 0.0 {
        1.0
    } else {
        -1.0
    }
}
