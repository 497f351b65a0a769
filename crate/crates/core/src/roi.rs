//! KPBoostROI-SVM: perturbation retention around misclassified points.
//!
//! Correctly classified points that lie within a class radius of a misclassified point of
//! that class keep their perturbation parameter, so the kernel stays sharp around errors.
//! At test time each query borrows the parameter of its nearest training point.

use log::warn;
use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::boost::{self, BoostParams, Ensemble, Prediction, VoteAccumulator};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{self, PerturbationState};

pub const DEFAULT_THETA: f64 = 0.6;

/// Scaling values searched by model selection.
pub const THETA_GRID: [f64; 3] = [0.6, 0.7, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiParams {
    pub base: BoostParams,
    pub theta: f64,
}

impl RoiParams {
    pub fn new(base: BoostParams) -> Self {
        Self {
            base,
            theta: DEFAULT_THETA,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Parameter(format!(
                "theta must lie in (0, 1], got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiRadii {
    pub roi_pos: f64,
    pub roi_neg: f64,
}

/// ROI settings stored with a fitted ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiMeta {
    pub radii: RoiRadii,
    pub theta: f64,
}

fn distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// `theta` times the mean distance from each point of `class` to its nearest other point of
/// the same class.
pub fn class_roi(train: &Dataset, class: usize, theta: f64) -> Result<f64> {
    if class >= train.num_classes() {
        return Err(Error::Parameter(format!("class {class} out of range")));
    }
    let idx = train.class_indices(class);
    if idx.len() < 2 {
        warn!(
            "class {class} has {} point(s); using a zero ROI radius",
            idx.len()
        );
        return Ok(0.0);
    }
    let x = train.features();
    let total: f64 = idx
        .iter()
        .map(|&i| {
            idx.iter()
                .filter(|&&j| j != i)
                .map(|&j| distance(x.row(i), x.row(j)))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(theta * total / idx.len() as f64)
}

/// Drops from the retained set every point within `roi_pos` of a misclassified positive point
/// or within `roi_neg` of a misclassified negative point (closed balls).
pub fn adjust_retention(
    correct: &[bool],
    y: &[f64],
    x: ArrayView2<'_, f64>,
    radii: &RoiRadii,
) -> Result<Vec<bool>> {
    let n = correct.len();
    if y.len() != n || x.nrows() != n {
        return Err(Error::shape(
            format!("{n} points"),
            format!("{} labels, {} rows", y.len(), x.nrows()),
        ));
    }
    let mut keep = correct.to_vec();
    for m in (0..n).filter(|&m| !correct[m]) {
        let radius = if y[m] > 0.0 {
            radii.roi_pos
        } else {
            radii.roi_neg
        };
        for (i, k) in keep.iter_mut().enumerate() {
            if *k && distance(x.row(i), x.row(m)) <= radius {
                *k = false;
            }
        }
    }
    Ok(keep)
}

/// Index of the nearest training row for each query row, lowest index on ties.
pub fn nearest_train(train: ArrayView2<'_, f64>, test: ArrayView2<'_, f64>) -> Vec<usize> {
    test.rows()
        .into_iter()
        .map(|q| {
            let mut best = (0, f64::INFINITY);
            for (i, r) in train.rows().into_iter().enumerate() {
                let d = distance(q, r);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        })
        .collect()
}

/// Fits KPBoostROI-SVM with the minority class as the positive class.
pub fn fit_roi(train: &Dataset, params: &RoiParams) -> Result<Ensemble> {
    fit_roi_with_positive(train, params, train.minority_class())
}

/// Fits KPBoostROI-SVM with an explicit positive class.
pub fn fit_roi_with_positive(
    train: &Dataset,
    params: &RoiParams,
    positive: usize,
) -> Result<Ensemble> {
    params.validate()?;
    if positive > 1 || train.num_classes() != 2 {
        return Err(Error::Parameter(format!(
            "binary boosting needs exactly two classes, got {}",
            train.num_classes()
        )));
    }
    let radii = RoiRadii {
        roi_pos: class_roi(train, positive, params.theta)?,
        roi_neg: class_roi(train, 1 - positive, params.theta)?,
    };
    let meta = RoiMeta {
        radii,
        theta: params.theta,
    };
    boost::fit_impl(train, &params.base, positive, Some(meta))
}

/// Prediction with query factors `exp(-k_{nn(j)}^t f_{t-1}(x_j)^2)`.
pub fn predict_roi(
    ens: &Ensemble,
    train: ArrayView2<'_, f64>,
    test: ArrayView2<'_, f64>,
) -> Result<Prediction> {
    ens.check_train(train)?;
    let nn = nearest_train(train, test);
    let m = test.nrows();
    let mut k_cross = kernels::cross_gram(train, test, ens.sigma)?;
    let mut f_prev = vec![0.0; m];
    let mut acc = VoteAccumulator::new(m);
    let last = ens.last_voting_round()?;
    for (t, record) in ens.rounds[..=last].iter().enumerate() {
        let k_t = &ens.perturbation_history[t];
        let state = PerturbationState {
            k: nn.iter().map(|&g| k_t[g]).collect(),
            round: t + 1,
        };
        let d_test = kernels::transformation_factors(&state, &f_prev)?;
        k_cross = kernels::perturb_cross(k_cross.view(), &record.d_train, &d_test)?;
        let f = record.model.decision_values(k_cross.view())?;
        acc.add(record.vote_weight, &f);
        f_prev = f;
    }
    acc.finish(ens)
}
