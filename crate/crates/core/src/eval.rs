//! Fold-level evaluation shared by the CLI and the integration tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::BoostParams;
use crate::dataio::{self, Dataset, Fold, FoldPlan};
use crate::disjuncts::DisjunctPartition;
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionMatrix};
use crate::multiclass::{self, Learner, Model};
use crate::roi::RoiParams;
use crate::svm::SvmSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Plain SVM: a single unperturbed round.
    Svm,
    KpBoost,
    KpRoi,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Svm => "svm",
            Algorithm::KpBoost => "kpboost",
            Algorithm::KpRoi => "kproi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decomposition {
    /// Binary for two classes, one-versus-one otherwise.
    Auto,
    Ovo,
    Ova,
}

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub decomposition: Decomposition,
    pub sigma: f64,
    pub cost: f64,
    /// Unused by [`Algorithm::Svm`].
    pub step: f64,
    /// Used by [`Algorithm::KpRoi`] only.
    pub theta: f64,
    pub rounds: usize,
}

impl Cell {
    pub fn learner(&self) -> Learner {
        let base = BoostParams {
            rounds: self.rounds,
            step: self.step,
            sigma: self.sigma,
            cost: self.cost,
            svm: SvmSettings::default(),
        };
        match self.algorithm {
            Algorithm::Svm => Learner::KpBoost(BoostParams { rounds: 1, ..base }),
            Algorithm::KpBoost => Learner::KpBoost(base),
            Algorithm::KpRoi => Learner::KpRoi(RoiParams {
                base,
                theta: self.theta,
            }),
        }
    }
}

/// Fits the decomposition the cell asks for.
pub fn fit_model(train: &Dataset, cell: &Cell) -> Result<Model> {
    let learner = cell.learner();
    match (cell.decomposition, train.num_classes()) {
        (Decomposition::Auto, 2) => Ok(Model::Binary(learner.fit(train, None)?)),
        (Decomposition::Auto | Decomposition::Ovo, _) => {
            Ok(Model::Ovo(multiclass::fit_ovo(train, &learner)?))
        }
        (Decomposition::Ova, _) => Ok(Model::Ova(multiclass::fit_ova(train, &learner)?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub confusion: ConfusionMatrix,
    pub recalls: Vec<f64>,
    pub gmean: f64,
    pub auc: f64,
    pub gsdi: Option<f64>,
    pub predictions: Vec<usize>,
}

/// Trains on the fold's training rows, standardized with their own statistics, and scores
/// its test rows. GSDI is computed when a whole-dataset partition is supplied.
pub fn evaluate_fold(
    ds: &Dataset,
    fold_id: usize,
    fold: &Fold,
    cell: &Cell,
    partition: Option<&DisjunctPartition>,
) -> Result<FoldResult> {
    let (train, test) = dataio::normalize(&ds.select(&fold.train)?, &ds.select(&fold.test)?)?;
    let model = fit_model(&train, cell)?;
    let predictions = model.predict(train.features(), test.features())?;
    let confusion =
        ConfusionMatrix::from_predictions(test.labels(), &predictions, ds.num_classes())?;
    let recalls = confusion.recalls()?;
    let gmean = metrics::geometric_mean(&recalls);
    let auc = metrics::auc(&confusion)?;
    let gsdi = match partition {
        Some(p) => {
            let mut outcomes = vec![None; ds.len()];
            for (&i, (&pred, &truth)) in fold.test.iter().zip(predictions.iter().zip(test.labels()))
            {
                outcomes[i] = Some(pred == truth);
            }
            Some(metrics::gsdi(p, &outcomes)?)
        }
        None => None,
    };
    Ok(FoldResult {
        fold: fold_id,
        confusion,
        recalls,
        gmean,
        auc,
        gsdi,
        predictions,
    })
}

/// Every fold of `plan`, evaluated in parallel and returned in fold order.
pub fn cross_validate(
    ds: &Dataset,
    plan: &FoldPlan,
    cell: &Cell,
    partition: Option<&DisjunctPartition>,
) -> Vec<Result<FoldResult>> {
    plan.folds
        .par_iter()
        .enumerate()
        .map(|(i, f)| evaluate_fold(ds, i, f, cell, partition))
        .collect()
}

/// Stratified k-fold when every class has at least `folds` points, repeated stratified
/// hold-out otherwise.
pub fn fold_plan(ds: &Dataset, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::Parameter(format!(
            "need at least two folds, got {folds}"
        )));
    }
    match dataio::stratified_kfold(ds, folds, seed) {
        Err(Error::Stratification { .. }) => dataio::repeated_holdout(ds, folds, seed),
        other => other,
    }
}

/// Per-class mean recall, mean Gmean, mean AUC and mean GSDI over fold results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub recalls: Vec<f64>,
    pub gmean: f64,
    pub auc: f64,
    pub gsdi: Option<f64>,
}

pub fn summarize(results: &[FoldResult]) -> Result<CellSummary> {
    let n = results.len();
    if n == 0 {
        return Err(Error::MetricUndefined("no fold results".into()));
    }
    let classes = results[0].recalls.len();
    let mean = |f: &dyn Fn(&FoldResult) -> f64| results.iter().map(f).sum::<f64>() / n as f64;
    let recalls = (0..classes).map(|c| mean(&|r| r.recalls[c])).collect();
    let gsdi = if results.iter().all(|r| r.gsdi.is_some()) {
        Some(mean(&|r| r.gsdi.unwrap_or(0.0)))
    } else {
        None
    };
    Ok(CellSummary {
        recalls,
        gmean: mean(&|r| r.gmean),
        auc: mean(&|r| r.auc),
        gsdi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy() -> Dataset {
        let n = 40;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            let a = i as f64 * 0.77;
            let base = if i < 30 { 0.0 } else { 2.5 };
            base + if j == 0 { a.cos() } else { a.sin() }
        });
        let labels = (0..n).map(|i| usize::from(i >= 30)).collect();
        Dataset::from_labels(x, labels).unwrap()
    }

    fn cell(algorithm: Algorithm) -> Cell {
        Cell {
            algorithm,
            decomposition: Decomposition::Auto,
            sigma: 1.0,
            cost: 100.0,
            step: 0.01,
            theta: 0.6,
            rounds: 4,
        }
    }

    #[test]
    fn folds_cover_every_point_once() {
        let ds = toy();
        let plan = fold_plan(&ds, 5, 1).unwrap();
        let results: Vec<FoldResult> = cross_validate(&ds, &plan, &cell(Algorithm::KpBoost), None)
            .into_iter()
            .collect::<Result<_>>()
            .unwrap();
        let total: usize = results.iter().map(|r| r.confusion.total()).sum();
        assert_eq!(total, ds.len());
        let s = summarize(&results).unwrap();
        assert!(s.gmean > 0.5 && s.gsdi.is_none());
    }

    #[test]
    fn svm_cell_is_single_round() {
        let Learner::KpBoost(p) = cell(Algorithm::Svm).learner() else {
            panic!()
        };
        assert_eq!(p.rounds, 1);
        assert!(matches!(
            cell(Algorithm::KpRoi).learner(),
            Learner::KpRoi(_)
        ));
    }

    #[test]
    fn tiny_minority_uses_holdout() {
        let ds = toy().select(&(0..34).collect::<Vec<_>>()).unwrap();
        let plan = fold_plan(&ds, 10, 3).unwrap();
        assert_eq!(plan.folds_count(), 10);
        for f in &plan.folds {
            assert!(f.test.iter().any(|&i| ds.labels()[i] == 1));
        }
    }
}
