//! One-versus-one and one-versus-all wrappers around the binary ensembles.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{self, BoostParams, Ensemble, EnsembleBundle, Prediction};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::roi::{self, RoiParams};

/// Binary learner shared by every component problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Learner {
    KpBoost(BoostParams),
    KpRoi(RoiParams),
}

impl Learner {
    pub fn validate(&self) -> Result<()> {
        match self {
            Learner::KpBoost(p) => p.validate(),
            Learner::KpRoi(p) => p.validate(),
        }
    }

    /// Fits on a two-class dataset; `positive = None` picks the minority class.
    pub fn fit(&self, train: &Dataset, positive: Option<usize>) -> Result<Ensemble> {
        let positive = positive.unwrap_or_else(|| train.minority_class());
        match self {
            Learner::KpBoost(p) => boost::fit_with_positive(train, p, positive),
            Learner::KpRoi(p) => roi::fit_roi_with_positive(train, p, positive),
        }
    }
}

/// Rows of `ds` whose class is in `classes`, relabelled by position in `classes`.
fn slice(ds: &Dataset, classes: &[usize]) -> Result<(Vec<usize>, Dataset)> {
    let idx: Vec<usize> = (0..ds.len())
        .filter(|&i| classes.contains(&ds.labels()[i]))
        .collect();
    let features = ds.features().select(Axis(0), &idx);
    let labels = idx
        .iter()
        .map(|&i| {
            classes
                .iter()
                .position(|&c| c == ds.labels()[i])
                .unwrap_or(0)
        })
        .collect();
    let names = classes
        .iter()
        .map(|&c| ds.class_names()[c].clone())
        .collect();
    Ok((idx, Dataset::new(features, labels, names)?))
}

/// Two-class split of `ds` into `class` (label 1) and every other class (label 0).
fn one_vs_rest(ds: &Dataset, class: usize) -> Result<Dataset> {
    let labels = ds
        .labels()
        .iter()
        .map(|&l| usize::from(l == class))
        .collect();
    let names = vec!["rest".to_string(), ds.class_names()[class].clone()];
    Dataset::new(ds.features().to_owned(), labels, names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvoPair {
    pub class_a: usize,
    pub class_b: usize,
    /// Rows of the full training set this pair was fitted on.
    pub train_indices: Vec<usize>,
    /// Local class 0 is `class_a`, local class 1 is `class_b`.
    pub ensemble: Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvoEnsemble {
    pub pairs: Vec<OvoPair>,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvaEnsemble {
    /// Entry `c` separates class `c` (local 1, positive) from the rest (local 0).
    pub per_class: Vec<Ensemble>,
    pub classes: usize,
}

/// One ensemble per unordered class pair; the pair's minority class is positive.
pub fn fit_ovo(train: &Dataset, learner: &Learner) -> Result<OvoEnsemble> {
    learner.validate()?;
    let c = train.num_classes();
    if c < 2 {
        return Err(Error::DegenerateDataset("need at least two classes".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..c)
        .flat_map(|a| (a + 1..c).map(move |b| (a, b)))
        .collect();
    let fitted = pairs
        .par_iter()
        .map(|&(a, b)| {
            let wrap = |e: Error| Error::SubProblem {
                name: format!("{} vs {}", train.class_names()[a], train.class_names()[b]),
                source: Box::new(e),
            };
            let (idx, ds) = slice(train, &[a, b]).map_err(wrap)?;
            let ensemble = learner.fit(&ds, None).map_err(wrap)?;
            Ok(OvoPair {
                class_a: a,
                class_b: b,
                train_indices: idx,
                ensemble,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvoEnsemble {
        pairs: fitted,
        classes: c,
    })
}

/// Plurality vote; ties go to the larger summed |margin| of the votes received, then to the
/// lower class id.
pub fn predict_ovo(
    ens: &OvoEnsemble,
    train: ArrayView2<'_, f64>,
    test: ArrayView2<'_, f64>,
) -> Result<Vec<usize>> {
    let m = test.nrows();
    let preds = ens
        .pairs
        .par_iter()
        .map(|p| {
            let rows: Array2<f64> = train.select(Axis(0), &p.train_indices);
            p.ensemble.predict(rows.view(), test)
        })
        .collect::<Result<Vec<Prediction>>>()?;
    let mut votes = vec![vec![0usize; ens.classes]; m];
    let mut strength = vec![vec![0.0f64; ens.classes]; m];
    for (p, pred) in ens.pairs.iter().zip(&preds) {
        for j in 0..m {
            let winner = if pred.labels[j] == 0 {
                p.class_a
            } else {
                p.class_b
            };
            votes[j][winner] += 1;
            strength[j][winner] += pred.margins[j].abs();
        }
    }
    Ok((0..m)
        .map(|j| {
            let mut best = 0;
            for c in 1..ens.classes {
                let (v, bv) = (votes[j][c], votes[j][best]);
                if v > bv || (v == bv && strength[j][c] > strength[j][best]) {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// One class-versus-rest ensemble per class.
pub fn fit_ova(train: &Dataset, learner: &Learner) -> Result<OvaEnsemble> {
    learner.validate()?;
    let c = train.num_classes();
    if c < 2 {
        return Err(Error::DegenerateDataset("need at least two classes".into()));
    }
    let per_class = (0..c)
        .into_par_iter()
        .map(|k| {
            let wrap = |e: Error| Error::SubProblem {
                name: format!("{} vs rest", train.class_names()[k]),
                source: Box::new(e),
            };
            let ds = one_vs_rest(train, k).map_err(wrap)?;
            learner.fit(&ds, Some(1)).map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvaEnsemble {
        per_class,
        classes: c,
    })
}

/// Class with the largest weight-normalized decision value, lowest id on ties.
pub fn predict_ova(
    ens: &OvaEnsemble,
    train: ArrayView2<'_, f64>,
    test: ArrayView2<'_, f64>,
) -> Result<Vec<usize>> {
    let scores = ens
        .per_class
        .par_iter()
        .map(|e| e.predict(train, test).map(|p| p.scores))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..test.nrows())
        .map(|j| {
            let col: Vec<f64> = scores.iter().map(|s| s[j]).collect();
            crate::metrics::argmax(&col)
        })
        .collect())
}

/// Fitted model of any decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Binary(Ensemble),
    Ovo(OvoEnsemble),
    Ova(OvaEnsemble),
}

impl Model {
    pub fn predict(
        &self,
        train: ArrayView2<'_, f64>,
        test: ArrayView2<'_, f64>,
    ) -> Result<Vec<usize>> {
        match self {
            Model::Binary(e) => Ok(e.predict(train, test)?.labels),
            Model::Ovo(e) => predict_ovo(e, train, test),
            Model::Ova(e) => predict_ova(e, train, test),
        }
    }

    pub fn to_manifest(&self, class_names: &[String]) -> Manifest {
        let (decomposition, components) = match self {
            Model::Binary(e) => ("binary", vec![component(None, None, None, e)]),
            Model::Ovo(o) => (
                "ovo",
                o.pairs
                    .iter()
                    .map(|p| {
                        component(
                            Some(p.class_a),
                            Some(p.class_b),
                            Some(p.train_indices.clone()),
                            &p.ensemble,
                        )
                    })
                    .collect(),
            ),
            Model::Ova(o) => (
                "ova",
                o.per_class
                    .iter()
                    .enumerate()
                    .map(|(c, e)| component(Some(c), None, None, e))
                    .collect(),
            ),
        };
        Manifest {
            format_version: Manifest::VERSION,
            decomposition: decomposition.to_string(),
            class_names: class_names.to_vec(),
            components,
        }
    }

    pub fn from_manifest(manifest: Manifest) -> Result<Self> {
        if manifest.format_version != Manifest::VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        let classes = manifest.class_names.len();
        let mut parts = Vec::with_capacity(manifest.components.len());
        for c in manifest.components {
            parts.push((
                c.class_a,
                c.class_b,
                c.train_indices,
                Ensemble::from_bundle(c.ensemble)?,
            ));
        }
        match manifest.decomposition.as_str() {
            "binary" if parts.len() == 1 => Ok(Model::Binary(parts.remove(0).3)),
            "ovo" if parts.len() == classes * classes.saturating_sub(1) / 2 => {
                let pairs = parts
                    .into_iter()
                    .map(|(a, b, idx, ensemble)| match (a, b, idx) {
                        (Some(class_a), Some(class_b), Some(train_indices)) => Ok(OvoPair {
                            class_a,
                            class_b,
                            train_indices,
                            ensemble,
                        }),
                        _ => Err(Error::Format("ovo component lacks its class pair".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Model::Ovo(OvoEnsemble { pairs, classes }))
            }
            "ova" if parts.len() == classes => Ok(Model::Ova(OvaEnsemble {
                per_class: parts.into_iter().map(|p| p.3).collect(),
                classes,
            })),
            other => Err(Error::Format(format!(
                "manifest decomposition {other:?} does not match {} components for {classes} classes",
                parts.len()
            ))),
        }
    }
}

fn component(
    a: Option<usize>,
    b: Option<usize>,
    idx: Option<Vec<usize>>,
    e: &Ensemble,
) -> Component {
    Component {
        class_a: a,
        class_b: b,
        train_indices: idx,
        ensemble: e.to_bundle(),
    }
}

/// On-disk form of a fitted [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub decomposition: String,
    pub class_names: Vec<String>,
    pub components: Vec<Component>,
}

impl Manifest {
    pub const VERSION: u32 = 1;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub class_a: Option<usize>,
    pub class_b: Option<usize>,
    pub train_indices: Option<Vec<usize>>,
    pub ensemble: EnsembleBundle,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn blobs(centres: &[(f64, f64)], sizes: &[usize]) -> Dataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, (&(cx, cy), &n)) in centres.iter().zip(sizes).enumerate() {
            for k in 0..n {
                let a = k as f64 * 2.399;
                let r = 0.3 + 0.05 * k as f64;
                rows.push([cx + r * a.cos(), cy + r * a.sin()]);
                labels.push(c);
            }
        }
        let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        Dataset::from_labels(x, labels).unwrap()
    }

    fn learner() -> Learner {
        Learner::KpBoost(BoostParams::new(1.0, 100.0, 0.05).with_rounds(3))
    }

    #[test]
    fn component_counts() {
        let ds = blobs(
            &[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0), (4.0, 4.0), (2.0, 8.0)],
            &[6, 7, 8, 5, 6],
        );
        let ovo = fit_ovo(&ds, &learner()).unwrap();
        assert_eq!(ovo.pairs.len(), 10);
        for p in &ovo.pairs {
            assert!(p
                .train_indices
                .iter()
                .all(|&i| [p.class_a, p.class_b].contains(&ds.labels()[i])));
            assert_eq!(
                p.train_indices.len(),
                ds.class_counts()[p.class_a] + ds.class_counts()[p.class_b]
            );
        }
        let ova = fit_ova(&ds, &learner()).unwrap();
        assert_eq!(ova.per_class.len(), 5);
        let pred = predict_ovo(&ovo, ds.features(), ds.features()).unwrap();
        assert_eq!(pred, ds.labels());
        let pred = predict_ova(&ova, ds.features(), ds.features()).unwrap();
        assert_eq!(pred, ds.labels());
    }

    #[test]
    fn two_classes_match_binary() {
        let ds = blobs(&[(0.0, 0.0), (1.0, 0.5)], &[12, 5]);
        let ovo = fit_ovo(&ds, &learner()).unwrap();
        let Learner::KpBoost(params) = learner() else {
            unreachable!()
        };
        let bin = boost::fit(&ds, &params).unwrap();
        assert!(ovo.pairs[0].ensemble.same_model(&bin));
        let test = Array2::from_shape_fn((40, 2), |(i, j)| {
            (i as f64 * 0.05) - if j == 0 { 0.5 } else { 0.2 * j as f64 }
        });
        let a = predict_ovo(&ovo, ds.features(), test.view()).unwrap();
        let b = bin.predict(ds.features(), test.view()).unwrap().labels;
        assert_eq!(a, b);
    }

    #[test]
    fn cyclic_votes_fall_back_to_margin_then_id() {
        let ds = blobs(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)], &[5, 5, 5]);
        let mut ovo = fit_ovo(&ds, &learner()).unwrap();
        // force every pair to output its constant margin: a>b (0 beats 1), b>c (1 beats 2), c>a (2 beats 0)
        let winners = [(0, 1, 0usize), (0, 2, 2), (1, 2, 1)];
        for p in ovo.pairs.iter_mut() {
            let (_, _, w) = winners
                .iter()
                .find(|w| w.0 == p.class_a && w.1 == p.class_b)
                .copied()
                .unwrap();
            let local = usize::from(w == p.class_b);
            let sign = if local == p.ensemble.positive_class {
                1.0
            } else {
                -1.0
            };
            for r in p.ensemble.rounds.iter_mut() {
                let n = r.model.len();
                r.model = crate::svm::TrainedSvm::constant(vec![1.0; n], sign * 0.5, 1.0);
                r.retained = true;
                r.vote_weight = 1.0;
            }
        }
        let test = Array2::zeros((1, 2));
        assert_eq!(
            predict_ovo(&ovo, ds.features(), test.view()).unwrap(),
            vec![0]
        );
        // strengthen class 2's single vote
        let p = ovo
            .pairs
            .iter_mut()
            .find(|p| p.class_a == 0 && p.class_b == 2)
            .unwrap();
        for r in p.ensemble.rounds.iter_mut() {
            r.vote_weight = 10.0;
        }
        assert_eq!(
            predict_ovo(&ovo, ds.features(), test.view()).unwrap(),
            vec![2]
        );
    }

    #[test]
    fn manifest_round_trip() {
        let ds = blobs(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)], &[5, 6, 7]);
        for model in [
            Model::Ovo(fit_ovo(&ds, &learner()).unwrap()),
            Model::Ova(fit_ova(&ds, &learner()).unwrap()),
        ] {
            let json = serde_json::to_string(&model.to_manifest(ds.class_names())).unwrap();
            let back = Model::from_manifest(serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(
                model.predict(ds.features(), ds.features()).unwrap(),
                back.predict(ds.features(), ds.features()).unwrap()
            );
        }
    }
}
