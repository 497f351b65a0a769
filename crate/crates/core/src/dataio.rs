//! Dataset ingestion, standardization, stratified folds and imbalance-preserving subsampling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix with dense integer labels `0..C`.
///
/// Labels are encoded in order of first appearance; `class_names[c]` keeps the
/// original token for class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking that every class in `class_names` is populated
    /// and every feature is finite.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(
                format!("{} labels", features.nrows()),
                format!("{} labels", labels.len()),
            ));
        }
        if labels.is_empty() {
            return Err(Error::DegenerateDataset("no rows".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let classes = class_names.len();
        let mut class_counts = vec![0usize; classes];
        for &label in &labels {
            if label >= classes {
                return Err(Error::DegenerateDataset(format!(
                    "label {label} outside class inventory of size {classes}"
                )));
            }
            class_counts[label] += 1;
        }
        if let Some(empty) = class_counts.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateDataset(format!(
                "class {empty} ({}) has no points",
                class_names[empty]
            )));
        }
        Ok(Self {
            features,
            labels,
            class_counts,
            class_names,
        })
    }

    /// Convenience constructor naming classes `"0"`, `"1"`, ... .
    pub fn from_labels(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let names = (0..classes).map(|c| c.to_string()).collect();
        Self::new(features, labels, names)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    /// Largest-to-smallest class size ratio.
    pub fn imbalance_ratio(&self) -> f64 {
        let max = *self.class_counts.iter().max().unwrap_or(&1) as f64;
        let min = *self.class_counts.iter().min().unwrap_or(&1) as f64;
        max / min
    }

    /// Minority class for two-class data, lowest id on ties. This is the class mapped to `+1`.
    pub fn minority_class(&self) -> usize {
        let mut best = 0;
        for (c, &count) in self.class_counts.iter().enumerate() {
            if count < self.class_counts[best] {
                best = c;
            }
        }
        best
    }

    /// Indices of the points in class `class`, ascending.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows `indices` in the given order. Every class must remain populated.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.class_names.clone())
    }

    /// Replaces the feature matrix, keeping labels.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::new(features, self.labels.clone(), self.class_names.clone())
    }
}

/// Loads a comma-separated file. The label column may hold arbitrary tokens;
/// all other columns must parse as finite numbers. A first row whose feature
/// cells do not all parse is treated as a header.
///
/// `label_column = None` selects the last column.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(file, label_column)
}

/// Reader-based variant of [`load_csv`].
pub fn parse_csv<R: std::io::Read>(reader: R, label_column: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut arity: Option<usize> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();

    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(|cell| cell.is_empty()) {
            continue;
        }
        let width = record.len();
        let label_col = label_column.unwrap_or(width.saturating_sub(1));
        if width < 2 {
            return Err(Error::Parse {
                line,
                message: "need at least one feature column and a label column".into(),
            });
        }
        if label_col >= width {
            return Err(Error::Parse {
                line,
                message: format!("label column {label_col} out of range for {width} columns"),
            });
        }
        match arity {
            None => {
                let numeric = record
                    .iter()
                    .enumerate()
                    .filter(|(c, _)| *c != label_col)
                    .all(|(_, cell)| cell.parse::<f64>().is_ok());
                arity = Some(width);
                if !numeric {
                    // header row
                    continue;
                }
            }
            Some(expected) if expected != width => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {expected} fields, found {width}"),
                });
            }
            Some(_) => {}
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_col {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {c}: '{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {c}: non-finite value '{cell}'"),
                });
            }
            values.push(v);
        }
        let token = record[label_col].to_string();
        let next = names.len();
        let id = *lookup.entry(token.clone()).or_insert_with(|| {
            names.push(token);
            next
        });
        labels.push(id);
    }

    let width = arity.ok_or_else(|| Error::DegenerateDataset("empty file".into()))?;
    if labels.is_empty() {
        return Err(Error::DegenerateDataset("no data rows".into()));
    }
    if names.len() < 2 {
        return Err(Error::DegenerateDataset(format!(
            "only one class present ({})",
            names[0]
        )));
    }
    let features = Array2::from_shape_vec((labels.len(), width - 1), values)
        .map_err(|e| Error::Internal(e.to_string()))?;
    Dataset::new(features, labels, names)
}

/// Per-feature standardization `(x - mean) / std` with population standard deviation.
/// Zero-variance features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: ArrayView2<'_, f64>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Parameter(
                "cannot standardize an empty matrix".into(),
            ));
        }
        let mean: Array1<f64> = features.sum_axis(Axis(0)) / n as f64;
        let mut var = vec![0.0; features.ncols()];
        for row in features.rows() {
            for (j, v) in row.iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Self {
            mean: mean.to_vec(),
            std,
        })
    }

    pub fn transform(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::shape(
                format!("{} columns", self.mean.len()),
                format!("{} columns", features.ncols()),
            ));
        }
        let mut out = features.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.std[j] > 0.0 {
                    (*v - self.mean[j]) / self.std[j]
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}

/// Standardizes `train` and `apply_to` with statistics computed on `train` only.
pub fn normalize(train: &Dataset, apply_to: &Dataset) -> Result<(Dataset, Dataset)> {
    let scaler = Standardizer::fit(train.features())?;
    Ok((
        train.with_features(scaler.transform(train.features())?)?,
        apply_to.with_features(scaler.transform(apply_to.features())?)?,
    ))
}

/// Standardizes a dataset with its own statistics (used for disjunct analysis,
/// which operates on training and test points together).
pub fn normalize_whole(ds: &Dataset) -> Result<Dataset> {
    let scaler = Standardizer::fit(ds.features())?;
    ds.with_features(scaler.transform(ds.features())?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Train/test partitioning for cross-validation. Test sets partition `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
    pub n: usize,
}

impl FoldPlan {
    pub fn folds_count(&self) -> usize {
        self.folds.len()
    }

    /// Plain-text listing: a header, then one `fold <i> test <indices...>` line per fold.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# fold plan v1");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "n {}", self.n);
        let _ = writeln!(out, "folds {}", self.folds.len());
        for (i, fold) in self.folds.iter().enumerate() {
            let _ = write!(out, "fold {i} test");
            for idx in &fold.test {
                let _ = write!(out, " {idx}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut n = None;
        let mut tests: Vec<Vec<usize>> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: &str| Error::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("seed") => {
                    seed = Some(
                        parts
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| bad("bad seed"))?,
                    )
                }
                Some("n") => {
                    n = Some(
                        parts
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| bad("bad n"))?,
                    )
                }
                Some("folds") => {}
                Some("fold") => {
                    parts.next();
                    if parts.next() != Some("test") {
                        return Err(bad("expected 'test'"));
                    }
                    let idx = parts
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("bad index"))?;
                    tests.push(idx);
                }
                _ => return Err(bad("unrecognised record")),
            }
        }
        let n: usize = n.ok_or_else(|| Error::Format("fold plan missing n".into()))?;
        let seed = seed.ok_or_else(|| Error::Format("fold plan missing seed".into()))?;
        let folds = tests
            .into_iter()
            .map(|test| {
                let mut in_test = vec![false; n];
                for &i in &test {
                    if i >= n {
                        return Err(Error::Format(format!("index {i} out of range")));
                    }
                    in_test[i] = true;
                }
                let train = (0..n).filter(|&i| !in_test[i]).collect();
                Ok(Fold { train, test })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { folds, seed, n })
    }
}

/// Stratified k-fold split. Each class is shuffled with a seeded ChaCha stream and
/// dealt round-robin over the folds, continuing where the previous class stopped,
/// so per-fold class counts differ by at most one.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    for (class, &count) in ds.class_counts().iter().enumerate() {
        if count < k {
            return Err(Error::Stratification {
                class,
                count,
                folds: k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for class in 0..ds.num_classes() {
        let mut members = ds.class_indices(class);
        members.shuffle(&mut rng);
        for idx in members {
            tests[cursor % k].push(idx);
            cursor += 1;
        }
    }
    let n = ds.len();
    let folds = tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; n];
            for &i in &test {
                in_test[i] = true;
            }
            let train = (0..n).filter(|&i| !in_test[i]).collect();
            Fold { train, test }
        })
        .collect();
    Ok(FoldPlan { folds, seed, n })
}

/// Per-class sample sizes `round(fraction * count)` used by [`subsample_preserving_imbalance`].
pub fn subsample_sizes(class_counts: &[usize], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "fraction {fraction} not in (0, 1]"
        )));
    }
    class_counts
        .iter()
        .enumerate()
        .map(|(class, &count)| {
            let size = (fraction * count as f64).round() as usize;
            if size == 0 {
                Err(Error::Subsample { class })
            } else {
                Ok(size.min(count))
            }
        })
        .collect()
}

/// Indices (ascending) of a per-class subsample without replacement.
pub fn subsample_indices(ds: &Dataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let sizes = subsample_sizes(ds.class_counts(), fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(sizes.iter().sum());
    for (class, &size) in sizes.iter().enumerate() {
        let mut members = ds.class_indices(class);
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..size]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Draws `round(fraction * count)` points from every class, preserving the imbalance ratio
/// up to rounding.
pub fn subsample_preserving_imbalance(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    let idx = subsample_indices(ds, fraction, seed)?;
    ds.select(&idx)
}

/// Repeated stratified hold-out used when some class is too small for k-fold CV:
/// each repetition holds out an imbalance-preserving subsample of size `max(1/k, 1/min_count)`
/// per class as the test set.
pub fn repeated_holdout(ds: &Dataset, repetitions: usize, seed: u64) -> Result<FoldPlan> {
    if repetitions < 1 {
        return Err(Error::Parameter("need at least one repetition".into()));
    }
    let min_count = *ds.class_counts().iter().min().unwrap_or(&0);
    if min_count < 2 {
        return Err(Error::Stratification {
            class: ds.minority_class(),
            count: min_count,
            folds: 2,
        });
    }
    let fraction = (1.0 / repetitions as f64)
        .max(1.0 / min_count as f64)
        .min(0.5);
    let n = ds.len();
    let folds = (0..repetitions)
        .map(|r| {
            let test = subsample_indices(ds, fraction, seed.wrapping_add(r as u64))?;
            let mut in_test = vec![false; n];
            for &i in &test {
                in_test[i] = true;
            }
            let train = (0..n).filter(|&i| !in_test[i]).collect();
            Ok(Fold { train, test })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldPlan { folds, seed, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_class(counts: &[usize]) -> Dataset {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .collect();
        let n = labels.len();
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        Dataset::from_labels(features, labels).unwrap()
    }

    #[test]
    fn csv_four_rows_two_classes() {
        let text = "1.0,2.0,a\n3.0,4.0,b\n5.0,6.0,a\n7.0,8.0,b\n";
        let ds = parse_csv(text.as_bytes(), None).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.class_counts(), &[2, 2]);
        assert_eq!(ds.labels(), &[0, 1, 0, 1]);
        assert_eq!(ds.class_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn csv_header_and_label_first() {
        let text = "cls,x,y\nL,1,2\nR,3,4\n";
        let ds = parse_csv(text.as_bytes(), Some(0)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.features(), array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn csv_single_class_is_degenerate() {
        let text = "1,2,a\n3,4,a\n";
        assert!(matches!(
            parse_csv(text.as_bytes(), None),
            Err(Error::DegenerateDataset(_))
        ));
    }

    #[test]
    fn csv_malformed_row_reports_line() {
        let text = "1,2,a\n3,b\n";
        match parse_csv(text.as_bytes(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = "1,2,a\n3,x,b\n";
        match parse_csv(text.as_bytes(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn normalize_population_std() {
        let train = Dataset::from_labels(array![[1.0, 5.0], [3.0, 5.0]], vec![0, 1]).unwrap();
        let other = Dataset::from_labels(array![[2.0, 7.0], [4.0, 5.0]], vec![0, 1]).unwrap();
        let (t, o) = normalize(&train, &other).unwrap();
        assert_eq!(t.features(), array![[-1.0, 0.0], [1.0, 0.0]]);
        // value equal to the train mean maps to 0; constant column maps to 0
        assert_eq!(o.features()[[0, 0]], 0.0);
        assert_eq!(o.features()[[0, 1]], 0.0);
        assert_eq!(o.features()[[1, 0]], 2.0);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let ds = Dataset::from_labels(array![[5.0], [5.0], [5.0]], vec![0, 1, 0]).unwrap();
        let z = normalize_whole(&ds).unwrap();
        assert!(z.features().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kfold_exact_divisibility() {
        let ds = two_class(&[10, 10]);
        let plan = stratified_kfold(&ds, 10, 7).unwrap();
        assert_eq!(plan.folds_count(), 10);
        for fold in &plan.folds {
            let pos = fold.test.iter().filter(|&&i| ds.labels()[i] == 1).count();
            assert_eq!(fold.test.len(), 2);
            assert_eq!(pos, 1);
            assert_eq!(fold.train.len(), 18);
        }
        assert_eq!(plan, stratified_kfold(&ds, 10, 7).unwrap());
    }

    #[test]
    fn kfold_small_class_errors() {
        let ds = two_class(&[30, 7]);
        match stratified_kfold(&ds, 10, 1) {
            Err(Error::Stratification { class, count, .. }) => {
                assert_eq!(class, 1);
                assert_eq!(count, 7);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fold_plan_text_round_trip() {
        let ds = two_class(&[12, 11]);
        let plan = stratified_kfold(&ds, 5, 99).unwrap();
        let back = FoldPlan::from_text(&plan.to_text()).unwrap();
        assert_eq!(plan, back);
    }

    #[test]
    fn subsample_examples() {
        let ds = two_class(&[100, 10]);
        let sub = subsample_preserving_imbalance(&ds, 0.5, 3).unwrap();
        assert_eq!(sub.class_counts(), &[50, 5]);
        assert_eq!(sub.imbalance_ratio(), 10.0);

        let full = subsample_preserving_imbalance(&ds, 1.0, 3).unwrap();
        assert_eq!(full, ds);

        assert_eq!(subsample_sizes(&[9, 3], 1.0 / 3.0).unwrap(), vec![3, 1]);
        assert!(matches!(
            subsample_sizes(&[9, 1], 0.2),
            Err(Error::Subsample { class: 1 })
        ));
    }

    #[test]
    fn holdout_for_tiny_minority() {
        let ds = two_class(&[60, 4]);
        let plan = repeated_holdout(&ds, 10, 5).unwrap();
        assert_eq!(plan.folds_count(), 10);
        for fold in &plan.folds {
            let minority_test = fold.test.iter().filter(|&&i| ds.labels()[i] == 1).count();
            assert_eq!(minority_test, 1);
            assert_eq!(fold.train.len() + fold.test.len(), ds.len());
        }
    }
}
