use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kpboost_core::boost::STEP_GRID;
use kpboost_core::dataio::{self, Dataset, Standardizer};
use kpboost_core::disjuncts::{self, DisjunctOptions, DisjunctPartition};
use kpboost_core::eval::{self, Algorithm, Cell, Decomposition};
use kpboost_core::kernels::SIGMA_GRID;
use kpboost_core::metrics::{self, ClassAccuracyTable, ConfusionMatrix};
use kpboost_core::multiclass::{Manifest, Model};
use kpboost_core::roi::{DEFAULT_THETA, THETA_GRID};
use kpboost_core::svm::COST_GRID;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::report::{self, Record, RunInfo};

/// Invalid flags or flag combinations (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn config(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<kpboost_core::Error>() {
            return match core {
                _ if core.is_numerical() => 4,
                kpboost_core::Error::Parameter(_) | kpboost_core::Error::Selection(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

/// Cartesian product of the per-algorithm hyperparameters, in a fixed order.
pub struct Grid {
    pub cells: Vec<Cell>,
}

impl Grid {
    pub fn with_defaults(
        algorithms: Vec<Algorithm>,
        decomposition: Decomposition,
        sigma: &[f64],
        cost: &[f64],
        step: &[f64],
        theta: &[f64],
        rounds: usize,
    ) -> Self {
        let or = |given: &[f64], default: &[f64]| {
            if given.is_empty() {
                default.to_vec()
            } else {
                given.to_vec()
            }
        };
        let (sigma, cost, step, theta) = (
            or(sigma, &SIGMA_GRID),
            or(cost, &COST_GRID),
            or(step, &STEP_GRID),
            or(theta, &THETA_GRID),
        );
        let mut cells = Vec::new();
        for algorithm in algorithms {
            let steps = if algorithm == Algorithm::Svm {
                &step[..1]
            } else {
                &step[..]
            };
            let thetas = if algorithm == Algorithm::KpRoi {
                &theta[..]
            } else {
                &[DEFAULT_THETA][..]
            };
            for &s in &sigma {
                for &c in &cost {
                    for &st in steps {
                        for &th in thetas {
                            cells.push(Cell {
                                algorithm,
                                decomposition,
                                sigma: s,
                                cost: c,
                                step: st,
                                theta: th,
                                rounds,
                            });
                        }
                    }
                }
            }
        }
        Self { cells }
    }

    fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(config("empty hyperparameter grid"));
        }
        for cell in &self.cells {
            cell.learner().validate()?;
        }
        Ok(())
    }
}

pub struct CvConfig {
    pub data: PathBuf,
    pub label_column: Option<usize>,
    pub grid: Grid,
    pub disjuncts: Option<(DisjunctOptions, Option<usize>)>,
    pub folds: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn partition(
    ds: &Dataset,
    options: DisjunctOptions,
    kappa: Option<usize>,
) -> Result<DisjunctPartition> {
    let norm = dataio::normalize_whole(ds)?;
    Ok(match kappa {
        Some(0) => return Err(config("--kappa must be at least 1")),
        Some(k) => disjuncts::find_disjuncts(&norm, k, options)?,
        None => disjuncts::profile(&norm, options)?.1,
    })
}

pub fn cv(cfg: &CvConfig) -> Result<()> {
    if cfg.folds < 2 {
        return Err(config(format!(
            "--folds must be at least 2, got {}",
            cfg.folds
        )));
    }
    cfg.grid.validate()?;
    let ds = dataio::load_csv(&cfg.data, cfg.label_column)?;
    let part = match cfg.disjuncts {
        Some((options, kappa)) => {
            let p = partition(&ds, options, kappa)?;
            log::info!(
                "GSDI partition: {} at kappa {} ({} disjuncts)",
                options.describe(),
                p.kappa,
                p.delta_total
            );
            Some(p)
        }
        None => None,
    };
    let plan = eval::fold_plan(&ds, cfg.folds, cfg.seed)?;
    let cells = &cfg.grid.cells;
    let folds = plan.folds_count();
    log::info!(
        "{} cells x {} folds on {} points",
        cells.len(),
        folds,
        ds.len()
    );

    let results: Vec<Result<eval::FoldResult, String>> = (0..cells.len() * folds)
        .into_par_iter()
        .map(|job| {
            let (c, f) = (job / folds, job % folds);
            eval::evaluate_fold(&ds, f, &plan.folds[f], &cells[c], part.as_ref())
                .map_err(|e| e.to_string())
        })
        .collect();

    let data = cfg.data.display().to_string();
    let run = RunInfo {
        seed: cfg.seed,
        data: &data,
        folds,
        kappa: part.as_ref().map(|p| p.kappa),
    };
    let mut out = output(cfg.out.as_deref())?;
    let mut failed = 0;
    for (id, cell) in cells.iter().enumerate() {
        let chunk = &results[id * folds..(id + 1) * folds];
        for (f, r) in chunk.iter().enumerate() {
            report::write_line(&mut out, &Record::fold(&run, id, cell, f, r))?;
        }
        let summary = match chunk.iter().find_map(|r| r.as_ref().err()) {
            Some(e) => Err(format!("fold failure: {e}")),
            None => {
                let ok: Vec<eval::FoldResult> = chunk
                    .iter()
                    .filter_map(|r| r.as_ref().ok().cloned())
                    .collect();
                eval::summarize(&ok).map_err(|e| e.to_string())
            }
        };
        if summary.is_err() {
            failed += 1;
        }
        report::write_line(&mut out, &Record::average(&run, id, cell, &summary))?;
    }
    out.flush()?;
    if failed > 0 {
        log::warn!("{failed} of {} cells failed", cells.len());
    }
    Ok(())
}

/// A trained model together with what prediction needs from the training data.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    cell: Cell,
    standardizer: Standardizer,
    train_features: Vec<Vec<f64>>,
    manifest: Manifest,
}

pub fn train(data: &Path, label_column: Option<usize>, grid: &Grid, out: &Path) -> Result<()> {
    grid.validate()?;
    let [cell] = grid.cells[..] else {
        return Err(config(format!(
            "train needs exactly one configuration, the flags describe {}",
            grid.cells.len()
        )));
    };
    let ds = dataio::load_csv(data, label_column)?;
    let standardizer = Standardizer::fit(ds.features())?;
    let train = ds.with_features(standardizer.transform(ds.features())?)?;
    let model = eval::fit_model(&train, &cell)?;
    let file = ModelFile {
        version: report::VERSION.to_string(),
        cell,
        standardizer,
        train_features: train
            .features()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        manifest: model.to_manifest(ds.class_names()),
    };
    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    serde_json::to_writer(&mut w, &file)?;
    w.flush()?;
    log::info!(
        "{} model on {} points written to {}",
        cell.algorithm.name(),
        ds.len(),
        out.display()
    );
    Ok(())
}

/// Feature rows and, when present, label tokens.
fn read_queries(
    path: &Path,
    dim: usize,
    label_column: Option<usize>,
) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut labelled = None;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let width = record.len();
        let has_label = match labelled {
            Some(l) => l,
            None if width == dim => false,
            None if width == dim + 1 => true,
            None => bail!(kpboost_core::Error::Parse {
                line: i + 1,
                message: format!("expected {dim} or {} fields, found {width}", dim + 1),
            }),
        };
        if width != dim + usize::from(has_label) {
            bail!(kpboost_core::Error::Parse {
                line: i + 1,
                message: format!(
                    "expected {} fields, found {width}",
                    dim + usize::from(has_label)
                ),
            });
        }
        let label_col = if has_label {
            Some(label_column.unwrap_or(dim))
        } else {
            None
        };
        let row: Vec<Option<f64>> = record
            .iter()
            .enumerate()
            .filter(|(c, _)| Some(*c) != label_col)
            .map(|(_, v)| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect();
        if row.iter().any(Option::is_none) {
            if labelled.is_none() {
                // header row
                labelled = Some(has_label);
                continue;
            }
            bail!(kpboost_core::Error::Parse {
                line: i + 1,
                message: "non-numeric feature".into(),
            });
        }
        labelled = Some(has_label);
        values.extend(row.into_iter().flatten());
        if let Some(c) = label_col {
            labels.push(record[c].to_string());
        }
    }
    let n = values.len() / dim.max(1);
    if n == 0 {
        bail!(kpboost_core::Error::DegenerateDataset(
            "no query rows".into()
        ));
    }
    if label_column.is_some() && labelled == Some(false) {
        return Err(config(
            "--label-column given but the file has no label column",
        ));
    }
    let x = Array2::from_shape_vec((n, dim), values)?;
    Ok((x, labelled.unwrap_or(false).then_some(labels)))
}

#[derive(Serialize)]
struct PredictSummary<'a> {
    points: usize,
    classes: &'a [String],
    recalls: Vec<f64>,
    gmean: f64,
    auc: f64,
}

pub fn predict(
    model_path: &Path,
    test: &Path,
    label_column: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let file: ModelFile = serde_json::from_reader(std::io::BufReader::new(
        File::open(model_path).with_context(|| format!("opening {}", model_path.display()))?,
    ))
    .context("reading model file")?;
    let dim = file.standardizer.mean.len();
    let n = file.train_features.len();
    let train = Array2::from_shape_vec((n, dim), file.train_features.concat())?;
    let names = file.manifest.class_names.clone();
    let model = Model::from_manifest(file.manifest)?;
    let (x, truth) = read_queries(test, dim, label_column)?;
    let predicted = model.predict(train.view(), file.standardizer.transform(x.view())?.view())?;

    let mut w = output(out)?;
    for &p in &predicted {
        writeln!(w, "{}", names[p])?;
    }
    w.flush()?;

    if let Some(truth) = truth {
        let ids: Option<Vec<usize>> = truth
            .iter()
            .map(|t| names.iter().position(|n| n == t))
            .collect();
        let Some(ids) = ids else {
            log::warn!("test labels include classes the model has not seen; no metrics");
            return Ok(());
        };
        let conf = ConfusionMatrix::from_predictions(&ids, &predicted, names.len())?;
        match (conf.recalls(), metrics::auc(&conf)) {
            (Ok(recalls), Ok(auc)) => {
                let summary = PredictSummary {
                    points: ids.len(),
                    classes: &names,
                    gmean: metrics::geometric_mean(&recalls),
                    recalls,
                    auc,
                };
                eprintln!("{}", serde_json::to_string(&summary)?);
            }
            (Err(e), _) | (_, Err(e)) => log::warn!("metrics unavailable: {e}"),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DisjunctSummary {
    data: String,
    options: &'static str,
    knee: usize,
    kappa: usize,
    delta: usize,
    sizes: Vec<Vec<usize>>,
}

pub fn disjuncts(
    data: &Path,
    label_column: Option<usize>,
    options: DisjunctOptions,
    kappa: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    if kappa == Some(0) {
        return Err(config("--kappa must be at least 1"));
    }
    let ds = dataio::normalize_whole(&dataio::load_csv(data, label_column)?)?;
    let curve = disjuncts::kappa_delta_curve(&ds, options)?;
    let part = disjuncts::find_disjuncts(&ds, kappa.unwrap_or(curve.knee), options)?;
    let summary = DisjunctSummary {
        data: data.display().to_string(),
        options: options.describe(),
        knee: curve.knee,
        kappa: part.kappa,
        delta: part.delta_total,
        sizes: part.sizes(),
    };
    match out {
        Some(prefix) => {
            let with = |ext: &str| {
                let mut p = prefix.as_os_str().to_owned();
                p.push(ext);
                PathBuf::from(p)
            };
            for (path, text) in [
                (with(".curve.txt"), curve.to_text()),
                (with(".partition.txt"), part.to_text()),
            ] {
                std::fs::write(&path, text)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        None => print!("{}", curve.to_text()),
    }
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct Winner<'a> {
    algorithm: Algorithm,
    cell: usize,
    data: &'a str,
    candidates: usize,
    mu: f64,
    decomposition: Decomposition,
    sigma: f64,
    cost: f64,
    step: Option<f64>,
    theta: Option<f64>,
    rounds: usize,
    gmean: Option<f64>,
    auc: Option<f64>,
    gsdi: Option<f64>,
    recalls: &'a [f64],
}

pub fn select(reports: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut cells: Vec<Record> = Vec::new();
    for path in reports {
        cells.extend(
            report::read_records(path)?
                .into_iter()
                .filter(|r| r.record == "cell" && r.is_ok()),
        );
    }
    let mut algorithms: Vec<Algorithm> = Vec::new();
    for r in &cells {
        if !algorithms.contains(&r.algorithm) {
            algorithms.push(r.algorithm);
        }
    }
    if algorithms.is_empty() {
        bail!(kpboost_core::Error::Selection(
            "no successful cell records".into()
        ));
    }
    let mut w = output(out)?;
    for algorithm in algorithms {
        let group: Vec<&Record> = cells.iter().filter(|r| r.algorithm == algorithm).collect();
        let table = ClassAccuracyTable::new(
            group
                .iter()
                .map(|r| r.recalls.clone().unwrap_or_default())
                .collect(),
        )?;
        let mu = metrics::mu_scores(&table)
            .with_context(|| format!("selecting among {} cells", algorithm.name()))?;
        let best = metrics::select_best(&table)?;
        let r = group[best];
        let winner = Winner {
            algorithm,
            cell: r.cell,
            data: &r.data,
            candidates: group.len(),
            mu: mu[best],
            decomposition: r.decomposition,
            sigma: r.sigma,
            cost: r.cost,
            step: r.step,
            theta: r.theta,
            rounds: r.rounds,
            gmean: r.gmean,
            auc: r.auc,
            gsdi: r.gsdi,
            recalls: r.recalls.as_deref().unwrap_or_default(),
        };
        serde_json::to_writer(&mut w, &winner)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
