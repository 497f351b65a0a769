//! Line-delimited report records.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{Context, Result};
use kpboost_core::eval::{Algorithm, Cell, CellSummary, Decomposition, FoldResult};
use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One flat report line. Field order is the key order on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub record: String,
    pub version: String,
    pub seed: u64,
    pub data: String,
    pub cell: usize,
    pub algorithm: Algorithm,
    pub decomposition: Decomposition,
    pub sigma: f64,
    pub cost: f64,
    pub step: Option<f64>,
    pub theta: Option<f64>,
    pub rounds: usize,
    pub folds: usize,
    pub fold: Option<usize>,
    pub kappa: Option<usize>,
    pub status: String,
    pub error: Option<String>,
    pub gmean: Option<f64>,
    pub auc: Option<f64>,
    pub gsdi: Option<f64>,
    pub recalls: Option<Vec<f64>>,
}

/// Fields shared by every record of one run.
pub struct RunInfo<'a> {
    pub seed: u64,
    pub data: &'a str,
    pub folds: usize,
    pub kappa: Option<usize>,
}

impl Record {
    fn base(run: &RunInfo<'_>, id: usize, cell: &Cell, kind: &str) -> Self {
        let rounds = if cell.algorithm == Algorithm::Svm {
            1
        } else {
            cell.rounds
        };
        Self {
            record: kind.to_string(),
            version: VERSION.to_string(),
            seed: run.seed,
            data: run.data.to_string(),
            cell: id,
            algorithm: cell.algorithm,
            decomposition: cell.decomposition,
            sigma: cell.sigma,
            cost: cell.cost,
            step: (cell.algorithm != Algorithm::Svm).then_some(cell.step),
            theta: (cell.algorithm == Algorithm::KpRoi).then_some(cell.theta),
            rounds,
            folds: run.folds,
            fold: None,
            kappa: run.kappa,
            status: "ok".to_string(),
            error: None,
            gmean: None,
            auc: None,
            gsdi: None,
            recalls: None,
        }
    }

    pub fn fold(
        run: &RunInfo<'_>,
        id: usize,
        cell: &Cell,
        fold: usize,
        result: &Result<FoldResult, String>,
    ) -> Self {
        let mut r = Self::base(run, id, cell, "fold");
        r.fold = Some(fold);
        match result {
            Ok(f) => {
                r.gmean = Some(f.gmean);
                r.auc = Some(f.auc);
                r.gsdi = f.gsdi;
                r.recalls = Some(f.recalls.clone());
            }
            Err(e) => r.fail(e),
        }
        r
    }

    pub fn average(
        run: &RunInfo<'_>,
        id: usize,
        cell: &Cell,
        summary: &Result<CellSummary, String>,
    ) -> Self {
        let mut r = Self::base(run, id, cell, "cell");
        match summary {
            Ok(s) => {
                r.gmean = Some(s.gmean);
                r.auc = Some(s.auc);
                r.gsdi = s.gsdi;
                r.recalls = Some(s.recalls.clone());
            }
            Err(e) => r.fail(e),
        }
        r
    }

    fn fail(&mut self, message: &str) {
        self.status = "failed".to_string();
        self.error = Some(message.to_string());
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub fn write_line<W: Write>(out: &mut W, record: &Record) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file =
        std::fs::File::open(path).with_context(|| format!("opening report {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(record);
    }
    Ok(out)
}
