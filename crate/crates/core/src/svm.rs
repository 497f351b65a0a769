//! Soft-margin SVM dual solver on a precomputed kernel.
//!
//! Solves
//!
//! ```text
//! max  sum_i l_i - 1/2 sum_ij l_i l_j y_i y_j K_ij
//! s.t. 0 <= l_i <= C,  sum_i l_i y_i = 0
//! ```
//!
//! with two-variable decomposition (SMO). The first index of the working pair is the most
//! violating one; the second is chosen by second-order gain (or as the maximal violating partner
//! with [`WorkingSet::MaxViolating`]). Ties go to the lowest index so runs are reproducible.
//! No shrinking and no cache: the kernel is already a dense matrix.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;

/// Regularization values searched by model selection.
pub const COST_GRID: [f64; 2] = [100.0, 1000.0];

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmSettings {
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Iteration budget in multiples of `n`; `None` means `10 * n` passes.
    pub max_passes: Option<usize>,
    #[serde(default)]
    pub selection: WorkingSet,
}

/// Rule for the second index of the working pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkingSet {
    /// Largest guaranteed objective increase among violating partners.
    #[default]
    SecondOrder,
    /// The partner with the smallest `-y G`.
    MaxViolating,
}

impl Default for SvmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_passes: None,
            selection: WorkingSet::SecondOrder,
        }
    }
}

/// Dual solution of one C-SVM fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSvm {
    pub lambda: Vec<f64>,
    pub bias: f64,
    pub sv_indices: Vec<usize>,
    pub labels_signed: Vec<f64>,
    pub cost: f64,
    /// Pair updates performed by the solver.
    pub iterations: usize,
}

impl TrainedSvm {
    /// Model with all coefficients zero; decision values equal the bias everywhere.
    pub fn constant(labels_signed: Vec<f64>, bias: f64, cost: f64) -> Self {
        Self {
            lambda: vec![0.0; labels_signed.len()],
            bias,
            sv_indices: Vec::new(),
            labels_signed,
            cost,
            iterations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// `f_j = sum_i l_i y_i K_ij + b` for each column `j` of `k_cols` (rows = training points).
    pub fn decision_values(&self, k_cols: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if k_cols.nrows() != self.len() {
            return Err(Error::shape(
                format!("{} kernel rows", self.len()),
                format!("{}", k_cols.nrows()),
            ));
        }
        let mut out = vec![self.bias; k_cols.ncols()];
        for &i in &self.sv_indices {
            let coef = self.lambda[i] * self.labels_signed[i];
            for (o, &kv) in out.iter_mut().zip(k_cols.row(i).iter()) {
                *o += coef * kv;
            }
        }
        Ok(out)
    }

    /// Signs of the decision values, with `0 -> +1`.
    pub fn predict(&self, k_cols: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self
            .decision_values(k_cols)?
            .into_iter()
            .map(crate::sign)
            .collect())
    }

    /// Dual objective `sum l - 1/2 l^T Q l` on kernel `k`.
    pub fn dual_objective(&self, k: &KernelMatrix) -> f64 {
        dual_objective(k.view(), &self.labels_signed, &self.lambda)
    }

    /// `|sum_i l_i y_i|`.
    pub fn equality_residual(&self) -> f64 {
        self.lambda
            .iter()
            .zip(&self.labels_signed)
            .map(|(l, y)| l * y)
            .sum::<f64>()
            .abs()
    }

    /// Maximal KKT violation `max_{I_up} -y_i G_i - min_{I_low} -y_i G_i` (0 when satisfied).
    pub fn kkt_violation(&self, k: &KernelMatrix) -> f64 {
        let grad = gradient(k.view(), &self.labels_signed, &self.lambda);
        let (up, low) = violation_bounds(&self.labels_signed, &self.lambda, &grad, self.cost);
        (up - low).max(0.0)
    }

    /// Checks box constraints, the equality constraint and the KKT conditions.
    pub fn verify(&self, k: &KernelMatrix, tol: f64) -> Result<()> {
        let cost = self.cost;
        if let Some(i) = self.lambda.iter().position(|&l| !(0.0..=cost).contains(&l)) {
            return Err(Error::Numeric(format!(
                "lambda[{i}] = {} outside [0, {cost}]",
                self.lambda[i]
            )));
        }
        let eq = self.equality_residual();
        if eq > 1e-6 * cost {
            return Err(Error::Numeric(format!("equality residual {eq:.3e}")));
        }
        let kkt = self.kkt_violation(k);
        if kkt > tol {
            return Err(Error::Numeric(format!(
                "KKT violation {kkt:.3e} > {tol:.3e}"
            )));
        }
        Ok(())
    }
}

/// Dual objective for arbitrary coefficients (used by tests and oracles).
pub fn dual_objective(k: ArrayView2<'_, f64>, y: &[f64], lambda: &[f64]) -> f64 {
    let n = lambda.len();
    let mut quad = 0.0;
    for i in 0..n {
        if lambda[i] == 0.0 {
            continue;
        }
        let row = k.row(i);
        let mut acc = 0.0;
        for j in 0..n {
            acc += lambda[j] * y[j] * row[j];
        }
        quad += lambda[i] * y[i] * acc;
    }
    lambda.iter().sum::<f64>() - 0.5 * quad
}

/// Gradient of the minimisation form `1/2 l^T Q l - e^T l`: `G_i = y_i sum_j l_j y_j K_ij - 1`.
fn gradient(k: ArrayView2<'_, f64>, y: &[f64], lambda: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let mut grad = vec![-1.0; n];
    for j in 0..n {
        if lambda[j] == 0.0 {
            continue;
        }
        let coef = lambda[j] * y[j];
        for (i, g) in grad.iter_mut().enumerate() {
            *g += y[i] * coef * k[[j, i]];
        }
    }
    grad
}

#[inline]
fn in_up(y: f64, l: f64, c: f64) -> bool {
    (y > 0.0 && l < c) || (y < 0.0 && l > 0.0)
}

#[inline]
fn in_low(y: f64, l: f64, c: f64) -> bool {
    (y > 0.0 && l > 0.0) || (y < 0.0 && l < c)
}

fn violation_bounds(y: &[f64], lambda: &[f64], grad: &[f64], c: f64) -> (f64, f64) {
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    for i in 0..y.len() {
        let v = -y[i] * grad[i];
        if in_up(y[i], lambda[i], c) {
            up = up.max(v);
        }
        if in_low(y[i], lambda[i], c) {
            low = low.min(v);
        }
    }
    (up, low)
}

/// Solves the C-SVM dual on `k` for labels `y` in `{-1, +1}`.
pub fn solve_dual(
    k: &KernelMatrix,
    y: &[f64],
    cost: f64,
    settings: &SvmSettings,
) -> Result<TrainedSvm> {
    let n = k.len();
    if y.len() != n {
        return Err(Error::shape(format!("{n} labels"), format!("{}", y.len())));
    }
    if !(cost > 0.0 && cost.is_finite()) {
        return Err(Error::Parameter(format!(
            "cost must be positive, got {cost}"
        )));
    }
    if settings.tol.is_nan() || settings.tol <= 0.0 {
        return Err(Error::Parameter(format!(
            "tolerance must be positive, got {}",
            settings.tol
        )));
    }
    if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Parameter(format!(
            "label {i} is {}, expected +1 or -1",
            y[i]
        )));
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(Error::Infeasible(
            "both label values must be present".into(),
        ));
    }

    let owned;
    let ks: &[f64] = match k.values.as_slice() {
        Some(s) => s,
        None => {
            owned = k.values.iter().copied().collect::<Vec<f64>>();
            &owned
        }
    };
    let row = |i: usize| &ks[i * n..(i + 1) * n];
    let diag: Vec<f64> = (0..n).map(|i| ks[i * n + i]).collect();
    let mut lambda = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let budget = settings
        .max_passes
        .unwrap_or(10 * n)
        .saturating_mul(n)
        .max(1);
    #[cfg(debug_assertions)]
    let mut objective = 0.0f64;

    let mut iterations = 0usize;
    loop {
        // Maximal violating pair, lowest index on ties.
        let mut i = usize::MAX;
        let mut g_up = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut g_low = f64::INFINITY;
        for (t, ((&yt, &lt), &gt)) in y.iter().zip(&lambda).zip(&grad).enumerate() {
            let v = -yt * gt;
            if v > g_up && in_up(yt, lt, cost) {
                g_up = v;
                i = t;
            }
            if v < g_low && in_low(yt, lt, cost) {
                g_low = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || g_up - g_low <= settings.tol {
            break;
        }
        if settings.selection == WorkingSet::SecondOrder {
            j = second_order_partner(row(i), &diag, y, &lambda, &grad, cost, i, g_up).unwrap_or(j);
        }
        if iterations >= budget {
            let best = finish(&lambda, &grad, y, cost, iterations);
            return Err(Error::NotConverged {
                iterations,
                violation: g_up - g_low,
                best: Box::new(best),
            });
        }
        iterations += 1;

        let (yi, yj) = (y[i], y[j]);
        let kij = row(i)[j];
        let old_i = lambda[i];
        let old_j = lambda[j];
        let (mut ai, mut aj) = (old_i, old_j);
        if yi != yj {
            let mut quad = diag[i] + diag[j] + 2.0 * (-kij);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > cost {
                    ai = cost;
                    aj = cost - diff;
                }
            } else if aj > cost {
                aj = cost;
                ai = cost + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > cost {
                if ai > cost {
                    ai = cost;
                    aj = sum - cost;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cost {
                if aj > cost {
                    aj = cost;
                    ai = sum - cost;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        lambda[i] = ai;
        lambda[j] = aj;

        let di = ai - old_i;
        let dj = aj - old_j;
        #[cfg(debug_assertions)]
        {
            // Change of the maximisation objective for the two-coordinate step.
            let qii = diag[i];
            let qjj = diag[j];
            let qij = yi * yj * kij;
            let gain = -(grad[i] * di + grad[j] * dj)
                - 0.5 * (qii * di * di + qjj * dj * dj + 2.0 * qij * di * dj);
            debug_assert!(
                gain >= -1e-9 * (1.0 + objective.abs()),
                "dual objective decreased by {gain:e} at iteration {iterations}"
            );
            objective += gain;
        }
        let ci = yi * di;
        let cj = yj * dj;
        for (((g, &yt), &ki), &kj) in grad.iter_mut().zip(y).zip(row(i)).zip(row(j)) {
            *g += yt * (ci * ki + cj * kj);
        }
    }

    Ok(finish(&lambda, &grad, y, cost, iterations))
}

/// Partner `j` maximizing `b^2 / a` with `b = g_up + y_j G_j > 0` and
/// `a = K_ii + K_jj - 2 K_ij`.
#[allow(clippy::too_many_arguments)]
fn second_order_partner(
    row_i: &[f64],
    diag: &[f64],
    y: &[f64],
    lambda: &[f64],
    grad: &[f64],
    cost: f64,
    i: usize,
    g_up: f64,
) -> Option<usize> {
    let mut best = None;
    let mut best_gain = f64::NEG_INFINITY;
    let dii = diag[i];
    for (t, (((&yt, &lt), &gt), (&dt, &kit))) in y
        .iter()
        .zip(lambda)
        .zip(grad)
        .zip(diag.iter().zip(row_i))
        .enumerate()
    {
        let b = g_up + yt * gt;
        if b <= 0.0 || !in_low(yt, lt, cost) {
            continue;
        }
        let mut a = dii + dt - 2.0 * kit;
        if a <= 0.0 {
            a = TAU;
        }
        let gain = b * b / a;
        if gain > best_gain {
            best_gain = gain;
            best = Some(t);
        }
    }
    best
}

fn finish(lambda: &[f64], grad: &[f64], y: &[f64], cost: f64, iterations: usize) -> TrainedSvm {
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    for t in 0..lambda.len() {
        let yg = y[t] * grad[t];
        if lambda[t] >= cost {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lambda[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    };
    let sv_indices = (0..lambda.len()).filter(|&t| lambda[t] > 0.0).collect();
    TrainedSvm {
        lambda: lambda.to_vec(),
        bias: -rho,
        sv_indices,
        labels_signed: y.to_vec(),
        cost,
        iterations,
    }
}

/// Versioned persistence record for one round's SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmRecord {
    pub format_version: u32,
    pub round: usize,
    pub sigma: f64,
    pub cost: f64,
    pub bias: f64,
    pub lambda: Vec<f64>,
    pub labels_signed: Vec<f64>,
}

impl SvmRecord {
    pub const VERSION: u32 = 1;

    pub fn new(model: &TrainedSvm, sigma: f64, round: usize) -> Self {
        Self {
            format_version: Self::VERSION,
            round,
            sigma,
            cost: model.cost,
            bias: model.bias,
            lambda: model.lambda.clone(),
            labels_signed: model.labels_signed.clone(),
        }
    }

    pub fn into_model(self) -> Result<TrainedSvm> {
        if self.format_version != Self::VERSION {
            return Err(Error::Format(format!(
                "unsupported SVM record version {}",
                self.format_version
            )));
        }
        if self.lambda.len() != self.labels_signed.len() {
            return Err(Error::Format("lambda and label lengths differ".into()));
        }
        let sv_indices = (0..self.lambda.len())
            .filter(|&t| self.lambda[t] > 0.0)
            .collect();
        Ok(TrainedSvm {
            lambda: self.lambda,
            bias: self.bias,
            sv_indices,
            labels_signed: self.labels_signed,
            cost: self.cost,
            iterations: 0,
        })
    }
}
