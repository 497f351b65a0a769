//! KPBoost-SVM: boosting by per-point kernel perturbation.
//!
//! Each round rescales the previous round's kernel by `D_t(x_i) = exp(-k_i f_{t-1}(x_i)^2)`,
//! trains an SVM on it, then adds the perturbation step to `k_i` for every point the round
//! classified correctly. Rounds are weighted by their distance to the ideal `(tpr, tnr) = (1, 1)`
//! and filtered so that only rounds at least as good as the unperturbed first round vote.

use std::fmt::Write as _;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{self, KernelMatrix, PerturbationState};
use crate::roi::{self, RoiMeta};
use crate::svm::{self, SvmRecord, SvmSettings, TrainedSvm};

/// Perturbation steps searched by model selection.
pub const STEP_GRID: [f64; 37] = [
    1e-4, 2e-4, 3e-4, 4e-4, 5e-4, 6e-4, 7e-4, 8e-4, 9e-4, //
    1e-3, 2e-3, 3e-3, 4e-3, 5e-3, 6e-3, 7e-3, 8e-3, 9e-3, //
    1e-2, 2e-2, 3e-2, 4e-2, 5e-2, 6e-2, 7e-2, 8e-2, 9e-2, //
    0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
];

/// Default number of boosting rounds.
pub const DEFAULT_ROUNDS: usize = 10;

const PREDICT_BLOCK: usize = 256;

/// Round errors are clamped into `[EPS_MIN, sqrt(2) - EPS_MIN]` before weighting.
pub const EPS_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub step: f64,
    pub sigma: f64,
    pub cost: f64,
    #[serde(default)]
    pub svm: SvmSettings,
}

impl BoostParams {
    pub fn new(sigma: f64, cost: f64, step: f64) -> Self {
        Self {
            rounds: DEFAULT_ROUNDS,
            step,
            sigma,
            cost,
            svm: SvmSettings::default(),
        }
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = rounds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::Parameter(
                "at least one boosting round is required".into(),
            ));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Parameter(format!(
                "perturbation step must be positive, got {}",
                self.step
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.cost > 0.0 && self.cost.is_finite()) {
            return Err(Error::Parameter(format!(
                "cost must be positive, got {}",
                self.cost
            )));
        }
        Ok(())
    }
}

/// One boosting round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub model: TrainedSvm,
    /// `1/2 ln((sqrt 2 - eps) / eps)`.
    pub alpha: f64,
    pub epsilon: f64,
    pub tpr: f64,
    pub tnr: f64,
    /// Transformation factors applied to the training kernel in this round.
    pub d_train: Vec<f64>,
    pub retained: bool,
    /// Weight in the final vote: `alpha` for retained rounds, 0 otherwise.
    pub vote_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionTier {
    /// `eps_t <= min(eps_1, 1/sqrt 2)` and `tpr_t >= tpr_1`.
    Strict,
    /// `eps_t <= 1/sqrt 2` and `tpr_t >= tpr_1`.
    Relaxed,
    /// Neither rule kept a round; only the first round votes.
    FirstRoundOnly,
}

/// Fitted binary ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub rounds: Vec<RoundRecord>,
    /// `k^t` used by round `t` (index 0 is round 1 and is all zeros).
    pub perturbation_history: Vec<Vec<f64>>,
    pub sigma: f64,
    pub cost: f64,
    pub step: f64,
    pub positive_class: usize,
    pub negative_class: usize,
    pub tier: SelectionTier,
    pub roi: Option<RoiMeta>,
}

/// Ensemble output for a batch of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Predicted class ids.
    pub labels: Vec<usize>,
    /// Raw weighted vote `sum_t w_t h_t(x)`; its sign (0 -> +1) gives the label.
    pub margins: Vec<f64>,
    /// Weight-normalized decision value `sum_t w_t f_t(x) / sum_t w_t`.
    pub scores: Vec<f64>,
}

/// Adds `step` to `k_i` for every `i` with `correct[i]`.
pub fn update_perturbation(k: &[f64], correct: &[bool], step: f64) -> Result<Vec<f64>> {
    if k.len() != correct.len() {
        return Err(Error::shape(
            format!("{} flags", k.len()),
            format!("{}", correct.len()),
        ));
    }
    Ok(k.iter()
        .zip(correct)
        .map(|(&ki, &ok)| if ok { ki + step } else { ki })
        .collect())
}

/// Distance of `(tpr, tnr)` from the ideal `(1, 1)`.
pub fn round_error(tpr: f64, tnr: f64) -> f64 {
    ((1.0 - tpr).powi(2) + (1.0 - tnr).powi(2)).sqrt()
}

/// `1/2 ln((sqrt 2 - eps) / eps)` with `eps` clamped away from 0 and `sqrt 2`.
pub fn round_weight(epsilon: f64) -> f64 {
    let e = epsilon.clamp(EPS_MIN, std::f64::consts::SQRT_2 - EPS_MIN);
    0.5 * ((std::f64::consts::SQRT_2 - e) / e).ln()
}

/// Rounds kept for the final vote (0-based), and which rule selected them.
pub fn select_rounds(epsilons: &[f64], tprs: &[f64]) -> (Vec<usize>, SelectionTier) {
    if epsilons.is_empty() {
        return (Vec::new(), SelectionTier::FirstRoundOnly);
    }
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let tpr1 = tprs[0];
    let strict_bound = epsilons[0].min(half);
    let pick = |bound: f64| -> Vec<usize> {
        (0..epsilons.len())
            .filter(|&t| epsilons[t] <= bound && tprs[t] >= tpr1)
            .collect()
    };
    let strict = pick(strict_bound);
    if !strict.is_empty() {
        return (strict, SelectionTier::Strict);
    }
    let relaxed = pick(half);
    if !relaxed.is_empty() {
        return (relaxed, SelectionTier::Relaxed);
    }
    (vec![0], SelectionTier::FirstRoundOnly)
}

/// True positive and true negative rates of signed predictions.
pub(crate) fn rates(y: &[f64], h: &[f64]) -> (f64, f64) {
    let (mut tp, mut p, mut tn, mut q) = (0usize, 0usize, 0usize, 0usize);
    for (&yi, &hi) in y.iter().zip(h) {
        if yi > 0.0 {
            p += 1;
            if hi > 0.0 {
                tp += 1;
            }
        } else {
            q += 1;
            if hi < 0.0 {
                tn += 1;
            }
        }
    }
    let tpr = if p > 0 { tp as f64 / p as f64 } else { 1.0 };
    let tnr = if q > 0 { tn as f64 / q as f64 } else { 1.0 };
    (tpr, tnr)
}

fn binary_classes(train: &Dataset, positive: usize) -> Result<(usize, Vec<f64>)> {
    if train.num_classes() != 2 {
        return Err(Error::Parameter(format!(
            "binary boosting needs exactly two classes, got {}",
            train.num_classes()
        )));
    }
    if positive > 1 {
        return Err(Error::Parameter(format!(
            "positive class {positive} out of range"
        )));
    }
    let negative = 1 - positive;
    let y = train
        .labels()
        .iter()
        .map(|&l| if l == positive { 1.0 } else { -1.0 })
        .collect();
    Ok((negative, y))
}

/// Fits KPBoost-SVM with the minority class as the positive class.
pub fn fit(train: &Dataset, params: &BoostParams) -> Result<Ensemble> {
    fit_with_positive(train, params, train.minority_class())
}

/// Fits KPBoost-SVM with an explicit positive class.
pub fn fit_with_positive(
    train: &Dataset,
    params: &BoostParams,
    positive: usize,
) -> Result<Ensemble> {
    fit_impl(train, params, positive, None)
}

pub(crate) fn fit_impl(
    train: &Dataset,
    params: &BoostParams,
    positive: usize,
    roi_meta: Option<RoiMeta>,
) -> Result<Ensemble> {
    params.validate()?;
    let (negative, y) = binary_classes(train, positive)?;
    let x = train.features();
    let n = train.len();

    let mut kernel = kernels::gram(x, params.sigma)?;
    let mut state = PerturbationState::initial(n);
    let mut f_prev = vec![0.0; n];
    let mut history = Vec::with_capacity(params.rounds);
    let mut records = Vec::with_capacity(params.rounds);

    for t in 1..=params.rounds {
        let wrap = |e: Error| Error::Round {
            round: t,
            source: Box::new(e),
        };
        let d = kernels::transformation_factors(&state, &f_prev).map_err(wrap)?;
        kernel = kernels::perturb(&kernel, &d).map_err(wrap)?;
        let model = svm::solve_dual(&kernel, &y, params.cost, &params.svm).map_err(wrap)?;
        let f = model.decision_values(kernel.view()).map_err(wrap)?;
        let h: Vec<f64> = f.iter().map(|&v| crate::sign(v)).collect();
        let correct: Vec<bool> = h.iter().zip(&y).map(|(a, b)| a == b).collect();
        let (tpr, tnr) = rates(&y, &h);

        let retain_mask = match &roi_meta {
            Some(meta) => roi::adjust_retention(&correct, &y, x, &meta.radii)?,
            None => correct,
        };
        history.push(state.k.clone());
        state.k = update_perturbation(&state.k, &retain_mask, params.step)?;
        state.round += 1;

        let epsilon = round_error(tpr, tnr);
        records.push(RoundRecord {
            model,
            alpha: round_weight(epsilon),
            epsilon,
            tpr,
            tnr,
            d_train: d,
            retained: false,
            vote_weight: 0.0,
        });
        f_prev = f;
    }

    let epsilons: Vec<f64> = records.iter().map(|r| r.epsilon).collect();
    let tprs: Vec<f64> = records.iter().map(|r| r.tpr).collect();
    let (kept, tier) = select_rounds(&epsilons, &tprs);
    for &t in &kept {
        records[t].retained = true;
        records[t].vote_weight = records[t].alpha;
    }
    // Only reachable through the first-round fallback or eps exactly 1/sqrt(2): alpha <= 0
    // would invert or silence the vote, so retained rounds vote with equal weight instead.
    if kept.iter().all(|&t| records[t].alpha <= 0.0) {
        for &t in &kept {
            records[t].vote_weight = 1.0;
        }
    }

    Ok(Ensemble {
        rounds: records,
        perturbation_history: history,
        sigma: params.sigma,
        cost: params.cost,
        step: params.step,
        positive_class: positive,
        negative_class: negative,
        tier,
        roi: roi_meta,
    })
}

/// Scales row `i` of `k` by `d[i]` in place; the same product as
/// [`kernels::perturb_cross`] with unit query factors.
fn scale_rows(k: &mut Array2<f64>, d: &[f64]) {
    for (mut row, &di) in k.rows_mut().into_iter().zip(d) {
        row.mapv_inplace(|v| v * di);
    }
}

pub(crate) struct VoteAccumulator {
    margins: Vec<f64>,
    weighted_f: Vec<f64>,
    weight_sum: f64,
}

impl VoteAccumulator {
    pub(crate) fn new(m: usize) -> Self {
        Self {
            margins: vec![0.0; m],
            weighted_f: vec![0.0; m],
            weight_sum: 0.0,
        }
    }

    pub(crate) fn add(&mut self, weight: f64, f: &[f64]) {
        if weight == 0.0 {
            return;
        }
        self.weight_sum += weight;
        for ((m, s), &v) in self
            .margins
            .iter_mut()
            .zip(self.weighted_f.iter_mut())
            .zip(f)
        {
            *m += weight * crate::sign(v);
            *s += weight * v;
        }
    }

    pub(crate) fn finish(self, ens: &Ensemble) -> Result<Prediction> {
        if self.weight_sum == 0.0 {
            return Err(Error::Internal("ensemble has no voting rounds".into()));
        }
        let labels = self
            .margins
            .iter()
            .map(|&m| {
                if crate::sign(m) > 0.0 {
                    ens.positive_class
                } else {
                    ens.negative_class
                }
            })
            .collect();
        let scores = self
            .weighted_f
            .iter()
            .map(|s| s / self.weight_sum)
            .collect();
        Ok(Prediction {
            labels,
            margins: self.margins,
            scores,
        })
    }
}

/// Weighted-vote prediction with unit transformation factors at the query points.
///
/// `train` must be the (normalized) training features the ensemble was fitted on.
pub fn predict(
    ens: &Ensemble,
    train: ArrayView2<'_, f64>,
    test: ArrayView2<'_, f64>,
) -> Result<Prediction> {
    ens.check_train(train)?;
    let m = test.nrows();
    let last = ens.last_voting_round()?;
    let mut fs = vec![Vec::with_capacity(m); last + 1];
    // column blocks keep the cross kernel cache resident
    for start in (0..m).step_by(PREDICT_BLOCK) {
        let block = test.slice(s![start..(start + PREDICT_BLOCK).min(m), ..]);
        let mut k_cross = kernels::cross_gram(train, block, ens.sigma)?;
        for (record, f) in ens.rounds[..=last].iter().zip(fs.iter_mut()) {
            scale_rows(&mut k_cross, &record.d_train);
            f.extend(record.model.decision_values(k_cross.view())?);
        }
    }
    let mut acc = VoteAccumulator::new(m);
    for (record, f) in ens.rounds[..=last].iter().zip(&fs) {
        acc.add(record.vote_weight, f);
    }
    acc.finish(ens)
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// 0-based indices of the retained rounds.
    pub fn retained_rounds(&self) -> Vec<usize> {
        (0..self.rounds.len())
            .filter(|&t| self.rounds[t].retained)
            .collect()
    }

    pub fn train_len(&self) -> usize {
        self.rounds.first().map_or(0, |r| r.model.len())
    }

    pub(crate) fn check_train(&self, train: ArrayView2<'_, f64>) -> Result<()> {
        if train.nrows() != self.train_len() {
            return Err(Error::shape(
                format!("{} training rows", self.train_len()),
                format!("{}", train.nrows()),
            ));
        }
        Ok(())
    }

    pub(crate) fn last_voting_round(&self) -> Result<usize> {
        self.rounds
            .iter()
            .rposition(|r| r.vote_weight != 0.0)
            .ok_or_else(|| Error::Internal("ensemble has no retained rounds".into()))
    }

    /// Predicts with the procedure matching how the ensemble was fitted.
    pub fn predict(
        &self,
        train: ArrayView2<'_, f64>,
        test: ArrayView2<'_, f64>,
    ) -> Result<Prediction> {
        if self.roi.is_some() {
            roi::predict_roi(self, train, test)
        } else {
            predict(self, train, test)
        }
    }

    /// Same rounds, perturbation history and hyperparameters; ignores ROI metadata.
    pub fn same_model(&self, other: &Ensemble) -> bool {
        self.rounds == other.rounds
            && self.perturbation_history == other.perturbation_history
            && self.sigma.to_bits() == other.sigma.to_bits()
            && self.cost.to_bits() == other.cost.to_bits()
            && self.step.to_bits() == other.step.to_bits()
            && self.positive_class == other.positive_class
            && self.tier == other.tier
    }

    /// Tab-separated per-round diagnostics with a header row.
    pub fn diagnostics_tsv(&self) -> String {
        let mut out = String::from("round\tepsilon\talpha\ttpr\ttnr\tretained\tvote_weight\tsupport_vectors\tsolver_iterations\n");
        for (t, r) in self.rounds.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t + 1,
                r.epsilon,
                r.alpha,
                r.tpr,
                r.tnr,
                r.retained,
                r.vote_weight,
                r.model.sv_indices.len(),
                r.model.iterations
            );
        }
        out
    }

    pub fn to_bundle(&self) -> EnsembleBundle {
        EnsembleBundle {
            format_version: EnsembleBundle::VERSION,
            variant: if self.roi.is_some() {
                "kproi"
            } else {
                "kpboost"
            }
            .to_string(),
            sigma: self.sigma,
            cost: self.cost,
            step: self.step,
            positive_class: self.positive_class,
            negative_class: self.negative_class,
            tier: self.tier,
            roi: self.roi.clone(),
            svms: self
                .rounds
                .iter()
                .enumerate()
                .map(|(t, r)| SvmRecord::new(&r.model, self.sigma, t + 1))
                .collect(),
            k_history: self.perturbation_history.clone(),
            d_history: self.rounds.iter().map(|r| r.d_train.clone()).collect(),
            table: self
                .rounds
                .iter()
                .enumerate()
                .map(|(t, r)| RoundRow {
                    round: t + 1,
                    alpha: r.alpha,
                    epsilon: r.epsilon,
                    tpr: r.tpr,
                    tnr: r.tnr,
                    retained: r.retained,
                    vote_weight: r.vote_weight,
                })
                .collect(),
        }
    }

    pub fn from_bundle(bundle: EnsembleBundle) -> Result<Self> {
        if bundle.format_version != EnsembleBundle::VERSION {
            return Err(Error::Format(format!(
                "unsupported ensemble bundle version {}",
                bundle.format_version
            )));
        }
        let t = bundle.svms.len();
        if bundle.table.len() != t || bundle.d_history.len() != t || bundle.k_history.len() != t {
            return Err(Error::Format(
                "ensemble bundle sections disagree on round count".into(),
            ));
        }
        if t == 0 {
            return Err(Error::Format("ensemble bundle has no rounds".into()));
        }
        let rounds = bundle
            .svms
            .into_iter()
            .zip(bundle.table)
            .zip(bundle.d_history)
            .map(|((svm, row), d)| {
                Ok(RoundRecord {
                    model: svm.into_model()?,
                    alpha: row.alpha,
                    epsilon: row.epsilon,
                    tpr: row.tpr,
                    tnr: row.tnr,
                    d_train: d,
                    retained: row.retained,
                    vote_weight: row.vote_weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ens = Ensemble {
            rounds,
            perturbation_history: bundle.k_history,
            sigma: bundle.sigma,
            cost: bundle.cost,
            step: bundle.step,
            positive_class: bundle.positive_class,
            negative_class: bundle.negative_class,
            tier: bundle.tier,
            roi: bundle.roi,
        };
        ens.last_voting_round()?;
        Ok(ens)
    }
}

/// Versioned on-disk form of an [`Ensemble`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBundle {
    pub format_version: u32,
    pub variant: String,
    pub sigma: f64,
    pub cost: f64,
    pub step: f64,
    pub positive_class: usize,
    pub negative_class: usize,
    pub tier: SelectionTier,
    pub roi: Option<RoiMeta>,
    pub svms: Vec<SvmRecord>,
    pub k_history: Vec<Vec<f64>>,
    pub d_history: Vec<Vec<f64>>,
    pub table: Vec<RoundRow>,
}

impl EnsembleBundle {
    pub const VERSION: u32 = 1;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub retained: bool,
    pub vote_weight: f64,
}

/// Kernel used by round `t` (1-based) during training; exposed for diagnostics and dumps.
pub fn training_kernel(
    train: ArrayView2<'_, f64>,
    ens: &Ensemble,
    round: usize,
) -> Result<KernelMatrix> {
    if round == 0 || round > ens.rounds.len() {
        return Err(Error::Parameter(format!("round {round} out of range")));
    }
    let mut k = kernels::gram(train, ens.sigma)?;
    for r in &ens.rounds[..round] {
        k = kernels::perturb(&k, &r.d_train)?;
    }
    Ok(k)
}
