//! RBF kernel evaluation, Gram matrices and the per-round conformal rescaling.
//!
//! A conformal transformation rescales the kernel as `K'(x, x') = D(x) K(x, x') D(x')`.
//! In matrix form this is `diag(D) K diag(D)`, which keeps `K` symmetric positive
//! semidefinite for any nonnegative `D`. Boosting rounds shrink `D` around correctly
//! classified points, so resolution is relatively higher near the hard ones.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RBF widths searched by model selection.
pub const SIGMA_GRID: [f64; 38] = [
    0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1, //
    0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, //
    2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, //
    20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, //
    200.0,
];

/// Dense symmetric Gram matrix together with the RBF width that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
    pub sigma: f64,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Largest absolute asymmetry `|K_ij - K_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.values[[i, j]] - self.values[[j, i]]).abs());
            }
        }
        worst
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "sigma must be positive, got {sigma}"
        )))
    }
}

#[inline]
fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn rbf_unchecked(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, gamma: f64) -> f64 {
    (-squared_distance(a, b) * gamma).exp()
}

#[inline]
fn rbf_slices(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (-d * gamma).exp()
}

/// `exp(-|x - x2|^2 / (2 sigma^2))`.
pub fn rbf(x: ArrayView1<'_, f64>, x2: ArrayView1<'_, f64>, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if x.len() != x2.len() {
        return Err(Error::shape(
            format!("{} features", x.len()),
            format!("{} features", x2.len()),
        ));
    }
    Ok(rbf_unchecked(x, x2, 1.0 / (2.0 * sigma * sigma)))
}

fn check_finite(x: ArrayView2<'_, f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(
            "non-finite feature value in kernel input".into(),
        ))
    }
}

/// Gram matrix of the rows of `x`. Rows are computed in parallel; the diagonal is exactly 1.
pub fn gram(x: ArrayView2<'_, f64>, sigma: f64) -> Result<KernelMatrix> {
    check_sigma(sigma)?;
    check_finite(x)?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Parameter("gram matrix of zero points".into()));
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let x = x.as_standard_layout();
    let d = x.ncols();
    let xs = x.as_slice().expect("standard layout");
    let mut values = Array2::<f64>::zeros((n, n));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let xi = &xs[i * d..(i + 1) * d];
            for (j, out) in row.iter_mut().enumerate() {
                *out = if i == j {
                    1.0
                } else {
                    rbf_slices(xi, &xs[j * d..(j + 1) * d], gamma)
                };
            }
        });
    Ok(KernelMatrix { values, sigma })
}

/// `n x m` kernel block between training rows and query rows.
pub fn cross_gram(
    train: ArrayView2<'_, f64>,
    query: ArrayView2<'_, f64>,
    sigma: f64,
) -> Result<Array2<f64>> {
    check_sigma(sigma)?;
    check_finite(train)?;
    check_finite(query)?;
    if train.ncols() != query.ncols() {
        return Err(Error::shape(
            format!("{} features", train.ncols()),
            format!("{} features", query.ncols()),
        ));
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let (train, query) = (train.as_standard_layout(), query.as_standard_layout());
    let d = train.ncols();
    let (ts, qs) = (
        train.as_slice().expect("standard layout"),
        query.as_slice().expect("standard layout"),
    );
    let mut values = Array2::<f64>::zeros((train.nrows(), query.nrows()));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let xi = &ts[i * d..(i + 1) * d];
            for (j, out) in row.iter_mut().enumerate() {
                *out = rbf_slices(xi, &qs[j * d..(j + 1) * d], gamma);
            }
        });
    Ok(values)
}

/// Per-point perturbation parameters `k_i` at a given boosting round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationState {
    pub k: Vec<f64>,
    pub round: usize,
}

impl PerturbationState {
    /// Round-1 state: all parameters zero.
    pub fn initial(n: usize) -> Self {
        Self {
            k: vec![0.0; n],
            round: 1,
        }
    }
}

/// `D_i = exp(-k_i f_i^2)`.
///
/// The result is floored at the smallest positive normal `f64` so that factors stay in
/// `(0, 1]` when the exponent underflows.
pub fn transformation_factors(state: &PerturbationState, f_prev: &[f64]) -> Result<Vec<f64>> {
    if state.k.len() != f_prev.len() {
        return Err(Error::shape(
            format!("{} decision values", state.k.len()),
            format!("{}", f_prev.len()),
        ));
    }
    state
        .k
        .iter()
        .zip(f_prev)
        .enumerate()
        .map(|(i, (&k, &f))| {
            if !k.is_finite() || k < 0.0 {
                return Err(Error::StateCorruption(format!("k[{i}] = {k}")));
            }
            if !f.is_finite() {
                return Err(Error::Numeric(format!("decision value {i} is {f}")));
            }
            Ok((-k * f * f).exp().max(f64::MIN_POSITIVE))
        })
        .collect()
}

fn check_factors(d: &[f64]) -> Result<()> {
    match d.iter().position(|&v| !(v > 0.0 && v <= 1.0)) {
        Some(i) => Err(Error::Parameter(format!(
            "transformation factor {i} = {} not in (0, 1]",
            d[i]
        ))),
        None => Ok(()),
    }
}

/// `diag(D) K diag(D)`.
pub fn perturb(k: &KernelMatrix, d: &[f64]) -> Result<KernelMatrix> {
    let n = k.len();
    if d.len() != n {
        return Err(Error::shape(format!("{n} factors"), format!("{}", d.len())));
    }
    check_factors(d)?;
    let mut values = k.values.clone();
    Zip::indexed(&mut values).par_for_each(|(i, j), v| *v *= d[i] * d[j]);
    Ok(KernelMatrix {
        values,
        sigma: k.sigma,
    })
}

/// Entry `(i, j)` of the train-by-query block multiplied by `d_train[i] * d_test[j]`.
pub fn perturb_cross(
    k_cross: ArrayView2<'_, f64>,
    d_train: &[f64],
    d_test: &[f64],
) -> Result<Array2<f64>> {
    let (n, m) = k_cross.dim();
    if d_train.len() != n || d_test.len() != m {
        return Err(Error::shape(
            format!("{n} x {m} factors"),
            format!("{} x {}", d_train.len(), d_test.len()),
        ));
    }
    check_factors(d_train)?;
    check_factors(d_test)?;
    let mut values = k_cross.to_owned();
    Zip::indexed(&mut values).par_for_each(|(i, j), v| *v *= d_train[i] * d_test[j]);
    Ok(values)
}

const DUMP_MAGIC: &[u8; 4] = b"KPBK";

/// Writes a Gram matrix as `KPBK`, `u32 n`, two reserved zero `u32`, then `n*n` row-major `f64`,
/// all little-endian.
pub fn write_gram_dump<W: Write>(mut out: W, k: &KernelMatrix) -> std::io::Result<()> {
    let n = u32::try_from(k.len()).map_err(|_| std::io::Error::other("matrix too large"))?;
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&n.to_le_bytes())?;
    out.write_all(&[0u8; 8])?;
    for v in k.values.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a dump written by [`write_gram_dump`]. The width is not stored, so `sigma` must be supplied.
pub fn read_gram_dump<R: Read>(mut input: R, sigma: f64) -> Result<KernelMatrix> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::Format(format!("gram dump header: {e}")))?;
    if &header[..4] != DUMP_MAGIC {
        return Err(Error::Format("bad gram dump magic".into()));
    }
    let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; n * n * 8];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("gram dump body: {e}")))?;
    let values = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values =
        Array2::from_shape_vec((n, n), values).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(KernelMatrix { values, sigma })
}
