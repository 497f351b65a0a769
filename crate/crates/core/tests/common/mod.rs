//! Independent oracles and fixture generators shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use kpboost_core::Dataset;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name)
}

/// Two isotropic Gaussians in `dim` dimensions; class 1 (the minority) is centred at
/// `separation / sqrt(dim)` on every axis.
pub fn two_gaussians(
    n_major: usize,
    n_minor: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let shift = separation / (dim as f64).sqrt();
    let n = n_major + n_minor;
    let mut x = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let minor = i >= n_major;
        for j in 0..dim {
            x[[i, j]] = normal.sample(&mut rng) + if minor { shift } else { 0.0 };
        }
        labels.push(usize::from(minor));
    }
    Dataset::from_labels(x, labels).unwrap()
}

pub fn random_points(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0))
}

pub fn sq_dist(x: ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(x.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Same-class neighbour lists by brute force: `(distance, index)` sort of all other points.
pub fn brute_neighbors(ds: &Dataset, u: usize, kappa: usize, global: bool) -> Vec<usize> {
    let x = ds.features();
    let labels = ds.labels();
    let c = labels[u];
    let size = ds.class_counts()[c];
    let mut all: Vec<(f64, usize)> = (0..ds.len())
        .filter(|&v| v != u)
        .map(|v| (sq_dist(x, u, v), v))
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if global {
        all.iter()
            .take(kappa.min(size))
            .filter(|p| labels[p.1] == c)
            .map(|p| p.1)
            .collect()
    } else {
        all.iter()
            .filter(|p| labels[p.1] == c)
            .take(kappa.min(size - 1))
            .map(|p| p.1)
            .collect()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn root(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            a = self.0[a];
        }
        a
    }

    fn join(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.root(a), self.root(b));
        self.0[ra] = rb;
    }
}

/// Components of the undirected graph built from the explicit edge list, one sorted vector
/// per component, components sorted by first element, grouped per class.
pub fn union_find_components(ds: &Dataset, kappa: usize, global: bool) -> Vec<Vec<Vec<usize>>> {
    let n = ds.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in brute_neighbors(ds, u, kappa, global) {
            edges.push((u, v));
        }
    }
    let mut uf = UnionFind((0..n).collect());
    for (u, v) in edges {
        uf.join(u, v);
    }
    let mut out = vec![Vec::new(); ds.num_classes()];
    let mut seen = std::collections::BTreeMap::new();
    for u in 0..n {
        let r = uf.root(u);
        seen.entry(r).or_insert_with(Vec::new).push(u);
    }
    for (_, comp) in seen {
        out[ds.labels()[comp[0]]].push(comp);
    }
    for parts in out.iter_mut() {
        parts.sort();
    }
    out
}

/// Euclidean projection onto `{0 <= l <= c, sum y l = 0}` by bisection on the multiplier.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |mu: f64| -> (Vec<f64>, f64) {
        let l: Vec<f64> = v
            .iter()
            .zip(y)
            .map(|(vi, yi)| (vi - mu * yi).clamp(0.0, c))
            .collect();
        let s = l.iter().zip(y).map(|(a, b)| a * b).sum();
        (l, s)
    };
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi)).0
}

/// Maximizes `sum l - 1/2 l^T Q l` over the SVM dual feasible set with accelerated projected
/// gradient ascent. Returns the coefficients and the objective.
pub fn projected_gradient_dual(
    k: ArrayView2<'_, f64>,
    y: &[f64],
    c: f64,
    iterations: usize,
) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = Array2::from_shape_fn((n, n), |(i, j)| y[i] * y[j] * k[[i, j]]);
    let lip = {
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| q[[i, j]]);
        m.symmetric_eigenvalues().max().max(1e-12)
    };
    let objective = |l: &[f64]| -> f64 {
        let ql = q.dot(&ndarray::ArrayView1::from(l));
        l.iter().sum::<f64>() - 0.5 * l.iter().zip(ql.iter()).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut l = vec![0.0; n];
    let mut z = l.clone();
    let mut t = 1.0f64;
    let mut best = (l.clone(), objective(&l));
    for _ in 0..iterations {
        let qz = q.dot(&ndarray::ArrayView1::from(&z[..]));
        let step: Vec<f64> = z
            .iter()
            .zip(qz.iter())
            .map(|(zi, g)| zi + (1.0 - g) / lip)
            .collect();
        let next = project(&step, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next
            .iter()
            .zip(&l)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        l = next;
        t = t_next;
        let obj = objective(&l);
        if obj > best.1 {
            best = (l.clone(), obj);
        }
    }
    best
}

pub fn min_max_eigen(k: ArrayView2<'_, f64>) -> (f64, f64) {
    let n = k.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| k[[i, j]]);
    let ev = m.symmetric_eigenvalues();
    (ev.min(), ev.max())
}
