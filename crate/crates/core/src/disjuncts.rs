//! Disjunct identification from per-class nearest-neighbour graphs, the kappa-delta curve
//! and its knee.

use std::collections::VecDeque;
use std::fmt::Write as _;

use log::warn;
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};

/// Where a point's neighbours are searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighborScope {
    /// The `min(kappa, |C|)` nearest points of the whole dataset, then kept only if they share
    /// the point's class.
    GlobalFiltered,
    /// The `min(kappa, |C| - 1)` nearest points of the same class.
    WithinClass,
}

/// How components are read off the neighbour lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Traversal {
    /// Breadth-first search along out-edges, seeded from unvisited points in index order.
    /// Components depend on the seed order.
    Directed,
    /// Connected components of the undirected graph with an edge wherever either endpoint
    /// lists the other.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisjunctOptions {
    pub scope: NeighborScope,
    pub traversal: Traversal,
}

impl Default for DisjunctOptions {
    fn default() -> Self {
        Self {
            scope: NeighborScope::GlobalFiltered,
            traversal: Traversal::Directed,
        }
    }
}

impl DisjunctOptions {
    pub fn symmetric_within_class() -> Self {
        Self {
            scope: NeighborScope::WithinClass,
            traversal: Traversal::Symmetric,
        }
    }

    pub fn describe(&self) -> &'static str {
        match (self.scope, self.traversal) {
            (NeighborScope::GlobalFiltered, Traversal::Directed) => "global-filtered/directed",
            (NeighborScope::GlobalFiltered, Traversal::Symmetric) => "global-filtered/symmetric",
            (NeighborScope::WithinClass, Traversal::Directed) => "within-class/directed",
            (NeighborScope::WithinClass, Traversal::Symmetric) => "within-class/symmetric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisjunctPartition {
    /// `per_class[c][i]` holds the ascending point indices of disjunct `i` of class `c`.
    pub per_class: Vec<Vec<Vec<usize>>>,
    pub kappa: usize,
    pub delta_total: usize,
}

impl DisjunctPartition {
    /// For every point, `(class, disjunct id within class)`.
    pub fn assignments(&self, n: usize) -> Vec<Option<(usize, usize)>> {
        let mut out = vec![None; n];
        for (c, parts) in self.per_class.iter().enumerate() {
            for (d, members) in parts.iter().enumerate() {
                for &i in members {
                    if i < n {
                        out[i] = Some((c, d));
                    }
                }
            }
        }
        out
    }

    /// Lines of `class disjunct point`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# class disjunct point\n");
        for (c, parts) in self.per_class.iter().enumerate() {
            for (d, members) in parts.iter().enumerate() {
                for &i in members {
                    let _ = writeln!(out, "{c} {d} {i}");
                }
            }
        }
        out
    }

    /// Disjunct sizes per class.
    pub fn sizes(&self) -> Vec<Vec<usize>> {
        self.per_class
            .iter()
            .map(|p| p.iter().map(Vec::len).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaDeltaCurve {
    pub points: Vec<(usize, usize)>,
    pub knee: usize,
}

impl KappaDeltaCurve {
    pub fn delta_at(&self, kappa: usize) -> Option<usize> {
        self.points.iter().find(|p| p.0 == kappa).map(|p| p.1)
    }

    /// Two columns `kappa delta`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# kappa delta\n");
        for (k, d) in &self.points {
            let _ = writeln!(out, "{k} {d}");
        }
        out
    }
}

/// Every other point sorted by (distance, index), computed once per dataset.
pub struct NeighborIndex {
    order: Vec<Vec<usize>>,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
}

impl NeighborIndex {
    pub fn build(ds: &Dataset) -> Self {
        let x = ds.features();
        let order = (0..ds.len())
            .into_par_iter()
            .map(|i| sorted_neighbors(x, i))
            .collect();
        Self {
            order,
            labels: ds.labels().to_vec(),
            class_counts: ds.class_counts().to_vec(),
        }
    }

    /// Out-neighbours of `u` at neighbourhood size `kappa`.
    pub fn neighbors(&self, u: usize, kappa: usize, scope: NeighborScope) -> Vec<usize> {
        let c = self.labels[u];
        let size = self.class_counts[c];
        match scope {
            NeighborScope::GlobalFiltered => self.order[u]
                .iter()
                .take(kappa.min(size))
                .copied()
                .filter(|&v| self.labels[v] == c)
                .collect(),
            NeighborScope::WithinClass => self.order[u]
                .iter()
                .copied()
                .filter(|&v| self.labels[v] == c)
                .take(kappa.min(size.saturating_sub(1)))
                .collect(),
        }
    }

    fn len(&self) -> usize {
        self.labels.len()
    }
}

fn sorted_neighbors(x: ArrayView2<'_, f64>, i: usize) -> Vec<usize> {
    let xi = x.row(i);
    let mut d: Vec<(f64, usize)> = x
        .rows()
        .into_iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, r)| {
            (
                xi.iter()
                    .zip(r.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
                j,
            )
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, j)| j).collect()
}

/// Disjuncts of every class at neighbourhood size `kappa`.
pub fn find_disjuncts(
    ds: &Dataset,
    kappa: usize,
    options: DisjunctOptions,
) -> Result<DisjunctPartition> {
    if kappa < 1 {
        return Err(Error::Parameter("kappa must be at least 1".into()));
    }
    let index = NeighborIndex::build(ds);
    Ok(partition_with(&index, kappa, options))
}

/// As [`find_disjuncts`] with a prebuilt neighbour index.
pub fn partition_with(
    index: &NeighborIndex,
    kappa: usize,
    options: DisjunctOptions,
) -> DisjunctPartition {
    let classes = index.class_counts.len();
    let per_class: Vec<Vec<Vec<usize>>> = (0..classes)
        .into_par_iter()
        .map(|c| {
            let members: Vec<usize> = (0..index.len()).filter(|&i| index.labels[i] == c).collect();
            if members.is_empty() {
                warn!("class {c} has no points; skipped");
                return Vec::new();
            }
            match options.traversal {
                Traversal::Directed => directed_components(index, &members, kappa, options.scope),
                Traversal::Symmetric => symmetric_components(index, &members, kappa, options.scope),
            }
        })
        .collect();
    let delta_total = per_class.iter().map(Vec::len).sum();
    DisjunctPartition {
        per_class,
        kappa,
        delta_total,
    }
}

fn directed_components(
    index: &NeighborIndex,
    members: &[usize],
    kappa: usize,
    scope: NeighborScope,
) -> Vec<Vec<usize>> {
    let mut visited = vec![false; index.len()];
    let mut parts = Vec::new();
    for &seed in members {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut part = vec![seed];
        let mut queue = VecDeque::from([seed]);
        while let Some(u) = queue.pop_front() {
            for v in index.neighbors(u, kappa, scope) {
                if !visited[v] {
                    visited[v] = true;
                    part.push(v);
                    queue.push_back(v);
                }
            }
        }
        part.sort_unstable();
        parts.push(part);
    }
    parts
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

fn symmetric_components(
    index: &NeighborIndex,
    members: &[usize],
    kappa: usize,
    scope: NeighborScope,
) -> Vec<Vec<usize>> {
    let pos: std::collections::HashMap<usize, usize> =
        members.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut parent: Vec<usize> = (0..members.len()).collect();
    for (p, &u) in members.iter().enumerate() {
        for v in index.neighbors(u, kappa, scope) {
            let (a, b) = (find(&mut parent, p), find(&mut parent, pos[&v]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; members.len()];
    for (p, &u) in members.iter().enumerate() {
        let r = find(&mut parent, p);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(u);
    }
    groups
}

/// delta(kappa) for kappa = 1..=floor(sqrt N), with the knee.
pub fn kappa_delta_curve(ds: &Dataset, options: DisjunctOptions) -> Result<KappaDeltaCurve> {
    if ds.len() < 2 {
        return Err(Error::DegenerateDataset(
            "need at least two points for a kappa-delta curve".into(),
        ));
    }
    let index = NeighborIndex::build(ds);
    let max_kappa = (ds.len() as f64).sqrt().floor() as usize;
    let points: Vec<(usize, usize)> = (1..=max_kappa)
        .into_par_iter()
        .map(|k| (k, partition_with(&index, k, options).delta_total))
        .collect();
    let knee = knee_point(&points);
    Ok(KappaDeltaCurve { points, knee })
}

/// Curve, knee and the partition at the knee.
pub fn profile(
    ds: &Dataset,
    options: DisjunctOptions,
) -> Result<(KappaDeltaCurve, DisjunctPartition)> {
    let curve = kappa_delta_curve(ds, options)?;
    let index = NeighborIndex::build(ds);
    let part = partition_with(&index, curve.knee, options);
    Ok((curve, part))
}

const KNEE_TIE: f64 = 1e-12;

/// Point of maximal distance to the chord joining the first and last points after min-max
/// scaling of both axes; ties go to the smallest kappa.
pub fn knee_point(curve: &[(usize, usize)]) -> usize {
    if curve.len() < 2 {
        return curve.first().map_or(1, |p| p.0);
    }
    let scale = |vals: Vec<f64>| -> Vec<f64> {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            vals.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.0; vals.len()]
        }
    };
    let xs = scale(curve.iter().map(|p| p.0 as f64).collect());
    let ys = scale(curve.iter().map(|p| p.1 as f64).collect());
    let last = xs.len() - 1;
    let (dx, dy) = (xs[last] - xs[0], ys[last] - ys[0]);
    let norm = (dx * dx + dy * dy).sqrt();
    let mut best = (curve[0].0, 0.0);
    if norm == 0.0 {
        return best.0;
    }
    for i in 0..xs.len() {
        let dist = (dy * (xs[i] - xs[0]) - dx * (ys[i] - ys[0])).abs() / norm;
        if dist > best.1 + KNEE_TIE {
            best = (curve[i].0, dist);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn clusters(centres: &[(f64, f64, usize)], per: usize, spread: f64) -> Dataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for &(cx, cy, class) in centres {
            for k in 0..per {
                let a = k as f64 * 2.399;
                rows.push([
                    cx + spread * a.cos() * (1.0 + k as f64 * 0.1),
                    cy + spread * a.sin(),
                ]);
                labels.push(class);
            }
        }
        let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        Dataset::from_labels(x, labels).unwrap()
    }

    fn assert_partition(ds: &Dataset, part: &DisjunctPartition) {
        for (c, parts) in part.per_class.iter().enumerate() {
            let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, ds.class_indices(c));
            assert!(parts.iter().all(|p| !p.is_empty()));
        }
    }

    #[test]
    fn knee_examples() {
        let mut curve = vec![
            (1, 100),
            (2, 20),
            (3, 15),
            (4, 14),
            (5, 13),
            (6, 12),
            (7, 11),
        ];
        curve.extend((8..=12).map(|k| (k, 10)));
        assert_eq!(knee_point(&curve), 2);
        let linear: Vec<(usize, usize)> = (1..=6).map(|k| (k, 60 - 10 * k)).collect();
        assert_eq!(knee_point(&linear), 1);
        assert_eq!(knee_point(&[(1, 4), (2, 4), (3, 4)]), 1);
        assert_eq!(knee_point(&[(3, 9)]), 3);
        assert_eq!(knee_point(&[]), 1);
    }

    #[test]
    fn complete_graph_is_one_disjunct() {
        let ds = clusters(&[(0.0, 0.0, 0), (5.0, 5.0, 1)], 6, 0.3);
        for opts in [
            DisjunctOptions::default(),
            DisjunctOptions::symmetric_within_class(),
        ] {
            let part = find_disjuncts(&ds, 6, opts).unwrap();
            assert_eq!(part.delta_total, 2);
            assert_partition(&ds, &part);
        }
    }

    #[test]
    fn separated_clusters_split_at_kappa_one() {
        let ds = clusters(&[(0.0, 0.0, 0), (50.0, 0.0, 0), (0.0, 50.0, 1)], 2, 0.5);
        let part = find_disjuncts(&ds, 1, DisjunctOptions::symmetric_within_class()).unwrap();
        assert_eq!(part.per_class[0].len(), 2);
        assert_eq!(part.per_class[1].len(), 1);
    }

    #[test]
    fn three_clusters_per_class() {
        let centres = [
            (0.0, 0.0, 0),
            (20.0, 0.0, 0),
            (40.0, 0.0, 0),
            (0.0, 20.0, 1),
            (20.0, 20.0, 1),
            (40.0, 20.0, 1),
        ];
        let ds = clusters(&centres, 8, 0.5);
        for opts in [
            DisjunctOptions::default(),
            DisjunctOptions::symmetric_within_class(),
        ] {
            for kappa in 7..=7 {
                let part = find_disjuncts(&ds, kappa, opts).unwrap();
                assert_eq!(part.delta_total, 6, "{} kappa {kappa}", opts.describe());
                assert_partition(&ds, &part);
            }
        }
        let curve = kappa_delta_curve(&ds, DisjunctOptions::symmetric_within_class()).unwrap();
        assert_eq!(curve.points.len(), 6);
        assert_eq!(curve.delta_at(6), Some(6));
        assert_eq!(curve.delta_at(curve.knee), Some(6));
    }

    #[test]
    fn directed_traversal_follows_out_edges() {
        // 0 -> 1 <-> 2 and 3 -> 2 in one class: seed 0 reaches 1 and 2; 3 starts its own part
        let x = Array2::from_shape_vec((5, 1), vec![0.0, 1.5, 2.0, 3.2, 100.0]).unwrap();
        let ds = Dataset::from_labels(x, vec![0, 0, 0, 0, 1]).unwrap();
        let opts = DisjunctOptions {
            scope: NeighborScope::WithinClass,
            traversal: Traversal::Directed,
        };
        let part = find_disjuncts(&ds, 1, opts).unwrap();
        assert_eq!(part.per_class[0], vec![vec![0, 1, 2], vec![3]]);
        let sym = find_disjuncts(&ds, 1, DisjunctOptions::symmetric_within_class()).unwrap();
        assert_eq!(sym.per_class[0], vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn global_neighbours_are_filtered_by_class() {
        // the nearest point to 0 is of the other class, so kappa = 1 leaves 0 isolated
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 0.1, 1.0, 1.05]).unwrap();
        let ds = Dataset::from_labels(x, vec![0, 1, 0, 1]).unwrap();
        let index = NeighborIndex::build(&ds);
        assert!(index
            .neighbors(0, 1, NeighborScope::GlobalFiltered)
            .is_empty());
        assert_eq!(index.neighbors(0, 1, NeighborScope::WithinClass), vec![2]);
        assert_eq!(
            index.neighbors(0, 2, NeighborScope::GlobalFiltered),
            vec![2]
        );
    }

    #[test]
    fn text_exports() {
        let ds = clusters(&[(0.0, 0.0, 0), (9.0, 9.0, 1)], 3, 0.2);
        let (curve, part) = profile(&ds, DisjunctOptions::default()).unwrap();
        assert_eq!(curve.to_text().lines().count(), 1 + curve.points.len());
        assert_eq!(part.to_text().lines().count(), 1 + ds.len());
        let assign = part.assignments(ds.len());
        assert!(assign.iter().all(Option::is_some));
    }
}
