//! Cluster discovery by thresholding the long-run correlation matrix and
//! taking connected components of the surviving links.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::longrun::{longrun_matrix, KernelSpec, LongRunMatrix};
use crate::panel::PanelData;
use crate::regression::{pooled_ols, score_series};

/// Partition of units into clusters labelled `1..=q_hat` in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    q_hat: usize,
}

impl ClusterAssignment {
    /// Canonicalises arbitrary labels.
    pub fn from_labels<L: Eq + std::hash::Hash>(raw: impl IntoIterator<Item = L>) -> Result<Self> {
        let mut map = HashMap::new();
        let labels: Vec<usize> = raw
            .into_iter()
            .map(|l| {
                let next = map.len() + 1;
                *map.entry(l).or_insert(next)
            })
            .collect();
        if labels.is_empty() {
            return Err(Error::InvalidConfig("cluster assignment over zero units".into()));
        }
        Ok(Self {
            q_hat: map.len(),
            labels,
        })
    }

    /// Contiguous blocks of `size` units each.
    pub fn contiguous_blocks(n_units: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidConfig("cluster size must be positive".into()));
        }
        Self::from_labels((0..n_units).map(|i| i / size))
    }

    pub fn singletons(n_units: usize) -> Self {
        Self {
            labels: (1..=n_units).collect(),
            q_hat: n_units,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn q_hat(&self) -> usize {
        self.q_hat
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Unit indices of each cluster, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.q_hat];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l - 1].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.q_hat];
        for &l in &self.labels {
            out[l - 1] += 1;
        }
        out
    }

    /// Writes `unit,cluster` rows.
    pub fn write_delimited<W: Write>(&self, unit_ids: &[String], w: W) -> Result<()> {
        if unit_ids.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: unit_ids.len(),
                right: self.len(),
            });
        }
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["unit", "cluster"])?;
        for (id, l) in unit_ids.iter().zip(&self.labels) {
            w.write_record([id.as_str(), &l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `unit,cluster` rows and aligns them to `unit_ids`.
    pub fn read_delimited<R: Read>(r: R, unit_ids: &[String]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut by_unit = HashMap::new();
        for record in reader.records() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::SchemaMismatch("cluster file needs unit and cluster columns".into()));
            }
            by_unit.insert(record[0].to_string(), record[1].to_string());
        }
        let labels = unit_ids
            .iter()
            .map(|id| {
                by_unit
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::SchemaMismatch(format!("unit `{id}` has no cluster label")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_labels(labels)
    }
}

/// Which matrix the threshold is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdTarget {
    /// `σ̂ᵢⱼ / sqrt(σ̂ᵢᵢ σ̂ⱼⱼ)`.
    Correlation,
    /// Raw `σ̂ᵢⱼ`.
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    pub eta_tilde: f64,
    pub applied_to: ThresholdTarget,
}

impl ThresholdConfig {
    pub fn new(eta_tilde: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta_tilde) {
            return Err(Error::InvalidThreshold(eta_tilde));
        }
        Ok(Self {
            eta_tilde,
            applied_to: ThresholdTarget::Correlation,
        })
    }

    /// Threshold on raw magnitudes. Any nonnegative level is allowed.
    pub fn on_magnitude(level: f64) -> Result<Self> {
        if !(level >= 0.0) {
            return Err(Error::InvalidThreshold(level));
        }
        Ok(Self {
            eta_tilde: level,
            applied_to: ThresholdTarget::Magnitude,
        })
    }
}

/// Symmetric boolean adjacency, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    links: Vec<bool>,
}

impl Adjacency {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut links = vec![false; n * n];
        for i in 0..n {
            links[i * n + i] = true;
        }
        for &(i, j) in edges {
            links[i * n + j] = true;
            links[j * n + i] = true;
        }
        Self { n, links }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.links[i * self.n + j]
    }

    pub fn edge_count(&self) -> usize {
        (0..self.n)
            .flat_map(|i| (i + 1..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.linked(i, j))
            .count()
    }
}

/// Keeps the link `(i, j)` when the thresholded entry is at least `eta_tilde`.
pub fn threshold_adjacency(matrix: &LongRunMatrix, config: &ThresholdConfig) -> Adjacency {
    let m = match config.applied_to {
        ThresholdTarget::Correlation => &matrix.corr,
        ThresholdTarget::Magnitude => &matrix.sigma,
    };
    threshold_matrix(m, config.eta_tilde)
}

pub fn threshold_matrix(m: &DMatrix<f64>, level: f64) -> Adjacency {
    let n = m.nrows();
    let mut links = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            links[i * n + j] = i == j || m[(i, j)] >= level;
        }
    }
    Adjacency { n, links }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

pub fn connected_components(adjacency: &Adjacency) -> ClusterAssignment {
    let n = adjacency.n();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if adjacency.linked(i, j) {
                uf.union(i, j);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    ClusterAssignment::from_labels(roots).unwrap_or_else(|_| ClusterAssignment::singletons(0))
}

/// Components of the graph linking `i, j` whenever `m[(i, j)] >= level`,
/// without materialising the adjacency.
pub fn components_at(m: &DMatrix<f64>, level: f64) -> ClusterAssignment {
    let n = m.nrows();
    let mut uf = UnionFind::new(n);
    for j in 0..n {
        for i in 0..j {
            if m[(i, j)] >= level {
                uf.union(i, j);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    ClusterAssignment::from_labels(roots).unwrap_or_else(|_| ClusterAssignment::singletons(0))
}

/// Full pipeline: pooled OLS, scores, long-run matrix, threshold, components.
pub fn discover_clusters(
    panel: &PanelData,
    kernel: KernelSpec,
    config: &ThresholdConfig,
) -> Result<(ClusterAssignment, LongRunMatrix)> {
    let fit = pooled_ols(panel)?;
    let scores = score_series(panel, &fit)?;
    let matrix = longrun_matrix(&scores, kernel)?;
    let clusters = connected_components(&threshold_adjacency(&matrix, config));
    Ok((clusters, matrix))
}

/// Same partition up to relabelling.
pub fn clusters_equivalent(g: &ClusterAssignment, g2: &ClusterAssignment) -> Result<bool> {
    if g.len() != g2.len() {
        return Err(Error::LengthMismatch {
            left: g.len(),
            right: g2.len(),
        });
    }
    // both are canonical, so equal partitions have equal label vectors
    Ok(g.labels == g2.labels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Purity {
    pub min: f64,
    pub avg: f64,
}

/// For each estimated cluster, the largest share of its members belonging to
/// one true cluster; returns the minimum and unweighted mean over clusters.
pub fn purity(estimated: &ClusterAssignment, truth: &ClusterAssignment) -> Result<Purity> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimated.len(),
            right: truth.len(),
        });
    }
    let q_true = truth.q_hat();
    let mut counts = vec![0usize; estimated.q_hat() * q_true];
    for (e, t) in estimated.labels().iter().zip(truth.labels()) {
        counts[(e - 1) * q_true + (t - 1)] += 1;
    }
    let sizes = estimated.sizes();
    let per_cluster: Vec<f64> = counts
        .chunks(q_true)
        .zip(&sizes)
        .map(|(row, &size)| *row.iter().max().unwrap() as f64 / size as f64)
        .collect();
    let min = per_cluster.iter().copied().fold(f64::INFINITY, f64::min);
    let avg = per_cluster.iter().sum::<f64>() / per_cluster.len() as f64;
    Ok(Purity { min, avg })
}
