//! Pooled and cluster-by-cluster least squares.

use nalgebra::{DMatrix, DVector};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::panel::PanelData;

/// Relative singular-value cutoff below which a design is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta_hat: Vec<f64>,
    /// Residuals of the fitted units, unit-major over all periods.
    pub residuals: Vec<f64>,
    /// `(1/n) Σ x xᵀ` over the fitted observations.
    pub gram: DMatrix<f64>,
    pub min_singular_value: f64,
    pub n_obs: usize,
}

/// Per-cluster fit together with the units it used.
#[derive(Debug, Clone)]
pub struct ClusterFit {
    /// 1-based cluster label.
    pub label: usize,
    pub units: Vec<usize>,
    pub fit: OlsFit,
}

impl ClusterFit {
    pub fn n_units(&self) -> usize {
        self.units.len()
    }
}

/// Score series `w[i, t, a] = x[i, t, a] * û[i, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    n_units: usize,
    n_periods: usize,
    n_covariates: usize,
    w: Vec<f64>,
}

impl ScoreSeries {
    pub fn from_flat(n_units: usize, n_periods: usize, n_covariates: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != n_units * n_periods * n_covariates {
            return Err(Error::ShapeMismatch(format!(
                "score buffer has {} entries, expected {n_units}x{n_periods}x{n_covariates}",
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { what: "score series".into() });
        }
        Ok(Self {
            n_units,
            n_periods,
            n_covariates,
            w,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    #[inline]
    pub fn get(&self, unit: usize, time: usize, covariate: usize) -> f64 {
        self.w[(unit * self.n_periods + time) * self.n_covariates + covariate]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.w
    }

    /// Restriction to periods `start..end`.
    pub fn slice_periods(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_periods {
            return Err(Error::ShapeMismatch(format!(
                "period range {start}..{end} outside 0..{}",
                self.n_periods
            )));
        }
        let len = end - start;
        let p = self.n_covariates;
        let mut w = Vec::with_capacity(self.n_units * len * p);
        for i in 0..self.n_units {
            let base = i * self.n_periods * p;
            w.extend_from_slice(&self.w[base + start * p..base + end * p]);
        }
        Ok(Self {
            n_units: self.n_units,
            n_periods: len,
            n_covariates: p,
            w,
        })
    }

    /// `n_units x n_periods` matrix of covariate `a`'s scores.
    pub fn component_matrix(&self, a: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_units, self.n_periods, |i, t| self.get(i, t, a))
    }
}

fn solve_least_squares(x: DMatrix<f64>, y: DVector<f64>) -> Result<OlsFit> {
    let (m, p) = x.shape();
    let gram = (x.transpose() * &x) / m as f64;
    if m < p {
        return Err(Error::RankDeficient { min_sv: 0.0, max_sv: 0.0 });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let max_sv = sv.max();
    let min_sv = sv.min();
    if !(max_sv > 0.0) || min_sv < RANK_TOLERANCE * max_sv {
        return Err(Error::RankDeficient { min_sv, max_sv });
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { min_sv, max_sv })?;
    let residuals = &y - &x * &beta;
    Ok(OlsFit {
        beta_hat: beta.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        gram,
        // singular values of X scaled onto the gram's 1/n normalisation
        min_singular_value: min_sv / (m as f64).sqrt(),
        n_obs: m,
    })
}

fn fit_units(panel: &PanelData, units: &[usize]) -> Result<OlsFit> {
    let t = panel.n_periods();
    let p = panel.n_covariates();
    let m = units.len() * t;
    let x = DMatrix::from_fn(m, p, |row, a| panel.x(units[row / t], row % t, a));
    let y = DVector::from_fn(m, |row, _| panel.y(units[row / t], row % t));
    solve_least_squares(x, y)
}

/// OLS of `y` on `x` over all `N * T` observations.
pub fn pooled_ols(panel: &PanelData) -> Result<OlsFit> {
    let units: Vec<usize> = (0..panel.n_units()).collect();
    fit_units(panel, &units)
}

/// One OLS fit per cluster, ordered by cluster label.
pub fn cluster_ols(panel: &PanelData, clusters: &ClusterAssignment) -> Result<Vec<ClusterFit>> {
    if clusters.len() != panel.n_units() {
        return Err(Error::LengthMismatch {
            left: clusters.len(),
            right: panel.n_units(),
        });
    }
    clusters
        .members()
        .into_iter()
        .enumerate()
        .map(|(j, units)| {
            let fit = fit_units(panel, &units).map_err(|e| match e {
                Error::RankDeficient { .. } => Error::ClusterRankDeficient(j + 1),
                other => other,
            })?;
            Ok(ClusterFit {
                label: j + 1,
                units,
                fit,
            })
        })
        .collect()
}

/// Scores from a fit over the whole panel (as produced by [`pooled_ols`]).
pub fn score_series(panel: &PanelData, fit: &OlsFit) -> Result<ScoreSeries> {
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_covariates());
    if fit.residuals.len() != n * t {
        return Err(Error::ShapeMismatch(format!(
            "fit has {} residuals, panel has {} cells",
            fit.residuals.len(),
            n * t
        )));
    }
    let w = panel
        .x_flat()
        .chunks_exact(p)
        .zip(&fit.residuals)
        .flat_map(|(row, u)| row.iter().map(move |x| x * u))
        .collect();
    ScoreSeries::from_flat(n, t, p, w)
}
