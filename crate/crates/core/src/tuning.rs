//! Block cross-validation of the bandwidth and correlation threshold.
//!
//! The sample is cut into `P = round(ln T)` contiguous blocks. For each
//! candidate bandwidth every block gets its own long-run correlation matrix;
//! a candidate threshold is scored by how close each thresholded block
//! matrix is, in squared Frobenius norm, to the unthresholded matrices of
//! all other blocks.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::longrun::{KernelSpec, LagMoments, LongRunMatrix};
use crate::panel::PanelData;
use crate::regression::{pooled_ols, score_series, OlsFit, ScoreSeries};

/// Most bandwidth candidates in a default grid.
pub const MAX_DEFAULT_BANDWIDTHS: usize = 14;
/// Threshold candidates in a default grid, evenly spaced over `[0, 1]`.
pub const DEFAULT_THRESHOLD_POINTS: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub bandwidths: Vec<usize>,
    pub thresholds: Vec<f64>,
}

impl TuningGrid {
    pub fn new(mut bandwidths: Vec<usize>, mut thresholds: Vec<f64>) -> Result<Self> {
        bandwidths.sort_unstable();
        bandwidths.dedup();
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        thresholds.dedup();
        if bandwidths.is_empty() || thresholds.is_empty() {
            return Err(Error::InvalidGrid("empty bandwidth or threshold list".into()));
        }
        if bandwidths[0] == 0 {
            return Err(Error::InvalidGrid("bandwidths start at 1".into()));
        }
        if let Some(bad) = thresholds.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidThreshold(*bad));
        }
        Ok(Self { bandwidths, thresholds })
    }

    /// Bandwidths `1..=floor(sqrt T)` (thinned to at most 14 log-spaced
    /// values and kept below the shortest block), thresholds `0, 0.05, .., 1`.
    pub fn default_for(periods: usize) -> Result<Self> {
        let blocks = partition_blocks(periods)?;
        let shortest = blocks.iter().map(|b| b.len()).min().unwrap_or(0);
        let upper = ((periods as f64).sqrt().floor() as usize).min(shortest.saturating_sub(1));
        if upper < 1 {
            return Err(Error::TooFewPeriods(periods));
        }
        let bandwidths: Vec<usize> = if upper <= MAX_DEFAULT_BANDWIDTHS {
            (1..=upper).collect()
        } else {
            let top = (upper as f64).ln();
            let mut v: Vec<usize> = (0..MAX_DEFAULT_BANDWIDTHS)
                .map(|k| (top * k as f64 / (MAX_DEFAULT_BANDWIDTHS - 1) as f64).exp().round() as usize)
                .collect();
            v.dedup();
            v
        };
        let thresholds = (0..DEFAULT_THRESHOLD_POINTS)
            .map(|k| k as f64 / (DEFAULT_THRESHOLD_POINTS - 1) as f64)
            .collect();
        Self::new(bandwidths, thresholds)
    }
}

/// Which block matrix entries are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvTarget {
    /// The long-run correlation built from absolute values, as used for
    /// discovery.
    Correlation,
    /// The same normalisation without absolute values; entries are kept
    /// when their magnitude reaches the threshold.
    SignedCorrelation,
}

impl CvTarget {
    fn matrix(self, m: &LongRunMatrix) -> &DMatrix<f64> {
        match self {
            CvTarget::Correlation => &m.corr,
            CvTarget::SignedCorrelation => &m.signed_corr,
        }
    }
}

impl std::str::FromStr for CvTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlation" | "abs" => Ok(Self::Correlation),
            "signed" | "signed-correlation" => Ok(Self::SignedCorrelation),
            other => Err(Error::InvalidConfig(format!("unknown cross-validation target `{other}`"))),
        }
    }
}

impl Default for CvTarget {
    fn default() -> Self {
        CvTarget::SignedCorrelation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPoint {
    pub bandwidth: usize,
    pub threshold: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best_bandwidth: usize,
    pub best_threshold: f64,
    pub surface: Vec<CvPoint>,
}

impl CvResult {
    pub fn best_score(&self) -> f64 {
        self.surface
            .iter()
            .find(|p| p.bandwidth == self.best_bandwidth && p.threshold == self.best_threshold)
            .map(|p| p.score)
            .unwrap_or(f64::NAN)
    }

    /// `bandwidth,eta_tilde,score` rows.
    pub fn write_surface<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bandwidth,eta_tilde,score")?;
        for p in &self.surface {
            writeln!(w, "{},{},{}", p.bandwidth, p.threshold, crate::panel::format_float(p.score))?;
        }
        Ok(())
    }
}

/// `round(ln T)` contiguous blocks whose lengths differ by at most one.
pub fn partition_blocks(periods: usize) -> Result<Vec<Range<usize>>> {
    let count = (periods as f64).ln().round() as usize;
    if count < 2 || periods < count {
        return Err(Error::TooFewPeriods(periods));
    }
    let base = periods / count;
    let extra = periods % count;
    let mut start = 0;
    Ok((0..count)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

fn block_moments(scores: &ScoreSeries, blocks: &[Range<usize>], max_lag: usize) -> Result<Vec<LagMoments>> {
    blocks
        .iter()
        .map(|b| {
            if max_lag >= b.len() {
                return Err(Error::BandwidthTooLargeForBlock {
                    bandwidth: max_lag,
                    block_len: b.len(),
                });
            }
            LagMoments::new(&scores.slice_periods(b.start, b.end)?, max_lag)
        })
        .collect()
}

/// Long-run matrix of each block, using residuals of the full-sample fit.
pub fn block_estimates(
    panel: &PanelData,
    fit: &OlsFit,
    blocks: &[Range<usize>],
    bandwidth: usize,
) -> Result<Vec<LongRunMatrix>> {
    let scores = score_series(panel, fit)?;
    block_moments(&scores, blocks, bandwidth)?
        .iter()
        .map(|m| m.longrun(KernelSpec::bartlett(bandwidth)))
        .collect()
}

/// `Σ_p Σ_{p'≠p} ‖Σ̃_p(η̃) − Σ̂_{p'}‖²_F` where `Σ̃_p` zeroes off-diagonal
/// entries whose magnitude is below `η̃`.
pub fn cv_objective(block_mats: &[LongRunMatrix], eta_tilde: f64, target: CvTarget) -> f64 {
    let mats: Vec<&DMatrix<f64>> = block_mats.iter().map(|m| target.matrix(m)).collect();
    let n = mats.first().map_or(0, |m| m.nrows());
    let mut total = 0.0;
    for (p, mp) in mats.iter().enumerate() {
        let thresholded = DMatrix::from_fn(n, n, |i, j| {
            let v = mp[(i, j)];
            if i == j || v.abs() >= eta_tilde {
                v
            } else {
                0.0
            }
        });
        for (q, mq) in mats.iter().enumerate() {
            if p != q {
                total += (&thresholded - *mq).norm_squared();
            }
        }
    }
    total
}

/// Objective at every threshold for one bandwidth, in one pass over the
/// entries. Expanding the squares, an off-diagonal entry `s` of block `p`
/// contributes `Σ_{p'≠p} s_{p'}²` when zeroed and an extra
/// `(P−1)s² − 2s·Σ_{p'≠p} s_{p'}` when kept.
fn objective_curve(mats: &[&DMatrix<f64>], thresholds: &[f64]) -> Vec<f64> {
    let blocks = mats.len();
    let n = mats.first().map_or(0, |m| m.nrows());
    let others = (blocks - 1) as f64;
    let mut base = 0.0;
    // kept_delta[c]: summed extra cost of entries kept at the first c thresholds
    let mut kept_delta = vec![0.0; thresholds.len() + 1];
    let mut values = vec![0.0; blocks];
    for j in 0..n {
        for i in 0..n {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for (v, m) in values.iter_mut().zip(mats) {
                *v = m[(i, j)];
                sum += *v;
                sum_sq += *v * *v;
            }
            if i == j {
                for v in &values {
                    base += others * v * v - 2.0 * v * (sum - v) + (sum_sq - v * v);
                }
                continue;
            }
            for v in &values {
                base += sum_sq - v * v;
                let delta = others * v * v - 2.0 * v * (sum - v);
                let kept_at = thresholds.partition_point(|eta| *eta <= v.abs());
                kept_delta[kept_at] += delta;
            }
        }
    }
    let mut out = vec![0.0; thresholds.len()];
    let mut acc = 0.0;
    for k in (0..thresholds.len()).rev() {
        acc += kept_delta[k + 1];
        out[k] = base + acc;
    }
    out
}

/// Grid search for the bandwidth and threshold minimising the objective.
/// Ties go to the smallest bandwidth, then the smallest threshold.
pub fn cross_validate(panel: &PanelData, grid: &TuningGrid, target: CvTarget) -> Result<CvResult> {
    let fit = pooled_ols(panel)?;
    let scores = score_series(panel, &fit)?;
    cross_validate_scores(&scores, grid, target)
}

pub fn cross_validate_scores(scores: &ScoreSeries, grid: &TuningGrid, target: CvTarget) -> Result<CvResult> {
    let blocks = partition_blocks(scores.n_periods())?;
    let max_lag = *grid.bandwidths.last().expect("grid is non-empty");
    let moments = block_moments(scores, &blocks, max_lag)?;
    let mut surface = Vec::with_capacity(grid.bandwidths.len() * grid.thresholds.len());
    let mut best: Option<(usize, f64, f64)> = None;
    for &bandwidth in &grid.bandwidths {
        let mats = moments
            .iter()
            .map(|m| m.longrun(KernelSpec::bartlett(bandwidth)))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<&DMatrix<f64>> = mats.iter().map(|m| target.matrix(m)).collect();
        let curve = objective_curve(&views, &grid.thresholds);
        for (&threshold, &score) in grid.thresholds.iter().zip(&curve) {
            if best.map_or(true, |(_, _, s)| score < s) {
                best = Some((bandwidth, threshold, score));
            }
            surface.push(CvPoint {
                bandwidth,
                threshold,
                score,
            });
        }
    }
    let (best_bandwidth, best_threshold, _) = best.expect("grid is non-empty");
    Ok(CvResult {
        best_bandwidth,
        best_threshold,
        surface,
    })
}
