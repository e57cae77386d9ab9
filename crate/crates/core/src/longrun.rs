//! Kernel-weighted long-run cross-covariances of unit score series.
//!
//! For units `i, j` and covariates `a, b` the estimate is
//!
//! ```text
//! σ̂ᵢⱼᵃᵇ = (1/T) Σₜ Wᵢₜᵃ Wⱼₜᵇ
//!        + Σ_{h=1..L} ω(h, L) / (T − h) · Σ_{t>h} (Wᵢₜᵃ Wⱼ,ₜ₋ₕᵇ + Wᵢ,ₜ₋ₕᵃ Wⱼₜᵇ)
//! ```
//!
//! and the pair magnitude is `σ̂ᵢⱼ = Σₐ Σ_b |σ̂ᵢⱼᵃᵇ|`. The full matrix is built
//! from lagged cross-moment matrices `Cₕ = W[:, h..] · W[:, ..T−h]ᵀ`, one
//! matrix product per lag and covariate pair, rather than pair by pair.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::format_float;
use crate::regression::ScoreSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Bartlett,
}

impl KernelKind {
    pub fn weight(self, lag: usize, bandwidth: usize) -> f64 {
        match self {
            KernelKind::Bartlett => bartlett_weight(lag, bandwidth),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: usize,
}

impl KernelSpec {
    pub fn bartlett(bandwidth: usize) -> Self {
        Self {
            kind: KernelKind::Bartlett,
            bandwidth,
        }
    }

    pub fn check(&self, periods: usize) -> Result<()> {
        if self.bandwidth >= periods {
            return Err(Error::BandwidthTooLarge {
                bandwidth: self.bandwidth,
                periods,
            });
        }
        Ok(())
    }
}

/// Triangular lag weight `(L − h) / L` for `h ≤ L`, zero beyond.
pub fn bartlett_weight(lag: usize, bandwidth: usize) -> f64 {
    if bandwidth == 0 {
        return if lag == 0 { 1.0 } else { 0.0 };
    }
    if lag <= bandwidth {
        (bandwidth - lag) as f64 / bandwidth as f64
    } else {
        0.0
    }
}

/// How lag sums are normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagNormalization {
    /// Divide the lag-`h` sum by `T − h`.
    PerLag,
    /// Divide every lag sum by `T`.
    Full,
}

impl LagNormalization {
    fn divisor(self, periods: usize, lag: usize) -> f64 {
        match self {
            LagNormalization::PerLag => (periods - lag) as f64,
            LagNormalization::Full => periods as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairLongRun {
    /// `p x p` matrix of σ̂ᵢⱼᵃᵇ.
    pub sigma_ab: DMatrix<f64>,
    /// Σ |σ̂ᵢⱼᵃᵇ|.
    pub sigma_ij: f64,
}

/// Long-run cross-covariance of one pair of units.
pub fn pair_longrun(scores: &ScoreSeries, i: usize, j: usize, kernel: KernelSpec) -> Result<PairLongRun> {
    let sigma_ab = pair_matrix(scores, i, j, kernel, LagNormalization::PerLag)?;
    let sigma_ij = sigma_ab.iter().map(|v| v.abs()).sum();
    Ok(PairLongRun { sigma_ab, sigma_ij })
}

/// `p x p` kernel-weighted cross-covariance of units `i` and `j` under the
/// given lag normalisation.
pub fn pair_matrix(
    scores: &ScoreSeries,
    i: usize,
    j: usize,
    kernel: KernelSpec,
    norm: LagNormalization,
) -> Result<DMatrix<f64>> {
    let (n, t, p) = (scores.n_units(), scores.n_periods(), scores.n_covariates());
    kernel.check(t)?;
    if i >= n || j >= n {
        return Err(Error::ShapeMismatch(format!("unit index ({i}, {j}) outside 0..{n}")));
    }
    let w = scores.as_flat();
    let row_i = &w[i * t * p..(i + 1) * t * p];
    let row_j = &w[j * t * p..(j + 1) * t * p];
    let mut out = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            let lag0: f64 = (0..t).map(|s| row_i[s * p + a] * row_j[s * p + b]).sum();
            let mut total = lag0 / t as f64;
            for h in 1..=kernel.bandwidth {
                let weight = kernel.kind.weight(h, kernel.bandwidth);
                if weight == 0.0 {
                    continue;
                }
                let mut lead = 0.0;
                let mut lagged = 0.0;
                for s in h..t {
                    lead += row_i[s * p + a] * row_j[(s - h) * p + b];
                    lagged += row_i[(s - h) * p + a] * row_j[s * p + b];
                }
                total += weight / norm.divisor(t, h) * (lead + lagged);
            }
            out[(a, b)] = total;
        }
    }
    Ok(out)
}

/// Lagged cross-moment matrices `Cₕᵃᵇ[i, j] = Σ_{t≥h} Wᵢₜᵃ Wⱼ,ₜ₋ₕᵇ` for
/// `h = 0..=max_lag`. Any bandwidth up to `max_lag` can then be assembled
/// without touching the score series again.
#[derive(Debug, Clone)]
pub struct LagMoments {
    n_units: usize,
    n_periods: usize,
    n_covariates: usize,
    max_lag: usize,
    /// Indexed `[h][a * p + b]`.
    moments: Vec<Vec<DMatrix<f64>>>,
}

impl LagMoments {
    pub fn new(scores: &ScoreSeries, max_lag: usize) -> Result<Self> {
        let (n, t, p) = (scores.n_units(), scores.n_periods(), scores.n_covariates());
        if max_lag >= t {
            return Err(Error::BandwidthTooLarge {
                bandwidth: max_lag,
                periods: t,
            });
        }
        let components: Vec<DMatrix<f64>> = (0..p).map(|a| scores.component_matrix(a)).collect();
        let moments = (0..=max_lag)
            .map(|h| {
                let len = t - h;
                let mut per_pair = Vec::with_capacity(p * p);
                for a in 0..p {
                    let lead = components[a].columns(h, len);
                    for b in 0..p {
                        let lagged = components[b].columns(0, len);
                        per_pair.push(lead * lagged.transpose());
                    }
                }
                per_pair
            })
            .collect();
        Ok(Self {
            n_units: n,
            n_periods: t,
            n_covariates: p,
            max_lag,
            moments,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// `N x N` matrices `S[a * p + b][(i, j)] = σ̂ᵢⱼᵃᵇ` at the given kernel.
    pub fn component_matrices(&self, kernel: KernelSpec, norm: LagNormalization) -> Result<Vec<DMatrix<f64>>> {
        if kernel.bandwidth > self.max_lag {
            return Err(Error::BandwidthTooLarge {
                bandwidth: kernel.bandwidth,
                periods: self.max_lag + 1,
            });
        }
        let (t, p) = (self.n_periods, self.n_covariates);
        let mut out = Vec::with_capacity(p * p);
        for a in 0..p {
            for b in 0..p {
                let mut s = &self.moments[0][a * p + b] / t as f64;
                for h in 1..=kernel.bandwidth {
                    let weight = kernel.kind.weight(h, kernel.bandwidth);
                    if weight == 0.0 {
                        continue;
                    }
                    let scale = weight / norm.divisor(t, h);
                    let forward = &self.moments[h][a * p + b];
                    let backward = &self.moments[h][b * p + a];
                    for j in 0..self.n_units {
                        for i in 0..self.n_units {
                            s[(i, j)] += scale * (forward[(i, j)] + backward[(j, i)]);
                        }
                    }
                }
                out.push(s);
            }
        }
        Ok(out)
    }

    /// Long-run magnitude and correlation matrices at bandwidth `kernel.bandwidth`.
    pub fn longrun(&self, kernel: KernelSpec) -> Result<LongRunMatrix> {
        let parts = self.component_matrices(kernel, LagNormalization::PerLag)?;
        let n = self.n_units;
        let mut sigma = DMatrix::zeros(n, n);
        let mut signed = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let (mut mag, mut sum) = (0.0, 0.0);
                for s in &parts {
                    let v = s[(i, j)];
                    mag += v.abs();
                    sum += v;
                }
                sigma[(i, j)] = mag;
                sigma[(j, i)] = mag;
                signed[(i, j)] = sum;
                signed[(j, i)] = sum;
            }
        }
        LongRunMatrix::from_sigma(sigma, signed, kernel.bandwidth)
    }
}

/// Pairwise long-run magnitudes `σ̂ᵢⱼ` and their correlation normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRunMatrix {
    pub sigma: DMatrix<f64>,
    /// `σ̂ᵢⱼ / sqrt(σ̂ᵢᵢ σ̂ⱼⱼ)`.
    pub corr: DMatrix<f64>,
    /// `Σₐ Σ_b σ̂ᵢⱼᵃᵇ / sqrt(σ̂ᵢᵢ σ̂ⱼⱼ)`, the same normalisation without
    /// absolute values.
    pub signed_corr: DMatrix<f64>,
    pub bandwidth: usize,
}

impl LongRunMatrix {
    fn from_sigma(sigma: DMatrix<f64>, signed: DMatrix<f64>, bandwidth: usize) -> Result<Self> {
        let n = sigma.nrows();
        let diag: Vec<f64> = (0..n).map(|i| sigma[(i, i)]).collect();
        if let Some(i) = diag.iter().position(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::DegenerateDiagonal(i));
        }
        let scale: Vec<f64> = diag.iter().map(|d| d.sqrt()).collect();
        let mut corr = DMatrix::zeros(n, n);
        let mut signed_corr = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                if i == j {
                    corr[(i, j)] = 1.0;
                    signed_corr[(i, j)] = signed[(i, j)] / diag[i];
                } else {
                    let denom = scale[i] * scale[j];
                    corr[(i, j)] = sigma[(i, j)] / denom;
                    signed_corr[(i, j)] = signed[(i, j)] / denom;
                }
            }
        }
        Ok(Self {
            sigma,
            corr,
            signed_corr,
            bandwidth,
        })
    }

    pub fn n_units(&self) -> usize {
        self.sigma.nrows()
    }

    /// Writes the correlation matrix row by row, comma separated, with
    /// seventeen significant digits.
    pub fn write_corr<W: Write>(&self, mut w: W) -> Result<()> {
        write_matrix(&mut w, &self.corr)
    }

    pub fn write_sigma<W: Write>(&self, mut w: W) -> Result<()> {
        write_matrix(&mut w, &self.sigma)
    }
}

fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_float(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a matrix written by [`LongRunMatrix::write_corr`].
pub fn read_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::SchemaMismatch(format!("bad matrix entry `{v}`")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch("matrix is not square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Long-run matrix over all unit pairs.
pub fn longrun_matrix(scores: &ScoreSeries, kernel: KernelSpec) -> Result<LongRunMatrix> {
    kernel.check(scores.n_periods())?;
    LagMoments::new(scores, kernel.bandwidth)?.longrun(kernel)
}
