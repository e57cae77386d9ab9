//! Entrywise-thresholded long-run variance of β̂ without a cluster structure.
//!
//! Each pair `(i, j)` contributes its `p x p` Newey-West matrix
//!
//! ```text
//! V̂ᵢⱼ = (1/T) Σₜ Wᵢₜ Wⱼₜ′ + (1/T) Σ_{h=1..L} ω(h, L) Σ_{t>h} (Wᵢₜ Wⱼ,ₜ₋ₕ′ + Wᵢ,ₜ₋ₕ Wⱼₜ′)
//! ```
//!
//! entry by entry when it clears `λᵢⱼᵃᵇ = c sqrt(V̂ᵢᵢᵃᵃ V̂ⱼⱼᵇᵇ) sqrt(ln N / T)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::{check_alpha, LinearRestriction, TestResult};
use crate::longrun::{pair_matrix, KernelSpec, LagMoments, LagNormalization};
use crate::normal::{normal_quantile, two_sided_p_value};
use crate::panel::PanelData;
use crate::regression::{pooled_ols, score_series, OlsFit, ScoreSeries};

pub const DEFAULT_BCL_CONSTANT: f64 = 2.0;

/// Which entries survive the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BclSelection {
    /// `V̂ᵢⱼᵃᵇ ≥ λᵢⱼᵃᵇ`.
    #[default]
    Signed,
    /// `|V̂ᵢⱼᵃᵇ| ≥ λᵢⱼᵃᵇ`.
    Magnitude,
}

impl std::str::FromStr for BclSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(Self::Signed),
            "magnitude" | "abs" => Ok(Self::Magnitude),
            other => Err(Error::InvalidConfig(format!("unknown BCL selection `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BclThreshold {
    /// Multiplier `c`; `0` keeps every entry, `∞` keeps only the diagonal pairs.
    pub constant: f64,
    pub selection: BclSelection,
}

impl Default for BclThreshold {
    fn default() -> Self {
        Self {
            constant: DEFAULT_BCL_CONSTANT,
            selection: BclSelection::default(),
        }
    }
}

impl BclThreshold {
    pub fn new(constant: f64, selection: BclSelection) -> Result<Self> {
        if constant.is_nan() || constant < 0.0 {
            return Err(Error::InvalidConfig(format!("BCL constant {constant} must be non-negative")));
        }
        Ok(Self { constant, selection })
    }

    pub fn describe(&self) -> String {
        let cmp = match self.selection {
            BclSelection::Signed => "V",
            BclSelection::Magnitude => "|V|",
        };
        format!("{cmp} >= {} * sqrt(V_ii,aa * V_jj,bb) * sqrt(ln N / T)", self.constant)
    }

    fn keeps(&self, v: f64, level: f64) -> bool {
        if self.constant.is_infinite() {
            return false;
        }
        match self.selection {
            BclSelection::Signed => v >= level,
            BclSelection::Magnitude => v.abs() >= level,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BclEstimate {
    pub v_hat: DMatrix<f64>,
    /// Pairs `(i, j)`, ordered, with at least one surviving entry.
    pub kept_pairs: usize,
    pub threshold_rule: String,
}

/// `V̂ᵢⱼ` for one pair.
pub fn bcl_pair(scores: &ScoreSeries, i: usize, j: usize, kernel: KernelSpec) -> Result<DMatrix<f64>> {
    pair_matrix(scores, i, j, kernel, LagNormalization::Full)
}

pub fn bcl_variance(panel: &PanelData, fit: &OlsFit, kernel: KernelSpec, rule: &BclThreshold) -> Result<BclEstimate> {
    let scores = score_series(panel, fit)?;
    bcl_from_scores(&scores, kernel, rule)
}

pub fn bcl_from_scores(scores: &ScoreSeries, kernel: KernelSpec, rule: &BclThreshold) -> Result<BclEstimate> {
    let (n, t, p) = (scores.n_units(), scores.n_periods(), scores.n_covariates());
    kernel.check(t)?;
    let parts = LagMoments::new(scores, kernel.bandwidth)?.component_matrices(kernel, LagNormalization::Full)?;
    let rate = if n > 1 { ((n as f64).ln() / t as f64).sqrt() } else { 0.0 };
    let mut v_hat = DMatrix::zeros(p, p);
    let mut kept_pairs = 0;
    for i in 0..n {
        for j in 0..n {
            let mut any = false;
            for a in 0..p {
                for b in 0..p {
                    let v = parts[a * p + b][(i, j)];
                    let keep = i == j || {
                        let scale = (parts[a * p + a][(i, i)] * parts[b * p + b][(j, j)]).max(0.0).sqrt();
                        rule.keeps(v, rule.constant * scale * rate)
                    };
                    if keep {
                        v_hat[(a, b)] += v;
                        any = true;
                    }
                }
            }
            if any {
                kept_pairs += 1;
            }
        }
    }
    v_hat /= n as f64;
    v_hat = (&v_hat + v_hat.transpose()) * 0.5;
    Ok(BclEstimate {
        v_hat,
        kept_pairs,
        threshold_rule: rule.describe(),
    })
}

pub fn bcl_test(
    panel: &PanelData,
    restriction: &LinearRestriction,
    alpha: f64,
    kernel: KernelSpec,
    rule: &BclThreshold,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    restriction.check_dim(panel.n_covariates())?;
    let fit = pooled_ols(panel)?;
    let est = bcl_variance(panel, &fit, kernel, rule)?;
    let q_inv = fit.gram.clone().try_inverse().ok_or(Error::RankDeficient {
        min_sv: fit.min_singular_value,
        max_sv: f64::NAN,
    })?;
    let cov = &q_inv * &est.v_hat * &q_inv / fit.n_obs as f64;
    let r = DVector::from_column_slice(&restriction.r);
    let var = (r.transpose() * cov * &r)[(0, 0)];
    let d = restriction.deviation(&fit.beta_hat);
    let statistic = if d == 0.0 {
        0.0
    } else {
        if !(var > 0.0) {
            return Err(Error::NonPositiveVariance(var));
        }
        d / var.sqrt()
    };
    let critical = normal_quantile(1.0 - alpha / 2.0)?;
    Ok(TestResult {
        method: "bcl".to_string(),
        statistic,
        phi: if statistic.abs() > critical { 1.0 } else { 0.0 },
        p_value: two_sided_p_value(statistic),
        alpha,
        q_hat: 0,
        critical_index: None,
        orbit_size: None,
    })
}
