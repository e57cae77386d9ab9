//! Clustered covariance estimator and the associated t-test.

use nalgebra::{DMatrix, DVector};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::inference::{check_alpha, LinearRestriction, TestResult};
use crate::normal::{normal_quantile, two_sided_p_value};
use crate::panel::PanelData;
use crate::regression::{pooled_ols, OlsFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CceVariant {
    /// `T = sqrt(q) d / sqrt(r′ M r)` with `M = (1/q) Σ v_j v_j′`.
    MeatOnly,
    /// `T = d / sqrt(r′ A⁻¹ (Σ v_j v_j′) A⁻¹ r)` with `A = Σ X′X`.
    #[default]
    Sandwich,
}

impl std::str::FromStr for CceVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meat" | "meat-only" | "meat_only" => Ok(Self::MeatOnly),
            "sandwich" => Ok(Self::Sandwich),
            other => Err(Error::InvalidConfig(format!("unknown CCE variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CceEstimate {
    pub meat: DMatrix<f64>,
    pub sandwich: DMatrix<f64>,
    pub variant: CceVariant,
    pub q_hat: usize,
}

impl CceEstimate {
    /// `r′ V r` for the matrix the variant's statistic uses.
    pub fn quadratic_form(&self, r: &[f64]) -> f64 {
        let r = DVector::from_column_slice(r);
        let m = match self.variant {
            CceVariant::MeatOnly => &self.meat,
            CceVariant::Sandwich => &self.sandwich,
        };
        (r.transpose() * m * &r)[(0, 0)]
    }
}

/// Per-cluster score sums `v_j = Σ_{i∈j} Σ_t x_it û_it`, in label order.
pub fn cluster_score_sums(panel: &PanelData, fit: &OlsFit, clusters: &ClusterAssignment) -> Result<Vec<DVector<f64>>> {
    if clusters.len() != panel.n_units() {
        return Err(Error::LengthMismatch {
            left: clusters.len(),
            right: panel.n_units(),
        });
    }
    let (t_len, p) = (panel.n_periods(), panel.n_covariates());
    let mut sums = vec![DVector::zeros(p); clusters.q_hat()];
    for (i, label) in clusters.labels().iter().enumerate() {
        let v = &mut sums[label - 1];
        for t in 0..t_len {
            let u = fit.residuals[i * t_len + t];
            for (a, x) in panel.x_row(i, t).iter().enumerate() {
                v[a] += x * u;
            }
        }
    }
    Ok(sums)
}

pub fn clustered_covariance(
    panel: &PanelData,
    fit: &OlsFit,
    clusters: &ClusterAssignment,
    variant: CceVariant,
) -> Result<CceEstimate> {
    let p = panel.n_covariates();
    let q = clusters.q_hat();
    let mut outer = DMatrix::zeros(p, p);
    for v in cluster_score_sums(panel, fit, clusters)? {
        outer += &v * v.transpose();
    }
    let bread = &fit.gram * fit.n_obs as f64;
    let bread_inv = bread.clone().try_inverse().ok_or(Error::RankDeficient {
        min_sv: fit.min_singular_value,
        max_sv: f64::NAN,
    })?;
    let mut sandwich = &bread_inv * &outer * &bread_inv;
    sandwich = (&sandwich + sandwich.transpose()) * 0.5;
    Ok(CceEstimate {
        meat: outer / q as f64,
        sandwich,
        variant,
        q_hat: q,
    })
}

pub fn cce_t_test(
    panel: &PanelData,
    clusters: &ClusterAssignment,
    restriction: &LinearRestriction,
    alpha: f64,
    variant: CceVariant,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    restriction.check_dim(panel.n_covariates())?;
    if clusters.q_hat() < 2 {
        return Err(Error::SingleCluster);
    }
    let fit = pooled_ols(panel)?;
    let est = clustered_covariance(panel, &fit, clusters, variant)?;
    let d = restriction.deviation(&fit.beta_hat);
    let var = est.quadratic_form(&restriction.r);
    let statistic = if d == 0.0 {
        0.0
    } else {
        if !(var > 0.0) {
            return Err(Error::NonPositiveVariance(var));
        }
        match variant {
            CceVariant::MeatOnly => (est.q_hat as f64).sqrt() * d / var.sqrt(),
            CceVariant::Sandwich => d / var.sqrt(),
        }
    };
    let critical = normal_quantile(1.0 - alpha / 2.0)?;
    Ok(TestResult {
        method: match variant {
            CceVariant::MeatOnly => "cce-meat",
            CceVariant::Sandwich => "cce",
        }
        .to_string(),
        statistic,
        phi: if statistic.abs() > critical { 1.0 } else { 0.0 },
        p_value: two_sided_p_value(statistic),
        alpha,
        q_hat: clusters.q_hat(),
        critical_index: None,
        orbit_size: None,
    })
}
