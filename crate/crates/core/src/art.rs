//! Approximate randomization test over cluster-by-cluster estimates.
//!
//! Each cluster contributes one coordinate `s_j = c_j (r′β̂_j − λ)`; the
//! reference distribution is the statistic recomputed under every sign
//! change of those coordinates (or a random subset of them).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::inference::{check_alpha, LinearRestriction, TestResult};
use crate::panel::PanelData;
use crate::regression::{cluster_ols, ClusterFit};

/// Largest cluster count for which all `2^q` sign changes are enumerated.
pub const MAX_FULL_ORBIT_CLUSTERS: usize = 20;
/// Draws used when the full orbit is too large.
pub const DEFAULT_ORBIT_DRAWS: usize = 9999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scaling {
    /// `c_j = 1`.
    Unscaled,
    /// `c_j = sqrt(n_j)`, `n_j` the cluster's unit count.
    #[default]
    SqrtN,
}

/// Functional form of the statistic computed from the coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatisticForm {
    /// `sqrt(q) |Σ s_j| / Σ (s_j − c_j m)²`, with `m` the mean of `s_j / c_j`.
    #[default]
    Literal,
    /// `sqrt(q) |s̄| / sd(s)` with the `q − 1` variance divisor.
    StandardT,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatisticVector {
    pub s: Vec<f64>,
    /// Per-cluster multipliers `c_j`.
    pub scale: Vec<f64>,
    pub scaling: Scaling,
}

impl StatisticVector {
    pub fn unscaled(s: Vec<f64>) -> Self {
        let scale = vec![1.0; s.len()];
        Self {
            s,
            scale,
            scaling: Scaling::Unscaled,
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

pub fn statistic_vector(
    fits: &[ClusterFit],
    restriction: &LinearRestriction,
    scaling: Scaling,
) -> Result<StatisticVector> {
    let mut s = Vec::with_capacity(fits.len());
    let mut scale = Vec::with_capacity(fits.len());
    for f in fits {
        restriction.check_dim(f.fit.beta_hat.len())?;
        let c = match scaling {
            Scaling::Unscaled => 1.0,
            Scaling::SqrtN => (f.n_units() as f64).sqrt(),
        };
        s.push(c * restriction.deviation(&f.fit.beta_hat));
        scale.push(c);
    }
    Ok(StatisticVector { s, scale, scaling })
}

fn statistic_of(values: &[f64], scale: &[f64], form: StatisticForm) -> f64 {
    let q = values.len() as f64;
    match form {
        StatisticForm::Literal => {
            let total: f64 = values.iter().sum();
            let centre = values.iter().zip(scale).map(|(v, c)| v / c).sum::<f64>() / q;
            let spread: f64 = values
                .iter()
                .zip(scale)
                .map(|(v, c)| {
                    let d = v - c * centre;
                    d * d
                })
                .sum();
            degenerate_ratio(q.sqrt() * total.abs(), spread)
        }
        StatisticForm::StandardT => {
            let mean = values.iter().sum::<f64>() / q;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (q - 1.0);
            degenerate_ratio(q.sqrt() * mean.abs(), var.sqrt())
        }
    }
}

/// `num / den`, with `x / 0 = ∞` for `x > 0` and `0 / 0 = 0`.
fn degenerate_ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub fn r_statistic(s: &StatisticVector) -> f64 {
    r_statistic_with(s, StatisticForm::Literal)
}

pub fn r_statistic_with(s: &StatisticVector, form: StatisticForm) -> f64 {
    statistic_of(&s.s, &s.scale, form)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrbitMode {
    /// All `2^q` sign changes.
    Full,
    /// The identity plus `draws − 1` independent uniform sign changes.
    Sampled { draws: usize, seed: u64 },
}

/// Statistic under every group element of the chosen orbit, sorted ascending.
pub fn orbit_statistics(s: &StatisticVector, mode: OrbitMode, form: StatisticForm) -> Result<Vec<f64>> {
    let q = s.len();
    let mut buf = vec![0.0; q];
    let mut out = match mode {
        OrbitMode::Full => {
            if q > MAX_FULL_ORBIT_CLUSTERS {
                return Err(Error::OrbitTooLarge(q));
            }
            (0u64..1 << q)
                .map(|mask| {
                    for (j, v) in buf.iter_mut().enumerate() {
                        *v = if mask >> j & 1 == 1 { -s.s[j] } else { s.s[j] };
                    }
                    statistic_of(&buf, &s.scale, form)
                })
                .collect::<Vec<_>>()
        }
        OrbitMode::Sampled { draws, seed } => {
            if draws < 2 {
                return Err(Error::InvalidConfig(format!("orbit needs at least 2 draws, got {draws}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(draws);
            out.push(statistic_of(&s.s, &s.scale, form));
            for _ in 1..draws {
                let mut bits = 0u64;
                for (j, v) in buf.iter_mut().enumerate() {
                    if j % 64 == 0 {
                        bits = rng.gen();
                    }
                    *v = if bits >> (j % 64) & 1 == 1 { -s.s[j] } else { s.s[j] };
                }
                out.push(statistic_of(&buf, &s.scale, form));
            }
            out
        }
    };
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Counts behind the randomization decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArtDecision {
    /// `k = ⌈(1 − α) M⌉`, 1-based.
    pub k: usize,
    pub critical_value: f64,
    /// Orbit values strictly above the critical value.
    pub m_plus: usize,
    /// Orbit values equal to the critical value.
    pub m_zero: usize,
    /// `(Mα − M⁺) / M⁰`.
    pub a: f64,
    pub phi: f64,
    pub phi_deterministic: f64,
    pub p_value: f64,
    pub orbit_size: usize,
}

/// `⌈x⌉`, treating values within rounding error of an integer as that integer.
fn robust_ceil(x: f64) -> usize {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

pub fn art_decision(observed: f64, orbit: &[f64], alpha: f64) -> Result<ArtDecision> {
    check_alpha(alpha)?;
    if orbit.is_empty() {
        return Err(Error::InvalidConfig("empty orbit".into()));
    }
    let m = orbit.len();
    let k = robust_ceil((1.0 - alpha) * m as f64).clamp(1, m);
    let critical_value = orbit[k - 1];
    let m_plus = orbit.iter().filter(|r| **r > critical_value).count();
    let m_zero = orbit.iter().filter(|r| **r == critical_value).count();
    let a = (m as f64 * alpha - m_plus as f64) / m_zero as f64;
    let (phi, phi_deterministic) = if observed > critical_value {
        (1.0, 1.0)
    } else if observed == critical_value {
        (a, 0.0)
    } else {
        (0.0, 0.0)
    };
    let p_value = orbit.iter().filter(|r| **r >= observed).count() as f64 / m as f64;
    Ok(ArtDecision {
        k,
        critical_value,
        m_plus,
        m_zero,
        a,
        phi,
        phi_deterministic,
        p_value,
        orbit_size: m,
    })
}

/// How the orbit is formed by [`art_test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrbitChoice {
    /// Full enumeration up to the cluster cap, sampled beyond it.
    #[default]
    Auto,
    Sampled(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtOptions {
    pub scaling: Scaling,
    pub form: StatisticForm,
    pub orbit: OrbitChoice,
    /// Reject only when the statistic exceeds the critical value.
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for ArtOptions {
    fn default() -> Self {
        Self {
            scaling: Scaling::SqrtN,
            form: StatisticForm::Literal,
            orbit: OrbitChoice::Auto,
            deterministic: false,
            seed: 0,
        }
    }
}

/// Tests `r′β = λ` from cluster-by-cluster fits.
pub fn art_test(
    panel: &PanelData,
    clusters: &ClusterAssignment,
    restriction: &LinearRestriction,
    alpha: f64,
    opts: &ArtOptions,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    restriction.check_dim(panel.n_covariates())?;
    if clusters.q_hat() < 2 {
        return Err(Error::SingleCluster);
    }
    let fits = cluster_ols(panel, clusters)?;
    let s = statistic_vector(&fits, restriction, opts.scaling)?;
    let mode = match opts.orbit {
        OrbitChoice::Auto if s.len() <= MAX_FULL_ORBIT_CLUSTERS => OrbitMode::Full,
        OrbitChoice::Auto => OrbitMode::Sampled {
            draws: DEFAULT_ORBIT_DRAWS,
            seed: opts.seed,
        },
        OrbitChoice::Sampled(draws) => OrbitMode::Sampled { draws, seed: opts.seed },
    };
    let orbit = orbit_statistics(&s, mode, opts.form)?;
    let observed = r_statistic_with(&s, opts.form);
    let d = art_decision(observed, &orbit, alpha)?;
    Ok(TestResult {
        method: if opts.deterministic { "art-deterministic" } else { "art" }.to_string(),
        statistic: observed,
        phi: if opts.deterministic { d.phi_deterministic } else { d.phi },
        p_value: d.p_value,
        alpha,
        q_hat: clusters.q_hat(),
        critical_index: Some(d.k),
        orbit_size: Some(d.orbit_size),
    })
}
