//! Shared test types and the registry of interchangeable inference methods.
//!
//! Every test of `H₀: r′β = λ` implements [`InferenceMethod`]; the CLI and the
//! Monte Carlo harness look methods up by name in a [`MethodRegistry`].

use std::fmt;

use crate::art::{art_test, ArtOptions};
use crate::bcl::{bcl_test, BclThreshold};
use crate::cce::{cce_t_test, CceVariant};
use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::longrun::KernelSpec;
use crate::panel::PanelData;

/// `H₀: r′β = λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRestriction {
    pub r: Vec<f64>,
    pub lambda: f64,
}

impl LinearRestriction {
    pub fn new(r: Vec<f64>, lambda: f64) -> Result<Self> {
        if r.is_empty() || r.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidRestriction("r must be a non-zero vector".into()));
        }
        if r.iter().any(|v| !v.is_finite()) || !lambda.is_finite() {
            return Err(Error::InvalidRestriction("r and lambda must be finite".into()));
        }
        Ok(Self { r, lambda })
    }

    /// Parses a comma-separated `r`.
    pub fn parse(r: &str, lambda: f64) -> Result<Self> {
        let r = r
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidRestriction(format!("`{v}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(r, lambda)
    }

    pub fn check_dim(&self, p: usize) -> Result<()> {
        if self.r.len() != p {
            return Err(Error::InvalidRestriction(format!(
                "r has {} entries but the model has {p} coefficients",
                self.r.len()
            )));
        }
        Ok(())
    }

    /// `r′β − λ`.
    pub fn deviation(&self, beta: &[f64]) -> f64 {
        self.r.iter().zip(beta).map(|(r, b)| r * b).sum::<f64>() - self.lambda
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub method: String,
    pub statistic: f64,
    /// Rejection probability.
    pub phi: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub q_hat: usize,
    /// Rank `k` of the randomization critical value.
    pub critical_index: Option<usize>,
    /// Number of group elements (`M` or `B`) in the reference distribution.
    pub orbit_size: Option<usize>,
}

impl TestResult {
    /// Rejects when `u < phi`, for a uniform draw `u` in `[0, 1)`.
    pub fn rejects_with(&self, u: f64) -> bool {
        u < self.phi
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("method".to_string(), self.method.clone()),
            ("statistic".to_string(), format!("{}", self.statistic)),
            ("p_value".to_string(), format!("{}", self.p_value)),
            ("phi".to_string(), format!("{}", self.phi)),
            ("alpha".to_string(), format!("{}", self.alpha)),
            ("q_hat".to_string(), self.q_hat.to_string()),
        ];
        if let Some(k) = self.critical_index {
            out.push(("critical_index".to_string(), k.to_string()));
        }
        if let Some(m) = self.orbit_size {
            out.push(("orbit_size".to_string(), m.to_string()));
        }
        out
    }
}

impl fmt::Display for TestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_key_values() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// Inputs shared by every method.
#[derive(Debug, Clone, Copy)]
pub struct InferenceContext<'a> {
    pub panel: &'a PanelData,
    pub clusters: &'a ClusterAssignment,
    pub restriction: &'a LinearRestriction,
    pub alpha: f64,
    /// Kernel for methods that estimate long-run covariances directly.
    pub kernel: KernelSpec,
    /// Seed for methods that sample.
    pub seed: u64,
}

pub trait InferenceMethod: Send + Sync {
    fn name(&self) -> &str;

    /// Whether the method consumes the cluster assignment.
    fn uses_clusters(&self) -> bool {
        true
    }

    fn run(&self, ctx: &InferenceContext<'_>) -> Result<TestResult>;
}

pub struct ArtMethod(pub ArtOptions);

impl InferenceMethod for ArtMethod {
    fn name(&self) -> &str {
        "art"
    }

    fn run(&self, ctx: &InferenceContext<'_>) -> Result<TestResult> {
        let mut opts = self.0.clone();
        opts.seed = ctx.seed;
        art_test(ctx.panel, ctx.clusters, ctx.restriction, ctx.alpha, &opts)
    }
}

pub struct CceMethod(pub CceVariant);

impl InferenceMethod for CceMethod {
    fn name(&self) -> &str {
        "cce"
    }

    fn run(&self, ctx: &InferenceContext<'_>) -> Result<TestResult> {
        cce_t_test(ctx.panel, ctx.clusters, ctx.restriction, ctx.alpha, self.0)
    }
}

pub struct BclMethod(pub BclThreshold);

impl InferenceMethod for BclMethod {
    fn name(&self) -> &str {
        "bcl"
    }

    fn uses_clusters(&self) -> bool {
        false
    }

    fn run(&self, ctx: &InferenceContext<'_>) -> Result<TestResult> {
        bcl_test(ctx.panel, ctx.restriction, ctx.alpha, ctx.kernel, &self.0)
    }
}

/// Options for the built-in methods.
#[derive(Debug, Clone, Default)]
pub struct MethodOptions {
    pub art: ArtOptions,
    pub cce: CceVariant,
    pub bcl: BclThreshold,
}

/// Name-indexed collection of inference methods.
#[derive(Default)]
pub struct MethodRegistry {
    methods: Vec<Box<dyn InferenceMethod>>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `art`, `cce` and `bcl` with default options.
    pub fn with_defaults() -> Self {
        Self::configured(&MethodOptions::default())
    }

    pub fn configured(opts: &MethodOptions) -> Self {
        let mut reg = Self::new();
        reg.register(Box::new(ArtMethod(opts.art.clone())));
        reg.register(Box::new(CceMethod(opts.cce)));
        reg.register(Box::new(BclMethod(opts.bcl.clone())));
        reg
    }

    /// Adds a method, replacing any existing one with the same name.
    pub fn register(&mut self, method: Box<dyn InferenceMethod>) {
        self.methods.retain(|m| m.name() != method.name());
        self.methods.push(method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn InferenceMethod> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.methods.iter().map(|m| m.name()).collect()
    }
}

impl fmt::Debug for MethodRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MethodRegistry").field("methods", &self.names()).finish()
    }
}
