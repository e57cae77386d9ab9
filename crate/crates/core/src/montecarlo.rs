//! Simulation harness: an AR(1) cluster design, replicated recovery and
//! size/power experiments, and table output.
//!
//! Replication `r` draws from its own ChaCha stream (`master_seed`, stream
//! `r`), so results do not depend on how replications are spread over
//! worker threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::art::ArtOptions;
use crate::bcl::BclThreshold;
use crate::cce::CceVariant;
use crate::clustering::{discover_clusters, purity, ClusterAssignment, ThresholdConfig};
use crate::error::{Error, Result};
use crate::inference::{check_alpha, InferenceContext, LinearRestriction, MethodOptions, MethodRegistry};
use crate::longrun::KernelSpec;
use crate::panel::PanelData;
use crate::tuning::{cross_validate, CvTarget, TuningGrid};

/// `Y_it = β + V_{g(i)t}/2 + U_it/2` with AR(1) `U` (coefficient `rho`) and
/// cluster-level AR(1) `V` (coefficient `phi`), intercept-only design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpConfig {
    pub q: usize,
    pub n_units: usize,
    pub n_periods: usize,
    pub rho: f64,
    pub phi: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            q: 5,
            n_units: 50,
            n_periods: 100,
            rho: 0.2,
            phi: 0.2,
            beta: 1.0,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.n_units == 0 || self.n_units % self.q != 0 {
            return Err(Error::InvalidConfig(format!(
                "N = {} must be a positive multiple of q = {}",
                self.n_units, self.q
            )));
        }
        if self.n_periods < 2 {
            return Err(Error::InvalidConfig(format!("T = {} must be at least 2", self.n_periods)));
        }
        for (name, v) in [("rho", self.rho), ("phi", self.phi)] {
            if !(v.abs() < 1.0) {
                return Err(Error::InvalidConfig(format!("|{name}| = {v} must be below 1")));
            }
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidConfig("beta must be finite".into()));
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<ClusterAssignment> {
        ClusterAssignment::contiguous_blocks(self.n_units, self.n_units / self.q)
    }
}

/// Generator for replication `r` of an experiment seeded with `master`.
pub fn replication_rng(master: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r);
    rng
}

fn ar1_path<R: Rng>(rng: &mut R, coef: f64, len: usize, out: &mut [f64]) {
    let mut prev: f64 = rng.sample::<f64, _>(StandardNormal) / (1.0 - coef * coef).sqrt();
    out[0] = prev;
    for v in out.iter_mut().take(len).skip(1) {
        prev = coef * prev + rng.sample::<f64, _>(StandardNormal);
        *v = prev;
    }
}

pub fn generate(config: &DgpConfig) -> Result<(PanelData, ClusterAssignment)> {
    generate_with(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

/// Draws cluster paths first, then unit paths in unit order.
pub fn generate_with<R: Rng>(config: &DgpConfig, rng: &mut R) -> Result<(PanelData, ClusterAssignment)> {
    config.validate()?;
    let (n, t, q) = (config.n_units, config.n_periods, config.q);
    let truth = config.truth()?;
    let mut common = vec![0.0; q * t];
    for g in 0..q {
        ar1_path(rng, config.phi, t, &mut common[g * t..(g + 1) * t]);
    }
    let mut y = vec![0.0; n * t];
    let mut idio = vec![0.0; t];
    for (i, label) in truth.labels().iter().enumerate() {
        ar1_path(rng, config.rho, t, &mut idio);
        let v = &common[(label - 1) * t..label * t];
        for s in 0..t {
            y[i * t + s] = config.beta + 0.5 * v[s] + 0.5 * idio[s];
        }
    }
    let ids = (0..n).map(|i| format!("{}", i + 1)).collect();
    let panel = PanelData::from_flat(n, t, 1, y, vec![1.0; n * t], ids)?;
    Ok((panel, truth))
}

/// Test arms of a size/power experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentMethod {
    ArtOracle,
    ArtDiscovered,
    CceOracle,
    CceDiscovered,
    Bcl,
}

impl ExperimentMethod {
    pub const ALL: [ExperimentMethod; 5] = [
        ExperimentMethod::ArtOracle,
        ExperimentMethod::ArtDiscovered,
        ExperimentMethod::CceOracle,
        ExperimentMethod::CceDiscovered,
        ExperimentMethod::Bcl,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExperimentMethod::ArtOracle => "art_oracle",
            ExperimentMethod::ArtDiscovered => "art_discovered",
            ExperimentMethod::CceOracle => "cce_oracle",
            ExperimentMethod::CceDiscovered => "cce_discovered",
            ExperimentMethod::Bcl => "bcl",
        }
    }

    /// Name in the method registry.
    pub fn registry_name(self) -> &'static str {
        match self {
            ExperimentMethod::ArtOracle | ExperimentMethod::ArtDiscovered => "art",
            ExperimentMethod::CceOracle | ExperimentMethod::CceDiscovered => "cce",
            ExperimentMethod::Bcl => "bcl",
        }
    }

    pub fn uses_discovered(self) -> bool {
        matches!(self, ExperimentMethod::ArtDiscovered | ExperimentMethod::CceDiscovered)
    }

    /// Parses a comma-separated list. `art` and `cce` expand to both arms.
    pub fn parse_list(s: &str) -> Result<Vec<ExperimentMethod>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let arms: Vec<ExperimentMethod> = match part {
                "art" => vec![ExperimentMethod::ArtOracle, ExperimentMethod::ArtDiscovered],
                "cce" => vec![ExperimentMethod::CceOracle, ExperimentMethod::CceDiscovered],
                other => vec![other.parse()?],
            };
            for a in arms {
                if !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        Ok(out)
    }
}

impl FromStr for ExperimentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentMethod::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

impl fmt::Display for ExperimentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TuningMode {
    /// Block cross-validation on every replication.
    Cv(CvTarget),
    Fixed { bandwidth: usize, eta_tilde: f64 },
}

impl fmt::Display for TuningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TuningMode::Cv(CvTarget::SignedCorrelation) => f.write_str("cv"),
            TuningMode::Cv(CvTarget::Correlation) => f.write_str("cv-abs"),
            TuningMode::Fixed { bandwidth, eta_tilde } => write!(f, "fixed(L={bandwidth};eta={eta_tilde})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    pub replications: usize,
    pub alpha: f64,
    pub beta_null: f64,
    pub methods: Vec<ExperimentMethod>,
    pub tuning: TuningMode,
    pub options: MethodOptions,
    pub workers: usize,
}

impl ExperimentConfig {
    /// Deterministic ART, sandwich CCE, CV tuning, one worker.
    pub fn new(dgp: DgpConfig, replications: usize) -> Self {
        let options = MethodOptions {
            art: ArtOptions {
                deterministic: true,
                ..ArtOptions::default()
            },
            cce: CceVariant::Sandwich,
            bcl: BclThreshold::default(),
        };
        Self {
            dgp,
            replications,
            alpha: 0.1,
            beta_null: dgp.beta,
            methods: Vec::new(),
            tuning: TuningMode::Cv(CvTarget::default()),
            options,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        check_alpha(self.alpha)?;
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if let TuningMode::Fixed { bandwidth, eta_tilde } = self.tuning {
            ThresholdConfig::new(eta_tilde)?;
            KernelSpec::bartlett(bandwidth).check(self.dgp.n_periods)?;
        }
        if !self.beta_null.is_finite() {
            return Err(Error::InvalidConfig("beta_null must be finite".into()));
        }
        Ok(())
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub bandwidth: usize,
    pub eta_tilde: f64,
    pub q_hat: usize,
    pub min_purity: f64,
    pub avg_purity: f64,
    /// Per method, in config order; `None` when the test could not be run.
    pub rejections: Vec<Option<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub mc_se: f64,
}

impl Estimate {
    fn from_values(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = if n > 1.0 {
            values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            mc_se: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRate {
    pub method: ExperimentMethod,
    pub rate: f64,
    /// `sqrt(p (1 − p) / reps)`.
    pub mc_se: f64,
    /// Replications in which the test was undefined; counted as non-rejections.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub config: ExperimentConfig,
    pub min_purity: Estimate,
    pub avg_purity: Estimate,
    pub q_hat: Estimate,
    pub bandwidth: Estimate,
    pub eta_tilde: Estimate,
    pub rates: Vec<MethodRate>,
}

impl PartialEq for ExperimentConfig {
    fn eq(&self, other: &Self) -> bool {
        self.dgp == other.dgp
            && self.replications == other.replications
            && self.alpha == other.alpha
            && self.beta_null == other.beta_null
            && self.methods == other.methods
            && self.tuning == other.tuning
    }
}

impl SimulationSummary {
    pub fn rate(&self, method: ExperimentMethod) -> Option<&MethodRate> {
        self.rates.iter().find(|r| r.method == method)
    }
}

fn resolve_tuning(panel: &PanelData, tuning: TuningMode) -> Result<(usize, f64)> {
    match tuning {
        TuningMode::Fixed { bandwidth, eta_tilde } => Ok((bandwidth, eta_tilde)),
        TuningMode::Cv(target) => {
            let grid = TuningGrid::default_for(panel.n_periods())?;
            let cv = cross_validate(panel, &grid, target)?;
            Ok((cv.best_bandwidth, cv.best_threshold))
        }
    }
}

/// Runs replication `r`.
pub fn run_replication(config: &ExperimentConfig, registry: &MethodRegistry, r: u64) -> Result<ReplicationOutcome> {
    let mut rng = replication_rng(config.dgp.seed, r);
    let (panel, truth) = generate_with(&config.dgp, &mut rng)?;
    let (bandwidth, eta_tilde) = resolve_tuning(&panel, config.tuning)?;
    let kernel = KernelSpec::bartlett(bandwidth);
    let (found, _) = discover_clusters(&panel, kernel, &ThresholdConfig::new(eta_tilde)?)?;
    let pur = purity(&found, &truth)?;
    let restriction = LinearRestriction::new(vec![1.0], config.beta_null)?;
    let mut rejections = Vec::with_capacity(config.methods.len());
    for &m in &config.methods {
        let ctx = InferenceContext {
            panel: &panel,
            clusters: if m.uses_discovered() { &found } else { &truth },
            restriction: &restriction,
            alpha: config.alpha,
            kernel,
            seed: rng.gen(),
        };
        let u: f64 = rng.gen();
        let outcome = registry.get(m.registry_name())?.run(&ctx);
        rejections.push(match outcome {
            Ok(res) => Some(res.rejects_with(u)),
            Err(e) => {
                log::debug!("replication {r}, {m}: {e}");
                None
            }
        });
    }
    Ok(ReplicationOutcome {
        bandwidth,
        eta_tilde,
        q_hat: found.q_hat(),
        min_purity: pur.min,
        avg_purity: pur.avg,
        rejections,
    })
}

/// All replications, in replication order.
pub fn run_replications(config: &ExperimentConfig) -> Result<Vec<ReplicationOutcome>> {
    config.validate()?;
    let registry = MethodRegistry::configured(&config.options);
    for m in &config.methods {
        registry.get(m.registry_name())?;
    }
    log::info!(
        "experiment q={} n={} t={} rho={} phi={} beta={} beta0={} alpha={} reps={} tuning={} methods={:?} seed={} workers={}",
        config.dgp.q,
        config.dgp.n_units,
        config.dgp.n_periods,
        config.dgp.rho,
        config.dgp.phi,
        config.dgp.beta,
        config.beta_null,
        config.alpha,
        config.replications,
        config.tuning,
        config.methods.iter().map(|m| m.label()).collect::<Vec<_>>(),
        config.dgp.seed,
        config.workers,
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..config.replications as u64)
            .into_par_iter()
            .map(|r| run_replication(config, &registry, r))
            .collect()
    })
}

pub fn summarize(config: &ExperimentConfig, outcomes: &[ReplicationOutcome]) -> SimulationSummary {
    let reps = outcomes.len() as f64;
    let rates = config
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let hits = outcomes.iter().filter(|o| o.rejections[k] == Some(true)).count();
            let failures = outcomes.iter().filter(|o| o.rejections[k].is_none()).count();
            let rate = hits as f64 / reps;
            MethodRate {
                method,
                rate,
                mc_se: (rate * (1.0 - rate) / reps).sqrt(),
                failures,
            }
        })
        .collect();
    SimulationSummary {
        config: config.clone(),
        min_purity: Estimate::from_values(outcomes.iter().map(|o| o.min_purity)),
        avg_purity: Estimate::from_values(outcomes.iter().map(|o| o.avg_purity)),
        q_hat: Estimate::from_values(outcomes.iter().map(|o| o.q_hat as f64)),
        bandwidth: Estimate::from_values(outcomes.iter().map(|o| o.bandwidth as f64)),
        eta_tilde: Estimate::from_values(outcomes.iter().map(|o| o.eta_tilde)),
        rates,
    }
}

/// Cluster recovery only; ignores `config.methods`.
pub fn run_recovery(config: &ExperimentConfig) -> Result<SimulationSummary> {
    let mut cfg = config.clone();
    cfg.methods.clear();
    let outcomes = run_replications(&cfg)?;
    Ok(summarize(&cfg, &outcomes))
}

/// Rejection rates of every configured method, plus recovery statistics.
pub fn run_size_power(config: &ExperimentConfig) -> Result<SimulationSummary> {
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let outcomes = run_replications(config)?;
    Ok(summarize(config, &outcomes))
}

const TABLE_HEADER: &str = "q,n,t,reps,alpha,beta0,tuning,seed,quantity,estimate,mc_se,failures";

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per recovery statistic and per method.
pub fn write_table<W: Write>(summaries: &[SimulationSummary], mut w: W) -> Result<()> {
    writeln!(w, "{TABLE_HEADER}")?;
    for s in summaries {
        let c = &s.config;
        let prefix = format!(
            "{},{},{},{},{},{},{},{}",
            c.dgp.q, c.dgp.n_units, c.dgp.n_periods, c.replications, c.alpha, c.beta_null, c.tuning, c.dgp.seed
        );
        for (name, e) in [("min_purity", s.min_purity), ("avg_purity", s.avg_purity), ("q_hat", s.q_hat)] {
            writeln!(w, "{prefix},{name},{},{},0", fmt6(e.mean), fmt6(e.mc_se))?;
        }
        for (name, e) in [("bandwidth", s.bandwidth), ("eta_tilde", s.eta_tilde)] {
            writeln!(w, "{prefix},{name},{},{},0", fmt6(e.mean), fmt6(e.mc_se))?;
        }
        for r in &s.rates {
            writeln!(w, "{prefix},{},{},{},{}", r.method, fmt6(r.rate), fmt6(r.mc_se), r.failures)?;
        }
    }
    Ok(())
}
