//! Synthetic panels with known ground truth and a Monte Carlo harness that
//! measures bias, standard-error calibration and test size of a model spec.
//!
//! Every replicate draws from its own ChaCha8 stream keyed by
//! `(seed, replicate)`, so results do not depend on thread scheduling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{state_centroids, PanelDataset, PanelParts, SeriesKey};
use crate::design::{ModelSpec, NATIONAL_UNEMPLOYMENT, STATE_UNEMPLOYMENT};
use crate::diag::{residual_acf_report, residual_xcorr_report};
use crate::error::{Error, Result};
use crate::estim::fit_model;

/// Name of the random generator, recorded in every summary.
pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.9), stream = replicate index";

/// Stream reserved for draws shared by all replicates (default populations).
const SHARED_STREAM: u64 = u64::MAX;

/// Log mortality rate of an average state-year (about 900 per 100,000).
const BASE_LOG_RATE: f64 = -4.71;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorProcess {
    Iid { sigma: f64 },
    Ar1 { rho: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrendProcess {
    None,
    /// Per-state slopes drawn with this standard deviation.
    Linear { slope_sd: f64 },
    /// Integrated random walk: each year's slope moves by N(0, scale^2).
    Smooth { scale: f64 },
}

/// State unemployment: a state mean plus a common national cycle and a
/// state-specific deviation, both stationary AR(1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnemploymentProcess {
    pub rho: f64,
    pub sigma: f64,
    #[serde(default = "default_national_sigma")]
    pub national_sigma: f64,
}

fn default_national_sigma() -> f64 {
    1.0
}

impl Default for UnemploymentProcess {
    fn default() -> Self {
        Self { rho: 0.7, sigma: 1.0, national_sigma: 1.0 }
    }
}

fn default_start_year() -> i32 {
    1976
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_states: usize,
    pub n_years: usize,
    #[serde(default = "default_start_year")]
    pub start_year: i32,
    /// Effect of one unit of unemployment on log mortality.
    pub true_beta_u: f64,
    pub error_process: ErrorProcess,
    pub trend_process: TrendProcess,
    #[serde(default)]
    pub year_effect_sd: f64,
    #[serde(default)]
    pub unemployment_process: UnemploymentProcess,
    /// Per-state populations; drawn once from the seed when absent.
    #[serde(default)]
    pub population: Option<Vec<f64>>,
    pub seed: u64,
}

impl SimConfig {
    pub fn iid(n_states: usize, n_years: usize, true_beta_u: f64, sigma: f64, seed: u64) -> Self {
        Self {
            n_states,
            n_years,
            start_year: default_start_year(),
            true_beta_u,
            error_process: ErrorProcess::Iid { sigma },
            trend_process: TrendProcess::None,
            year_effect_sd: 0.0,
            unemployment_process: UnemploymentProcess::default(),
            population: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        let max_states = state_centroids().len();
        if self.n_states == 0 || self.n_states > max_states {
            return bad(format!("n_states must be in 1..={max_states}, got {}", self.n_states));
        }
        if self.n_years < 5 {
            return bad(format!("n_years must be at least 5, got {}", self.n_years));
        }
        if !self.true_beta_u.is_finite() {
            return bad("true_beta_u must be finite".into());
        }
        let (rho, sigma) = match self.error_process {
            ErrorProcess::Iid { sigma } => (0.0, sigma),
            ErrorProcess::Ar1 { rho, sigma } => (rho, sigma),
        };
        if !(rho.abs() < 1.0) || !(sigma >= 0.0 && sigma.is_finite()) {
            return bad(format!("error process needs |rho| < 1 and sigma >= 0, got rho={rho}, sigma={sigma}"));
        }
        let trend_ok = match self.trend_process {
            TrendProcess::None => true,
            TrendProcess::Linear { slope_sd: s } | TrendProcess::Smooth { scale: s } => s >= 0.0 && s.is_finite(),
        };
        if !trend_ok {
            return bad("trend scale must be finite and non-negative".into());
        }
        if !(self.year_effect_sd >= 0.0 && self.year_effect_sd.is_finite()) {
            return bad("year_effect_sd must be finite and non-negative".into());
        }
        let u = self.unemployment_process;
        if !(u.rho.abs() < 1.0) || !(u.sigma >= 0.0) || !(u.national_sigma >= 0.0) {
            return bad("unemployment process needs |rho| < 1 and non-negative sigmas".into());
        }
        if let Some(p) = &self.population {
            if p.len() != self.n_states {
                return bad(format!("population has {} entries for {} states", p.len(), self.n_states));
            }
            if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad("populations must be positive".into());
            }
        }
        Ok(())
    }

    fn populations(&self) -> Vec<f64> {
        self.population.clone().unwrap_or_else(|| {
            let mut rng = stream(self.seed, SHARED_STREAM);
            (0..self.n_states).map(|_| rng.random_range(500_000f64.ln()..30_000_000f64.ln()).exp()).collect()
        })
    }
}

/// The components used to build a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub beta_u: f64,
    pub state_effects: Vec<f64>,
    pub year_effects: Vec<f64>,
    /// State-major, one value per state-year.
    pub trends: Vec<f64>,
    /// State-major, one value per state-year, after population scaling.
    pub errors: Vec<f64>,
    pub population: Vec<f64>,
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Stationary AR(1) path with innovation sd `sigma`.
fn ar1(rng: &mut ChaCha8Rng, n: usize, rho: f64, sigma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut x = sigma / (1.0 - rho * rho).sqrt() * normal(rng);
    for _ in 0..n {
        out.push(x);
        x = rho * x + sigma * normal(rng);
    }
    out
}

/// Panel for replicate 0 of `cfg`.
pub fn generate_panel(cfg: &SimConfig) -> Result<(PanelDataset, GroundTruth)> {
    cfg.validate()?;
    generate_replicate(cfg, &cfg.populations(), 0)
}

/// log m = beta*u + year + state + trend + error, with errors scaled by
/// sqrt(mean population / population) so population weights are efficient.
fn generate_replicate(cfg: &SimConfig, population: &[f64], replicate: u64) -> Result<(PanelDataset, GroundTruth)> {
    let mut rng = stream(cfg.seed, replicate);
    let (s_n, t_n) = (cfg.n_states, cfg.n_years);
    let cells = s_n * t_n;
    let mean_pop = population.iter().sum::<f64>() / s_n as f64;
    let up = cfg.unemployment_process;

    let year_effects: Vec<f64> = (0..t_n).map(|_| cfg.year_effect_sd * normal(&mut rng)).collect();
    let national_cycle = ar1(&mut rng, t_n, up.rho, up.national_sigma);
    let center = (t_n as f64 - 1.0) / 2.0;

    let mut state_effects = Vec::with_capacity(s_n);
    let mut trends = Vec::with_capacity(cells);
    let mut errors = Vec::with_capacity(cells);
    let mut unemployment = Vec::with_capacity(cells);
    let mut under5 = Vec::with_capacity(cells);
    let mut over65 = Vec::with_capacity(cells);
    let mut log_rate = Vec::with_capacity(cells);
    let age_noise = Normal::new(0.0, 0.002).expect("valid sd");

    for s in 0..s_n {
        state_effects.push(0.1 * normal(&mut rng));
        let mean_u: f64 = rng.random_range(4.0..8.0);
        let own_cycle = ar1(&mut rng, t_n, up.rho, up.sigma);
        let base5: f64 = rng.random_range(0.06..0.08);
        let base65: f64 = rng.random_range(0.10..0.16);

        let trend: Vec<f64> = match cfg.trend_process {
            TrendProcess::None => vec![0.0; t_n],
            TrendProcess::Linear { slope_sd } => {
                let slope = slope_sd * normal(&mut rng);
                (0..t_n).map(|t| slope * (t as f64 - center)).collect()
            }
            TrendProcess::Smooth { scale } => {
                let mut slope = scale * normal(&mut rng);
                let mut level = 0.0;
                let mut path = Vec::with_capacity(t_n);
                for _ in 0..t_n {
                    path.push(level);
                    slope += scale * normal(&mut rng);
                    level += slope;
                }
                let m = path.iter().sum::<f64>() / t_n as f64;
                path.into_iter().map(|v| v - m).collect()
            }
        };
        let raw_errors = match cfg.error_process {
            ErrorProcess::Iid { sigma } => (0..t_n).map(|_| sigma * normal(&mut rng)).collect(),
            ErrorProcess::Ar1 { rho, sigma } => ar1(&mut rng, t_n, rho, sigma * (1.0 - rho * rho).sqrt()),
        };
        let scale = (mean_pop / population[s]).sqrt();
        for t in 0..t_n {
            let u = (mean_u + national_cycle[t] + own_cycle[t]).max(0.1);
            let e = scale * raw_errors[t];
            unemployment.push(u);
            trends.push(trend[t]);
            errors.push(e);
            under5.push((base5 + age_noise.sample(&mut rng)).clamp(0.01, 0.2));
            over65.push((base65 + age_noise.sample(&mut rng)).clamp(0.01, 0.4));
            log_rate.push(BASE_LOG_RATE + cfg.true_beta_u * u + year_effects[t] + state_effects[s] + trend[t] + e);
        }
    }

    let national_unemployment = (0..t_n)
        .map(|t| (0..s_n).map(|s| population[s] * unemployment[s * t_n + t]).sum::<f64>() / (mean_pop * s_n as f64))
        .collect();
    let state_codes: Vec<String> = state_centroids().keys().take(s_n).cloned().collect();
    let data = PanelDataset::from_parts(PanelParts {
        state_codes,
        first_year: cfg.start_year,
        n_years: t_n,
        mortality: BTreeMap::from([(SeriesKey::Total, log_rate.iter().map(|v| v.exp()).collect())]),
        state_unemployment: unemployment,
        national_unemployment,
        population: population.iter().flat_map(|&p| std::iter::repeat_n(p, t_n)).collect(),
        prop_under5: under5,
        prop_over65: over65,
    })?;
    let truth = GroundTruth {
        beta_u: cfg.true_beta_u,
        state_effects,
        year_effects,
        trends,
        errors,
        population: population.to_vec(),
    };
    Ok((data, truth))
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub estimate: f64,
    pub se_ols: f64,
    pub se_clustered: Option<f64>,
    pub dof_ols: usize,
    pub dof_clustered: Option<usize>,
    /// Mean lag-1 residual autocorrelation across states.
    pub mean_acf_lag1: Option<f64>,
    pub pct_acf_lag1_within: Option<f64>,
    pub pct_xcorr_within: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub spec: ModelSpec,
    pub term: String,
    pub n_reps: usize,
    pub true_beta_u: f64,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    pub sd_of_estimates: f64,
    pub mean_se_ols: f64,
    pub mean_se_clustered: Option<f64>,
    /// Share of 95% t intervals containing the true coefficient.
    pub coverage_ols: f64,
    pub coverage_clustered: Option<f64>,
    /// Share of replicates rejecting a zero coefficient at the 5% level.
    /// This is the test size when the true coefficient is zero.
    pub rejection_rate_at_5pct_ols: f64,
    pub rejection_rate_at_5pct_clustered: Option<f64>,
    pub mean_acf_lag1: Option<f64>,
    pub mean_pct_acf_lag1_within: Option<f64>,
    pub mean_pct_xcorr_within: Option<f64>,
    pub generator: String,
    pub seed: u64,
}

fn t_crit(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64).map_or(f64::NAN, |d| d.inverse_cdf(0.975))
}

/// Generates and fits one replicate.
pub fn run_replicate(cfg: &SimConfig, spec: &ModelSpec, replicate: u64) -> Result<ReplicateResult> {
    cfg.validate()?;
    replicate_with(cfg, &cfg.populations(), spec, replicate)
}

fn replicate_with(cfg: &SimConfig, population: &[f64], spec: &ModelSpec, replicate: u64) -> Result<ReplicateResult> {
    let (data, _) = generate_replicate(cfg, population, replicate)?;
    let m = fit_model(&data, spec)?;
    let term = effect_term(spec);
    let fit = &m.fit;
    let acf = residual_acf_report(fit, false).ok();
    let xcorr = if data.n_states() > 1 {
        residual_xcorr_report(fit, state_centroids(), false).ok()
    } else {
        None
    };
    Ok(ReplicateResult {
        estimate: fit.coefficient(term).expect("spec includes its unemployment term"),
        se_ols: fit.se_ols(term).expect("term present"),
        se_clustered: fit.se_clustered(term),
        dof_ols: fit.dof_ols,
        dof_clustered: fit.dof_clustered,
        mean_acf_lag1: acf
            .as_ref()
            .map(|a| a.per_state.iter().map(|s| s.lag1).sum::<f64>() / a.per_state.len() as f64),
        pct_acf_lag1_within: acf.map(|a| a.pct_within_lag1),
        pct_xcorr_within: xcorr.map(|x| x.pct_within_band),
    })
}

fn effect_term(spec: &ModelSpec) -> &'static str {
    if spec.subtype.has_state_unemployment() {
        STATE_UNEMPLOYMENT
    } else {
        NATIONAL_UNEMPLOYMENT
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Mean of optional values, `None` if any is missing.
fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    v.collect::<Option<Vec<f64>>>().map(|xs| mean(xs.into_iter()))
}

/// Fits `spec` on `n_reps` independent replicates of `cfg` and summarises.
pub fn run_monte_carlo(cfg: &SimConfig, spec: &ModelSpec, n_reps: usize) -> Result<McSummary> {
    cfg.validate()?;
    spec.validate()?;
    if n_reps < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 replicates, got {n_reps}")));
    }
    let population = cfg.populations();
    let reps = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            replicate_with(cfg, &population, spec, r)
                .map_err(|e| Error::Replicate { index: r as usize, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(cfg, spec, &reps))
}

pub fn summarize(cfg: &SimConfig, spec: &ModelSpec, reps: &[ReplicateResult]) -> McSummary {
    let n = reps.len() as f64;
    let truth = cfg.true_beta_u;
    let mean_estimate = mean(reps.iter().map(|r| r.estimate));
    let sd = (reps.iter().map(|r| (r.estimate - mean_estimate).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let share = |f: &dyn Fn(&ReplicateResult) -> bool| reps.iter().filter(|r| f(r)).count() as f64 / n;
    let covers = |r: &ReplicateResult, se: f64, dof: usize| (r.estimate - truth).abs() <= t_crit(dof) * se;
    let rejects = |r: &ReplicateResult, se: f64, dof: usize| r.estimate.abs() > t_crit(dof) * se;
    let clustered = reps.iter().all(|r| r.se_clustered.is_some() && r.dof_clustered.is_some());
    let cl = |r: &ReplicateResult| (r.se_clustered.unwrap_or(f64::NAN), r.dof_clustered.unwrap_or(0));
    McSummary {
        spec: *spec,
        term: effect_term(spec).to_owned(),
        n_reps: reps.len(),
        true_beta_u: truth,
        mean_estimate,
        mean_bias: mean_estimate - truth,
        sd_of_estimates: sd,
        mean_se_ols: mean(reps.iter().map(|r| r.se_ols)),
        mean_se_clustered: clustered.then(|| mean(reps.iter().map(|r| cl(r).0))),
        coverage_ols: share(&|r| covers(r, r.se_ols, r.dof_ols)),
        coverage_clustered: clustered.then(|| share(&|r| covers(r, cl(r).0, cl(r).1))),
        rejection_rate_at_5pct_ols: share(&|r| rejects(r, r.se_ols, r.dof_ols)),
        rejection_rate_at_5pct_clustered: clustered.then(|| share(&|r| rejects(r, cl(r).0, cl(r).1))),
        mean_acf_lag1: mean_opt(reps.iter().map(|r| r.mean_acf_lag1)),
        mean_pct_acf_lag1_within: mean_opt(reps.iter().map(|r| r.pct_acf_lag1_within)),
        mean_pct_xcorr_within: mean_opt(reps.iter().map(|r| r.pct_xcorr_within)),
        generator: GENERATOR.to_owned(),
        seed: cfg.seed,
    }
}
