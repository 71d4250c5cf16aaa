//! Residual diagnostics: per-state autocorrelation with significance bands,
//! pairwise cross-correlation against distance, and the spread of
//! state-by-state unemployment effects.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::PanelDataset;
use crate::design::ModelSpec;
use crate::error::{Error, Result};
use crate::estim::{fit_single_state, FitResult};
use crate::series::{great_circle_km, pearson, sample_autocorr, LatLon, Series};

/// Lag-1 and lag-2 residual autocorrelation of one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateAcf {
    pub state: String,
    pub lag1: f64,
    pub lag2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcfReport {
    pub per_state: Vec<StateAcf>,
    /// Series length used for the bands.
    pub n: usize,
    /// `2 / sqrt(n - 1)`.
    pub band_lag1: f64,
    /// `2 / sqrt(n - 2)`.
    pub band_lag2: f64,
    pub pct_within_lag1: f64,
    pub pct_within_lag2: f64,
    pub pct_above_lag1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCorrelation {
    pub state_a: String,
    pub state_b: String,
    pub distance_km: f64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XcorrReport {
    pub pairs: Vec<PairCorrelation>,
    pub n: usize,
    /// `2 / sqrt(n)`.
    pub band: f64,
    pub pct_within_band: f64,
}

/// Residual series per state, all of one common length and year range.
fn state_residuals(fit: &FitResult, scaled: bool) -> Result<Vec<(String, Vec<f64>)>> {
    let by_state = fit.residuals_by_state(scaled);
    let mut len = None;
    let mut out = Vec::with_capacity(by_state.len());
    for (state, series) in by_state {
        let values: Vec<f64> = series.into_iter().map(|(_, e)| e).collect();
        match len {
            None => len = Some(values.len()),
            Some(l) if l != values.len() => {
                return Err(Error::Unbalanced(format!(
                    "state {state} has {} residuals, expected {l}",
                    values.len()
                )))
            }
            _ => {}
        }
        out.push((state, values));
    }
    Ok(out)
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// Lag-1 and lag-2 autocorrelations of each state's residual series.
/// Residuals are on the natural scale unless `scaled` asks for
/// sqrt(weight)-scaled ones.
pub fn residual_acf_report(fit: &FitResult, scaled: bool) -> Result<AcfReport> {
    let states = state_residuals(fit, scaled)?;
    let n = states.first().map_or(0, |s| s.1.len());
    if n < 3 {
        return Err(Error::TooShort { needed: 3, got: n });
    }
    let per_state = states
        .into_iter()
        .map(|(state, values)| {
            let s = Series::from_values(values)?;
            let acf = |lag| {
                sample_autocorr(&s, lag).map_err(|e| match e {
                    Error::ZeroVariance => {
                        Error::InvalidInput(format!("residuals of state {state} have zero variance"))
                    }
                    other => other,
                })
            };
            Ok(StateAcf { lag1: acf(1)?, lag2: acf(2)?, state: state.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let band_lag1 = 2.0 / ((n - 1) as f64).sqrt();
    let band_lag2 = 2.0 / ((n - 2) as f64).sqrt();
    let total = per_state.len();
    let within1 = per_state.iter().filter(|s| s.lag1.abs() <= band_lag1).count();
    let within2 = per_state.iter().filter(|s| s.lag2.abs() <= band_lag2).count();
    let above1 = per_state.iter().filter(|s| s.lag1 > band_lag1).count();
    Ok(AcfReport {
        per_state,
        n,
        band_lag1,
        band_lag2,
        pct_within_lag1: percent(within1, total),
        pct_within_lag2: percent(within2, total),
        pct_above_lag1: percent(above1, total),
    })
}

/// Correlation of residuals for every unordered pair of states, with the
/// great-circle distance between their centroids.
pub fn residual_xcorr_report(
    fit: &FitResult,
    centroids: &BTreeMap<String, LatLon>,
    scaled: bool,
) -> Result<XcorrReport> {
    let states = state_residuals(fit, scaled)?;
    if states.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "cross-correlation needs at least 2 states, got {}",
            states.len()
        )));
    }
    let locations = states
        .iter()
        .map(|(s, _)| {
            centroids
                .get(s)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("no centroid for state {s}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = states[0].1.len();
    let index_pairs: Vec<(usize, usize)> =
        (0..states.len()).flat_map(|a| (a + 1..states.len()).map(move |b| (a, b))).collect();
    let pairs = index_pairs
        .par_iter()
        .map(|&(a, b)| {
            let correlation = pearson(&states[a].1, &states[b].1).map_err(|e| match e {
                Error::ZeroVariance => Error::InvalidInput(format!(
                    "residuals of {} or {} have zero variance",
                    states[a].0, states[b].0
                )),
                other => other,
            })?;
            Ok(PairCorrelation {
                state_a: states[a].0.clone(),
                state_b: states[b].0.clone(),
                distance_km: great_circle_km(locations[a], locations[b])?,
                correlation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let band = 2.0 / (n as f64).sqrt();
    let within = pairs.iter().filter(|p| p.correlation.abs() <= band).count();
    Ok(XcorrReport { pct_within_band: percent(within, pairs.len()), pairs, n, band })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateEffect {
    pub state: String,
    pub mean_population: f64,
    pub effect_100beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectDispersion {
    pub effects: Vec<StateEffect>,
    pub mean: f64,
    /// Sample standard deviation across states (`n - 1` divisor).
    pub sd: f64,
}

/// Fits `spec` separately to each state and summarises the spread of the
/// resulting unemployment effects.
pub fn state_effect_dispersion(data: &PanelDataset, spec: &ModelSpec) -> Result<EffectDispersion> {
    let effects = (0..data.n_states())
        .into_par_iter()
        .map(|s| {
            Ok(StateEffect {
                state: data.states()[s].code.clone(),
                mean_population: data.mean_population(s),
                effect_100beta: fit_single_state(data, spec, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = effects.len() as f64;
    let mean = effects.iter().map(|e| e.effect_100beta).sum::<f64>() / m;
    let sd = if effects.len() > 1 {
        (effects.iter().map(|e| (e.effect_100beta - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    Ok(EffectDispersion { effects, mean, sd })
}

/// Weighted mean residual for each year. Zero (up to rounding) whenever the
/// model includes year effects.
pub fn weighted_residual_means_by_year(fit: &FitResult) -> BTreeMap<i32, f64> {
    let mut acc: BTreeMap<i32, (f64, f64)> = BTreeMap::new();
    for ((row, e), w) in fit.rows.iter().zip(&fit.residuals).zip(&fit.weights) {
        let a = acc.entry(row.year).or_default();
        a.0 += w * e;
        a.1 += w;
    }
    acc.into_iter().map(|(y, (s, w))| (y, s / w)).collect()
}
