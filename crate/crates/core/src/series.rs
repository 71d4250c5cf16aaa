//! Univariate annual series and the transforms applied to them before
//! regression: HP detrending, first differences and linear detrending, plus
//! the correlation statistics used by the residual diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothing parameter used for the HP model type unless overridden.
pub const DEFAULT_HP_LAMBDA: f64 = 100.0;

/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// An annual series starting at `start_year`. Always non-empty and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    values: Vec<f64>,
    start_year: i32,
}

impl Series {
    pub fn new(values: Vec<f64>, start_year: i32) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values, start_year })
    }

    /// Convenience constructor for series whose calendar position is irrelevant.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn start_year(&self) -> i32 {
        self.start_year
    }

    pub fn end_year(&self) -> i32 {
        self.start_year + self.values.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Trend/cycle split produced by [`hp_filter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpDecomposition {
    pub trend: Series,
    pub residual: Series,
    pub lambda: f64,
}

/// Hodrick–Prescott filter.
///
/// The trend minimises `sum (x_t - tau_t)^2 + lambda * sum (tau_{t+1} - 2 tau_t + tau_{t-1})^2`,
/// i.e. it solves `(I + lambda K'K) tau = x` with `K` the second-difference
/// operator. The system is symmetric positive definite and pentadiagonal and
/// is solved in O(n) by a banded LDL' factorisation. Series of length one or
/// two have an empty penalty, so the trend is the series itself.
pub fn hp_filter(x: &Series, lambda: f64) -> Result<HpDecomposition> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "HP smoothing parameter must be positive and finite, got {lambda}"
        )));
    }
    let n = x.len();
    // Solving for the cycle, (I + lambda K'K) c = lambda K'K x, rather than
    // for the trend keeps the residual of constant and linear inputs exactly
    // zero: their second differences vanish before any division happens.
    let residual = if n <= 2 {
        vec![0.0; n]
    } else {
        let (diag, off1, off2) = hp_bands(n, lambda);
        let mut rhs = vec![0.0; n];
        for t in 0..n - 2 {
            let d2 = lambda * (x.values[t] - 2.0 * x.values[t + 1] + x.values[t + 2]);
            rhs[t] += d2;
            rhs[t + 1] -= 2.0 * d2;
            rhs[t + 2] += d2;
        }
        solve_sym_pentadiagonal(&diag, &off1, &off2, &rhs)?
    };
    let trend: Vec<f64> = x.values.iter().zip(&residual).map(|(a, c)| a - c).collect();
    Ok(HpDecomposition {
        trend: Series::new(trend, x.start_year)?,
        residual: Series::new(residual, x.start_year)?,
        lambda,
    })
}

/// Bands of `I + lambda K'K`: main diagonal, first and second super-diagonals.
fn hp_bands(n: usize, lambda: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    const STENCIL: [f64; 3] = [1.0, -2.0, 1.0];
    let mut diag = vec![1.0; n];
    let mut off1 = vec![0.0; n - 1];
    let mut off2 = vec![0.0; n - 2];
    for row in 0..n - 2 {
        for a in 0..3 {
            for b in a..3 {
                let v = lambda * STENCIL[a] * STENCIL[b];
                match b - a {
                    0 => diag[row + a] += v,
                    1 => off1[row + a] += v,
                    _ => off2[row + a] += v,
                }
            }
        }
    }
    (diag, off1, off2)
}

/// Solves `A x = b` for symmetric positive definite pentadiagonal `A` given by
/// its main diagonal and two super-diagonals, via `A = L D L'`.
pub(crate) fn solve_sym_pentadiagonal(
    diag: &[f64],
    off1: &[f64],
    off2: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    debug_assert!(n >= 3 && off1.len() == n - 1 && off2.len() == n - 2 && rhs.len() == n);
    let mut d = vec![0.0; n];
    let mut l1 = vec![0.0; n - 1];
    let mut l2 = vec![0.0; n - 2];
    for i in 0..n {
        let mut di = diag[i];
        if i >= 1 {
            di -= l1[i - 1] * l1[i - 1] * d[i - 1];
        }
        if i >= 2 {
            di -= l2[i - 2] * l2[i - 2] * d[i - 2];
        }
        if !(di > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        d[i] = di;
        if i + 1 < n {
            let mut e = off1[i];
            if i >= 1 {
                e -= l2[i - 1] * d[i - 1] * l1[i - 1];
            }
            l1[i] = e / di;
        }
        if i + 2 < n {
            l2[i] = off2[i] / di;
        }
    }

    let mut z = rhs.to_vec();
    for i in 1..n {
        z[i] -= l1[i - 1] * z[i - 1];
        if i >= 2 {
            z[i] -= l2[i - 2] * z[i - 2];
        }
    }
    for i in 0..n {
        z[i] /= d[i];
    }
    for i in (0..n - 1).rev() {
        z[i] -= l1[i] * z[i + 1];
        if i + 2 < n {
            z[i] -= l2[i] * z[i + 2];
        }
    }
    Ok(z)
}

/// First differences `x_{t+1} - x_t`, labelled from the second year.
pub fn difference(x: &Series) -> Result<Series> {
    if x.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: x.len() });
    }
    let out = x.values.windows(2).map(|w| w[1] - w[0]).collect();
    Series::new(out, x.start_year + 1)
}

/// Residuals from an ordinary least-squares fit of the series on `(1, t)`.
pub fn linear_detrend(x: &Series) -> Result<Series> {
    let n = x.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let t_mean = (n as f64 - 1.0) / 2.0;
    let x_mean = x.mean();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in x.values.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let out = x
        .values
        .iter()
        .enumerate()
        .map(|(t, v)| v - x_mean - slope * (t as f64 - t_mean))
        .collect();
    Series::new(out, x.start_year)
}

/// Biased sample autocorrelation at `lag` (denominator uses all `n` terms).
pub fn sample_autocorr(x: &Series, lag: usize) -> Result<f64> {
    let n = x.len();
    if lag >= n {
        return Err(Error::TooShort { needed: lag + 1, got: n });
    }
    let mean = x.mean();
    let centered: Vec<f64> = x.values.iter().map(|v| v - mean).collect();
    let denom: f64 = centered.iter().map(|c| c * c).sum();
    if is_numerically_constant(denom, &x.values) {
        return Err(Error::ZeroVariance);
    }
    if lag == 0 {
        return Ok(1.0);
    }
    let num: f64 = centered.iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum();
    Ok(num / denom)
}

/// Pearson correlation of two aligned series.
pub fn cross_corr(x: &Series, y: &Series) -> Result<f64> {
    pearson(x.values(), y.values())
}

pub(crate) fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if is_numerically_constant(sxx, x) || is_numerically_constant(syy, y) {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Sum of squared deviations indistinguishable from rounding noise.
fn is_numerically_constant(sum_sq: f64, values: &[f64]) -> bool {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let noise = 64.0 * f64::EPSILON * scale;
    sum_sq <= values.len() as f64 * noise * noise
}

/// A point on the globe in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidInput(format!(
                "coordinates out of range: lat {lat}, lon {lon}"
            )));
        }
        Ok(Self { lat, lon })
    }
}

/// Haversine distance in kilometres.
pub fn great_circle_km(a: LatLon, b: LatLon) -> Result<f64> {
    let a = LatLon::new(a.lat, a.lon)?;
    let b = LatLon::new(b.lat, b.lon)?;
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}
