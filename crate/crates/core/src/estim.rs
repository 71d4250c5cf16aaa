//! Weighted least squares with OLS and state-clustered covariances, GLS,
//! AIC, significance stars and the model-level pipelines built on them.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::ser::Serializer;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::PanelDataset;
use crate::design::{self, build_design, DesignMatrix, ModelSpec, ModelType, RowKey, NATIONAL_UNEMPLOYMENT, STATE_UNEMPLOYMENT};
use crate::error::{Error, Result};

/// Relative size of a QR pivot below which a column is treated as a linear
/// combination of the columns before it.
const RANK_TOL: f64 = 1e-9;

/// A fitted linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub labels: Vec<String>,
    pub beta: Vec<f64>,
    /// Natural-scale residuals `y - X beta`, one per design row.
    pub residuals: Vec<f64>,
    pub rows: Vec<RowKey>,
    pub weights: Vec<f64>,
    /// Weighted residual sum of squares.
    pub rss: f64,
    /// `rss / (n - k)`.
    pub sigma2: f64,
    pub cov_ols: DMatrix<f64>,
    /// `None` when the design has a single cluster.
    pub cov_clustered: Option<DMatrix<f64>>,
    pub dof_ols: usize,
    pub dof_clustered: Option<usize>,
    /// `None` for a perfect fit, where the Gaussian likelihood is unbounded.
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub n: usize,
    pub k: usize,
    pub n_clusters: usize,
}

impl FitResult {
    pub fn coefficients(&self) -> IndexMap<&str, f64> {
        self.labels.iter().map(String::as_str).zip(self.beta.iter().copied()).collect()
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.index(label).map(|j| self.beta[j])
    }

    pub fn se_ols(&self, label: &str) -> Option<f64> {
        self.index(label).map(|j| self.cov_ols[(j, j)].max(0.0).sqrt())
    }

    pub fn se_clustered(&self, label: &str) -> Option<f64> {
        let j = self.index(label)?;
        self.cov_clustered.as_ref().map(|c| c[(j, j)].max(0.0).sqrt())
    }

    fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Residuals multiplied by the square root of their row weight.
    pub fn scaled_residuals(&self) -> Vec<f64> {
        self.residuals.iter().zip(&self.weights).map(|(e, w)| e * w.sqrt()).collect()
    }

    /// Natural-scale residual series per state, ordered by year.
    pub fn residuals_by_state(&self, scaled: bool) -> BTreeMap<String, Vec<(i32, f64)>> {
        let values = if scaled { self.scaled_residuals() } else { self.residuals.clone() };
        let mut out: BTreeMap<String, Vec<(i32, f64)>> = BTreeMap::new();
        for (row, e) in self.rows.iter().zip(values) {
            out.entry(row.state.clone()).or_default().push((row.year, e));
        }
        for v in out.values_mut() {
            v.sort_by_key(|p| p.0);
        }
        out
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct ResidualEntry<'a> {
    state: &'a str,
    year: i32,
    residual: f64,
}

impl Serialize for FitResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct View<'a> {
            coefficients: IndexMap<&'a str, f64>,
            residuals: Vec<ResidualEntry<'a>>,
            sigma2: f64,
            cov_ols: Vec<Vec<f64>>,
            cov_clustered: Option<Vec<Vec<f64>>>,
            dof_ols: usize,
            dof_clustered: Option<usize>,
            aic: Option<f64>,
            loglik: Option<f64>,
            n: usize,
            k: usize,
            n_clusters: usize,
        }
        View {
            coefficients: self.coefficients(),
            residuals: self
                .rows
                .iter()
                .zip(&self.residuals)
                .map(|(r, &residual)| ResidualEntry { state: &r.state, year: r.year, residual })
                .collect(),
            sigma2: self.sigma2,
            cov_ols: matrix_rows(&self.cov_ols),
            cov_clustered: self.cov_clustered.as_ref().map(matrix_rows),
            dof_ols: self.dof_ols,
            dof_clustered: self.dof_clustered,
            aic: self.aic,
            loglik: self.loglik,
            n: self.n,
            k: self.k,
            n_clusters: self.n_clusters,
        }
        .serialize(serializer)
    }
}

/// Significance marker from a two-sided p-value.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "†"
    } else {
        ""
    }
}

/// Two-sided p-value of a t statistic.
pub fn t_pvalue(t: f64, dof: usize) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    match StudentsT::new(0.0, 1.0, dof as f64) {
        Ok(dist) => (2.0 * dist.sf(t.abs())).min(1.0),
        Err(_) => f64::NAN,
    }
}

/// Effect of one unemployment term, reported on the 100·beta scale
/// (percent change in mortality per percentage point of unemployment).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectReport {
    pub term: String,
    pub effect_100beta: f64,
    pub se_ols: f64,
    pub se_clustered: Option<f64>,
    pub p_ols: f64,
    pub p_clustered: Option<f64>,
    pub stars_ols: &'static str,
    pub stars_clustered: Option<&'static str>,
}

impl EffectReport {
    pub fn from_fit(fit: &FitResult, term: &str) -> Option<Self> {
        let beta = fit.coefficient(term)?;
        let se = fit.se_ols(term)?;
        let p_ols = t_pvalue(beta / se, fit.dof_ols);
        let se_cl = fit.se_clustered(term);
        let p_cl = se_cl.zip(fit.dof_clustered).map(|(s, dof)| t_pvalue(beta / s, dof));
        Some(Self {
            term: term.to_owned(),
            effect_100beta: 100.0 * beta,
            se_ols: 100.0 * se,
            se_clustered: se_cl.map(|s| 100.0 * s),
            p_ols,
            p_clustered: p_cl,
            stars_ols: stars(p_ols),
            stars_clustered: p_cl.map(stars),
        })
    }
}

/// Returns the labels of columns that are (numerically) linear combinations
/// of other columns, together with the columns they depend on, or `None` for
/// a full-rank matrix.
pub fn rank_deficient_columns(x: &DMatrix<f64>, labels: &[String]) -> Option<Vec<String>> {
    if x.nrows() < x.ncols() {
        return Some(labels.to_vec());
    }
    deficient_from_r(x, &x.clone().qr().r(), labels)
}

fn deficient_from_r(x: &DMatrix<f64>, r: &DMatrix<f64>, labels: &[String]) -> Option<Vec<String>> {
    let k = x.ncols();
    let mut involved = vec![false; k];
    let mut any = false;
    for j in 0..k {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm {
            any = true;
            involved[j] = true;
            if j > 0 && norm > 0.0 {
                // Express column j through the earlier, independent ones.
                let head = r.view((0, 0), (j, j)).into_owned();
                let rhs = r.view((0, j), (j, 1)).into_owned();
                if let Some(c) = head.solve_upper_triangular(&rhs) {
                    for (i, ci) in c.iter().enumerate() {
                        if ci.abs() > 1e-8 {
                            involved[i] = true;
                        }
                    }
                }
            }
        }
    }
    any.then(|| labels.iter().zip(involved).filter(|(_, f)| *f).map(|(l, _)| l.clone()).collect())
}

/// QR of the sqrt(w)-scaled design: coefficients and `(X'WX)^{-1}`.
struct LeastSquares {
    beta: DVector<f64>,
    xtwx_inv: DMatrix<f64>,
}

fn scaled_design(d: &DesignMatrix) -> (DMatrix<f64>, DVector<f64>) {
    let mut xs = d.columns.clone();
    let mut ys = DVector::from_column_slice(&d.response);
    for (i, w) in d.weights.iter().enumerate() {
        let s = w.sqrt();
        xs.row_mut(i).scale_mut(s);
        ys[i] *= s;
    }
    (xs, ys)
}

fn least_squares(d: &DesignMatrix) -> Result<LeastSquares> {
    d.validate()?;
    let (n, k) = (d.n_rows(), d.n_cols());
    if n <= k {
        return Err(Error::TooFewRows { n, k });
    }
    let (xs, mut ys) = scaled_design(d);
    let qr = xs.clone().qr();
    let r = qr.r();
    if let Some(columns) = deficient_from_r(&xs, &r, &d.labels) {
        return Err(Error::RankDeficient { columns });
    }
    qr.q_tr_mul(&mut ys);
    let qty = ys.rows(0, k).into_owned();
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: d.labels.clone() })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient { columns: d.labels.clone() })?;
    let xtwx_inv = &r_inv * r_inv.transpose();
    Ok(LeastSquares { beta, xtwx_inv })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Gaussian log-likelihood with per-row variance `sigma2_ml / w_i`.
fn gaussian_loglik(rss: f64, n: usize, sum_log_w: f64, scale: f64) -> Option<f64> {
    // A perfect fit leaves only rounding noise in the residuals.
    if !(rss > 1e-24 * scale) {
        return None;
    }
    let nf = n as f64;
    let sigma2_ml = rss / nf;
    Some(-0.5 * nf * ((2.0 * std::f64::consts::PI * sigma2_ml).ln() + 1.0) + 0.5 * sum_log_w)
}

/// Weighted least squares: minimises `sum w_i (y_i - x_i' beta)^2` via QR on
/// sqrt(w)-scaled rows, then fills in both covariance estimates and AIC.
pub fn wls_fit(d: &DesignMatrix) -> Result<FitResult> {
    let ls = least_squares(d)?;
    let (n, k) = (d.n_rows(), d.n_cols());
    let fitted = &d.columns * &ls.beta;
    let residuals: Vec<f64> = d.response.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    let rss: f64 = residuals.iter().zip(&d.weights).map(|(e, w)| w * e * e).sum();
    let sigma2 = rss / (n - k) as f64;
    let n_clusters = d.n_clusters();
    let cov_clustered = if n_clusters >= 2 {
        Some(sandwich(&ls.xtwx_inv, d, &residuals))
    } else {
        None
    };
    let mut cov_ols = &ls.xtwx_inv * sigma2;
    symmetrize(&mut cov_ols);
    let sum_log_w: f64 = d.weights.iter().map(|w| w.ln()).sum();
    let scale: f64 = d.response.iter().zip(&d.weights).map(|(y, w)| w * y * y).sum::<f64>().max(f64::MIN_POSITIVE);
    let loglik = gaussian_loglik(rss, n, sum_log_w, scale);
    Ok(FitResult {
        labels: d.labels.clone(),
        beta: ls.beta.iter().copied().collect(),
        residuals,
        rows: d.rows.clone(),
        weights: d.weights.clone(),
        rss,
        sigma2,
        cov_ols,
        cov_clustered,
        dof_ols: n - k,
        dof_clustered: (n_clusters >= 2).then(|| n_clusters - 1),
        aic: loglik.map(|l| aic_from(l, k)),
        loglik,
        n,
        k,
        n_clusters,
    })
}

/// `sigma2 (X'WX)^{-1}`.
pub fn cov_ols(fit: &FitResult, d: &DesignMatrix) -> Result<DMatrix<f64>> {
    let ls = least_squares(d)?;
    let mut c = ls.xtwx_inv * fit.sigma2;
    symmetrize(&mut c);
    Ok(c)
}

/// Cluster-robust sandwich with the `G/(G-1) * (n-1)/(n-k)` small-sample
/// factor, clusters taken from the design.
pub fn cov_clustered(fit: &FitResult, d: &DesignMatrix) -> Result<DMatrix<f64>> {
    let g = d.n_clusters();
    if g < 2 {
        return Err(Error::TooFewClusters(g));
    }
    if fit.residuals.len() != d.n_rows() {
        return Err(Error::LengthMismatch { left: fit.residuals.len(), right: d.n_rows() });
    }
    let ls = least_squares(d)?;
    Ok(sandwich(&ls.xtwx_inv, d, &fit.residuals))
}

fn sandwich(bread: &DMatrix<f64>, d: &DesignMatrix, residuals: &[f64]) -> DMatrix<f64> {
    let (n, k) = (d.n_rows(), d.n_cols());
    let mut scores: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for i in 0..n {
        let s = scores.entry(d.clusters[i]).or_insert_with(|| DVector::zeros(k));
        let we = d.weights[i] * residuals[i];
        for j in 0..k {
            s[j] += we * d.columns[(i, j)];
        }
    }
    let g = scores.len();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for s in scores.values() {
        meat.ger(1.0, s, s, 1.0);
    }
    let factor = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n - k) as f64);
    let mut v = bread * meat * bread * factor;
    symmetrize(&mut v);
    v
}

fn aic_from(loglik: f64, k: usize) -> f64 {
    -2.0 * loglik + 2.0 * (k as f64 + 1.0)
}

/// `-2 loglik + 2 (k + 1)`; the extra parameter is the error variance.
pub fn aic(fit: &FitResult) -> Result<f64> {
    fit.loglik.map(|l| aic_from(l, fit.k)).ok_or(Error::DegenerateFit)
}

/// Generalised least squares with a known row covariance `sigma`:
/// `beta = (X' S^-1 X)^-1 X' S^-1 y`.
///
/// Computed as OLS on rows whitened by the Cholesky factor of `sigma`. The
/// design's own weights are ignored; `sigma` carries the full error
/// structure. Residuals are reported on the natural scale; the clustered
/// covariance is computed on the whitened rows.
pub fn gls_fit(d: &DesignMatrix, sigma: &DMatrix<f64>) -> Result<FitResult> {
    let n = d.n_rows();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::LengthMismatch { left: n, right: sigma.nrows() });
    }
    let asym = (sigma - sigma.transpose()).amax();
    if !(asym <= 1e-12 * sigma.amax().max(1.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    let chol = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let xw = l.solve_lower_triangular(&d.columns).ok_or(Error::NotPositiveDefinite)?;
    let yw = l
        .solve_lower_triangular(&DVector::from_column_slice(&d.response))
        .ok_or(Error::NotPositiveDefinite)?;
    let whitened = DesignMatrix {
        response: yw.iter().copied().collect(),
        columns: xw,
        labels: d.labels.clone(),
        weights: vec![1.0; n],
        clusters: d.clusters.clone(),
        rows: d.rows.clone(),
    };
    let mut fit = wls_fit(&whitened)?;
    let beta = DVector::from_column_slice(&fit.beta);
    let fitted = &d.columns * beta;
    fit.residuals = d.response.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    fit.loglik = fit.loglik.map(|ll| ll - 0.5 * log_det);
    fit.aic = fit.loglik.map(|ll| aic_from(ll, fit.k));
    Ok(fit)
}

/// A fitted model specification with its unemployment effects.
#[derive(Debug, Clone, Serialize)]
pub struct ModelFit {
    pub spec: ModelSpec,
    pub fit: FitResult,
    pub effects: Vec<EffectReport>,
}

impl ModelFit {
    pub fn effect(&self, term: &str) -> Option<&EffectReport> {
        self.effects.iter().find(|e| e.term == term)
    }
}

/// Builds the design for `spec`, fits it by WLS and reports 100·beta for
/// each unemployment term present.
pub fn fit_model(data: &PanelDataset, spec: &ModelSpec) -> Result<ModelFit> {
    let d = build_design(data, spec)?;
    let fit = wls_fit(&d)?;
    let effects = [STATE_UNEMPLOYMENT, NATIONAL_UNEMPLOYMENT]
        .into_iter()
        .filter_map(|t| EffectReport::from_fit(&fit, t))
        .collect();
    Ok(ModelFit { spec: *spec, fit, effects })
}

/// Fits the model to one state alone and returns 100·beta for state
/// unemployment (national unemployment for subtype 3). Year effects are not
/// identified from a single state, so subtype 1 is rejected.
pub fn fit_single_state(data: &PanelDataset, spec: &ModelSpec, state: usize) -> Result<f64> {
    if spec.subtype.has_year_effects() {
        return Err(Error::Contract(
            "single-state fits cannot include year effects; use subtype 2, 3 or 4".into(),
        ));
    }
    let one = data.subset_states(&[state])?;
    let fit = wls_fit(&build_design(&one, spec)?)?;
    let term = if spec.subtype.has_state_unemployment() { STATE_UNEMPLOYMENT } else { NATIONAL_UNEMPLOYMENT };
    let beta = fit.coefficient(term).expect("subtype determines the unemployment term");
    Ok(100.0 * beta)
}

/// One row of a model comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub spec: ModelSpec,
    pub name: String,
    pub year_effects: bool,
    pub state_unemployment: Option<EffectReport>,
    pub national_unemployment: Option<EffectReport>,
    pub aic: Option<f64>,
    /// AIC minus the smallest AIC among specs with the same response.
    pub delta_aic: Option<f64>,
    /// Specs sharing a group fit the same transformed response, so their AIC
    /// values are comparable; across groups they are not.
    pub comparable_group: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

fn response_group(spec: &ModelSpec) -> String {
    let transform = match spec.model_type {
        ModelType::B | ModelType::L => "levels".to_owned(),
        ModelType::D => "differences".to_owned(),
        ModelType::HP => format!("hp(lambda={})", spec.hp_lambda),
    };
    let weights = match spec.weights {
        design::WeightScheme::Pop => "pop",
        design::WeightScheme::SqrtPop => "sqrt-pop",
    };
    let icd = if spec.apply_icd_correction && spec.series.has_icd_jump() { "/icd" } else { "" };
    format!("{}/{transform}/{weights}{icd}", spec.series)
}

/// Fits every spec (in parallel) and tabulates effects and AIC, with AIC
/// differences taken within groups of specs that share a response.
pub fn compare_models(data: &PanelDataset, specs: &[ModelSpec]) -> Result<Comparison> {
    if specs.is_empty() {
        return Err(Error::InvalidInput("no model specifications to compare".into()));
    }
    let fits: Vec<ModelFit> = specs.par_iter().map(|s| fit_model(data, s)).collect::<Result<_>>()?;
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for f in &fits {
        if let Some(a) = f.fit.aic {
            let g = response_group(&f.spec);
            let e = best.entry(g).or_insert(a);
            *e = e.min(a);
        }
    }
    let rows = fits
        .into_iter()
        .map(|f| {
            let group = response_group(&f.spec);
            ComparisonRow {
                name: f.spec.short_name(),
                year_effects: f.spec.subtype.has_year_effects(),
                state_unemployment: f.effect(STATE_UNEMPLOYMENT).cloned(),
                national_unemployment: f.effect(NATIONAL_UNEMPLOYMENT).cloned(),
                aic: f.fit.aic,
                delta_aic: f.fit.aic.zip(best.get(&group)).map(|(a, b)| a - b),
                comparable_group: group,
                spec: f.spec,
            }
        })
        .collect();
    Ok(Comparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SeriesKey;
    use crate::design::{toy_panel, Subtype};

    fn design(y: &[f64], rows: &[&[f64]], w: &[f64], clusters: &[usize]) -> DesignMatrix {
        let k = rows[0].len();
        let x = DMatrix::from_row_slice(rows.len(), k, &rows.concat());
        let labels = (0..k).map(|j| format!("x{j}")).collect();
        DesignMatrix::new(y.to_vec(), x, labels, w.to_vec(), clusters.to_vec()).unwrap()
    }

    #[test]
    fn exact_fit() {
        let d = design(&[1.0, 2.0, 3.0], &[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0]], &[1.0; 3], &[0, 1, 2]);
        let fit = wls_fit(&d).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-12 && (fit.beta[1] - 1.0).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-12));
        assert!(fit.aic.is_none());
        assert!(matches!(aic(&fit), Err(Error::DegenerateFit)));
    }

    #[test]
    fn weighted_mean() {
        let d = design(&[0.0, 1.0], &[&[1.0], &[1.0]], &[1.0, 3.0], &[0, 1]);
        assert!((wls_fit(&d).unwrap().beta[0] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn duplicated_column_is_rank_error() {
        let d = design(&[1.0, 2.0, 4.0], &[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]], &[1.0; 3], &[0, 0, 1]);
        match wls_fit(&d) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["x0", "x1"]),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_rows() {
        let d = design(&[1.0, 2.0], &[&[1.0, 0.0], &[1.0, 1.0]], &[1.0; 2], &[0, 1]);
        assert!(matches!(wls_fit(&d), Err(Error::TooFewRows { n: 2, k: 2 })));
    }

    #[test]
    fn intercept_only_variance_is_s2_over_n() {
        let y = [1.0, 4.0, 2.0, 8.0, 5.0];
        let rows: Vec<&[f64]> = vec![&[1.0]; 5];
        let d = design(&y, &rows, &[1.0; 5], &[0, 1, 2, 3, 4]);
        let fit = wls_fit(&d).unwrap();
        let mean = y.iter().sum::<f64>() / 5.0;
        let s2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((fit.cov_ols[(0, 0)] - s2 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn cov_ols_matches_explicit_inverse_and_ignores_weight_scale() {
        let rows: [&[f64]; 3] = [&[1.0, 0.5], &[1.0, 2.0], &[1.0, -1.0]];
        let (y, w) = ([0.3, 1.7, -0.4], [1.0, 2.0, 0.5]);
        let d = design(&y, &rows, &w, &[0, 1, 2]);
        let fit = wls_fit(&d).unwrap();
        let x = d.columns.clone();
        let wm = DMatrix::from_diagonal(&DVector::from_column_slice(&w));
        let inv = (x.transpose() * &wm * &x).try_inverse().unwrap();
        let oracle = inv * fit.sigma2;
        assert!((&fit.cov_ols - &oracle).amax() < 1e-12);
        assert!((cov_ols(&fit, &d).unwrap() - &oracle).amax() < 1e-12);

        let w5: Vec<f64> = w.iter().map(|v| v * 5.0).collect();
        let d5 = design(&y, &rows, &w5, &[0, 1, 2]);
        assert!((wls_fit(&d5).unwrap().cov_ols - oracle).amax() < 1e-12);
    }

    #[test]
    fn clustered_two_by_two_matches_hand_sandwich() {
        let rows: [&[f64]; 4] = [&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 4.0]];
        let d = design(&[0.1, 0.9, 2.4, 3.6], &rows, &[1.0, 2.0, 1.0, 3.0], &[0, 0, 1, 1]);
        let fit = wls_fit(&d).unwrap();
        let x = &d.columns;
        let wm = DMatrix::from_diagonal(&DVector::from_column_slice(&d.weights));
        let bread = (x.transpose() * &wm * x).try_inverse().unwrap();
        let mut meat = DMatrix::zeros(2, 2);
        for g in [[0usize, 1], [2, 3]] {
            let mut s = DVector::zeros(2);
            for i in g {
                s += x.row(i).transpose() * (d.weights[i] * fit.residuals[i]);
            }
            meat += &s * s.transpose();
        }
        let oracle = &bread * meat * &bread * (2.0 / 1.0 * 3.0 / 2.0);
        let got = fit.cov_clustered.clone().unwrap();
        assert!((&got - &oracle).amax() < 1e-12);
        assert!((cov_clustered(&fit, &d).unwrap() - oracle).amax() < 1e-12);
        assert_eq!(fit.dof_clustered, Some(1));
    }

    #[test]
    fn clustered_singletons_is_scaled_hc0() {
        let rows: [&[f64]; 5] = [&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0], &[1.0, 5.0]];
        let d = design(&[0.2, 0.8, 2.5, 2.9, 5.3], &rows, &[1.0; 5], &[0, 1, 2, 3, 4]);
        let fit = wls_fit(&d).unwrap();
        let x = &d.columns;
        let bread = (x.transpose() * x).try_inverse().unwrap();
        let e2 = DMatrix::from_diagonal(&DVector::from_iterator(5, fit.residuals.iter().map(|e| e * e)));
        let hc0 = &bread * x.transpose() * e2 * x * &bread;
        let factor = (5.0 / 4.0) * (4.0 / 3.0);
        assert!((fit.cov_clustered.unwrap() - hc0 * factor).amax() < 1e-12);
    }

    #[test]
    fn clustered_zero_residuals_and_one_cluster() {
        let rows: [&[f64]; 3] = [&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0]];
        let d = design(&[1.0, 2.0, 3.0], &rows, &[1.0; 3], &[0, 1, 1]);
        let fit = wls_fit(&d).unwrap();
        assert!(fit.cov_clustered.unwrap().amax() < 1e-20);
        let one = design(&[1.0, 2.0, 2.5], &rows, &[1.0; 3], &[0, 0, 0]);
        let fit = wls_fit(&one).unwrap();
        assert!(fit.cov_clustered.is_none());
        assert!(matches!(cov_clustered(&fit, &one), Err(Error::TooFewClusters(1))));
    }

    #[test]
    fn aic_formula() {
        // unit weights, n = 10, RSS = 10, k = 2: AIC = 10 (ln 2pi + 1) + 6
        let ll = gaussian_loglik(10.0, 10, 0.0, 1.0).unwrap();
        let expected = 10.0 * ((2.0 * std::f64::consts::PI).ln() + 1.0) + 6.0;
        assert!((aic_from(ll, 2) - expected).abs() < 1e-12);
        assert!((expected - 34.3787706641).abs() < 1e-9);
    }

    #[test]
    fn adding_a_column_never_lowers_loglik() {
        let y = [0.3, 1.1, 1.9, 3.2, 3.9, 5.3, 5.8];
        let base: Vec<Vec<f64>> = (0..7).map(|i| vec![1.0, i as f64]).collect();
        let more: Vec<Vec<f64>> = (0..7).map(|i| vec![1.0, i as f64, ((i * 7) % 5) as f64]).collect();
        let r1: Vec<&[f64]> = base.iter().map(Vec::as_slice).collect();
        let r2: Vec<&[f64]> = more.iter().map(Vec::as_slice).collect();
        let w = [1.0, 2.0, 1.0, 3.0, 1.0, 2.0, 1.0];
        let l1 = wls_fit(&design(&y, &r1, &w, &[0; 7])).unwrap().loglik.unwrap();
        let l2 = wls_fit(&design(&y, &r2, &w, &[0; 7])).unwrap().loglik.unwrap();
        assert!(l2 >= l1 - 1e-12);
    }

    #[test]
    fn gls_special_cases() {
        let rows: [&[f64]; 5] = [&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0], &[1.0, 5.0]];
        let y = [0.2, 0.8, 2.5, 2.9, 5.3];
        let w = [1.0, 2.0, 4.0, 0.5, 1.5];
        let ols = wls_fit(&design(&y, &rows, &[1.0; 5], &[0, 0, 1, 1, 2])).unwrap();
        let d = design(&y, &rows, &w, &[0, 0, 1, 1, 2]);
        let g = gls_fit(&d, &DMatrix::identity(5, 5)).unwrap();
        for j in 0..2 {
            assert!((g.beta[j] - ols.beta[j]).abs() < 1e-12);
        }
        let sigma = DMatrix::from_diagonal(&DVector::from_iterator(5, w.iter().map(|v| 1.0 / v)));
        let g = gls_fit(&d, &sigma).unwrap();
        let wls = wls_fit(&d).unwrap();
        for j in 0..2 {
            assert!((g.beta[j] - wls.beta[j]).abs() < 1e-12);
        }
        assert!((g.loglik.unwrap() - wls.loglik.unwrap()).abs() < 1e-9);
        assert!((&g.cov_ols - &wls.cov_ols).amax() < 1e-12);
    }

    #[test]
    fn gls_rejects_non_pd() {
        let rows: [&[f64]; 3] = [&[1.0], &[1.0], &[1.0]];
        let d = design(&[1.0, 2.0, 3.0], &rows, &[1.0; 3], &[0, 1, 2]);
        let mut s = DMatrix::identity(3, 3);
        s[(2, 2)] = -1.0;
        assert!(matches!(gls_fit(&d, &s), Err(Error::NotPositiveDefinite)));
        let mut s = DMatrix::identity(3, 3);
        s[(0, 1)] = 0.5;
        assert!(matches!(gls_fit(&d, &s), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn stars_thresholds() {
        assert_eq!(stars(0.0005), "***");
        assert_eq!(stars(0.001), "**");
        assert_eq!(stars(0.009), "**");
        assert_eq!(stars(0.01), "*");
        assert_eq!(stars(0.049), "*");
        assert_eq!(stars(0.05), "†");
        assert_eq!(stars(0.0999), "†");
        assert_eq!(stars(0.1), "");
        assert_eq!(stars(0.7), "");
    }

    #[test]
    fn t_pvalues() {
        assert!((t_pvalue(0.0, 10) - 1.0).abs() < 1e-12);
        // t = 2.228 is the 97.5% quantile of t(10)
        assert!((t_pvalue(2.228138851986, 10) - 0.05).abs() < 1e-9);
        assert!((t_pvalue(-2.228138851986, 10) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn single_state_rejects_year_effects() {
        let data = toy_panel(3, 10);
        let spec = ModelSpec::new(ModelType::HP, Subtype::One, SeriesKey::Total);
        assert!(matches!(fit_single_state(&data, &spec, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn comparison_of_one_spec() {
        let data = toy_panel(3, 10);
        let c = compare_models(&data, &[ModelSpec::new(ModelType::B, Subtype::Two, SeriesKey::Total)]).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].delta_aic, Some(0.0));
        assert!(compare_models(&data, &[]).is_err());
    }

    #[test]
    fn comparison_groups_by_response() {
        let data = toy_panel(3, 10);
        let specs: Vec<ModelSpec> = ["B2", "L2", "D2", "HP2"]
            .iter()
            .map(|c| ModelSpec::parse_short(c, SeriesKey::Total).unwrap())
            .collect();
        let c = compare_models(&data, &specs).unwrap();
        assert_eq!(c.rows[0].comparable_group, c.rows[1].comparable_group);
        assert_ne!(c.rows[0].comparable_group, c.rows[2].comparable_group);
        assert_ne!(c.rows[2].comparable_group, c.rows[3].comparable_group);
        assert_eq!(c.rows[2].delta_aic, Some(0.0));
        assert_eq!(c.rows[3].delta_aic, Some(0.0));
        let min = c.rows[0].delta_aic.unwrap().min(c.rows[1].delta_aic.unwrap());
        assert_eq!(min, 0.0);
    }

    #[test]
    fn fit_result_json_field_names() {
        let data = toy_panel(3, 10);
        let m = fit_model(&data, &ModelSpec::new(ModelType::B, Subtype::One, SeriesKey::Total)).unwrap();
        let v = serde_json::to_value(&m.fit).unwrap();
        for key in ["coefficients", "residuals", "sigma2", "cov_ols", "cov_clustered", "dof_ols", "dof_clustered", "aic", "loglik", "n", "k", "n_clusters"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["n"], 30);
        assert!(v["coefficients"]["state_unemployment"].is_f64());
        assert_eq!(m.effects.len(), 1);
    }
}
