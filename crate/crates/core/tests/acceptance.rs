//! Acceptance checks, one printed PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when an
//! earlier criterion fails; the process exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mortpanel::dataset::{icd_jump_correct, state_centroids, PanelDataset, SeriesKey};
use mortpanel::design::{build_design, build_design_with, ReferenceCategories, RowKey, STATE_UNEMPLOYMENT};
use mortpanel::diag::{residual_acf_report, residual_xcorr_report};
use mortpanel::estim::{gls_fit, wls_fit, FitResult};
use mortpanel::mc::{generate_panel, run_monte_carlo, ErrorProcess, McSummary, SimConfig, TrendProcess};
use mortpanel::series::hp_filter;
use mortpanel::{DesignMatrix, ModelSpec, ModelType, Series, Subtype};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// Dense `(I + lambda K'K)^{-1} x` by LU.
fn dense_hp_trend(x: &[f64], lambda: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = DMatrix::<f64>::zeros(n - 2, n);
    for r in 0..n - 2 {
        k[(r, r)] = 1.0;
        k[(r, r + 1)] = -2.0;
        k[(r, r + 2)] = 1.0;
    }
    let a = DMatrix::<f64>::identity(n, n) + k.transpose() * &k * lambda;
    a.lu().solve(&DVector::from_column_slice(x)).unwrap().iter().copied().collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_err = 0.0f64;
    let mut exact = true;
    for i in 0..200 {
        let n = [5, 27, 50][i % 3];
        let lambda = [1.0, 100.0, 1600.0][(i / 3) % 3];
        let x: Vec<f64> = (0..n).map(|_| 10.0 * normal(&mut rng)).collect();
        let hp = hp_filter(&Series::from_values(x.clone()).unwrap(), lambda).unwrap();
        for (a, b) in hp.trend.values().iter().zip(dense_hp_trend(&x, lambda)) {
            max_err = max_err.max((a - b).abs());
        }

        let c = rng.random_range(-100i32..100) as f64;
        let slope = rng.random_range(-20i32..20) as f64 / 4.0;
        for input in [vec![c; n], (0..n).map(|t| c + slope * t as f64).collect()] {
            let hp = hp_filter(&Series::from_values(input).unwrap(), lambda).unwrap();
            exact &= hp.residual.values().iter().all(|r| *r == 0.0);
        }
    }
    let el = start.elapsed();
    outcome(
        max_err <= 1e-8 && exact && el < Duration::from_secs(5),
        format!("max |banded - dense| = {max_err:.2e}, constant/linear residuals exactly zero: {exact}, {}", secs(el)),
    )
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, k: usize, n_clusters: usize) -> DesignMatrix {
    let mut x = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..k {
            x[(i, j)] = normal(rng);
        }
    }
    let y = (0..n).map(|_| normal(rng)).collect();
    let w = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
    let clusters = (0..n).map(|i| i % n_clusters).collect();
    let labels = (0..k).map(|j| format!("x{j}")).collect();
    DesignMatrix::new(y, x, labels, w, clusters).unwrap()
}

/// Symmetric inverse square root through the eigendecomposition.
fn inv_sqrt(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(sigma.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_orth, mut worst_gls) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(8..=30);
        let k = rng.random_range(2..=5.min(n - 3));
        let d = random_design(&mut rng, n, k, 3);
        let fit = wls_fit(&d).unwrap();
        for j in 0..k {
            let (mut s, mut scale) = (0.0, 0.0);
            for i in 0..n {
                s += d.columns[(i, j)] * d.weights[i] * fit.residuals[i];
                scale += (d.columns[(i, j)] * d.weights[i] * d.response[i]).abs();
            }
            worst_orth = worst_orth.max(s.abs() / scale);
        }

        // AR(1) correlation with heteroskedastic scales.
        let rho: f64 = rng.random_range(-0.8..0.8);
        let sd: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let sigma = DMatrix::from_fn(n, n, |i, j| sd[i] * sd[j] * rho.powi((i as i32 - j as i32).abs()));
        let g = gls_fit(&d, &sigma).unwrap();
        let p = inv_sqrt(&sigma);
        let xs = &p * &d.columns;
        let ys = &p * DVector::from_column_slice(&d.response);
        let oracle = (xs.transpose() * &xs).lu().solve(&(xs.transpose() * ys)).unwrap();
        for j in 0..k {
            worst_gls = worst_gls.max((g.beta[j] - oracle[j]).abs());
        }
    }
    let el = start.elapsed();
    outcome(
        worst_orth < 1e-6 && worst_gls <= 1e-8 && el < Duration::from_secs(5),
        format!("max relative X'We = {worst_orth:.2e}, max |GLS - whitened OLS| = {worst_gls:.2e}, {}", secs(el)),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let g = rng.random_range(2..=5);
        let n = rng.random_range(10..=30);
        let k = rng.random_range(2..=4);
        let d = random_design(&mut rng, n, k, g);
        let fit = wls_fit(&d).unwrap();
        let x = &d.columns;
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&d.weights));
        let bread = (x.transpose() * &w * x).try_inverse().unwrap();
        let mut meat = DMatrix::<f64>::zeros(k, k);
        for c in 0..g {
            let mut score = DVector::<f64>::zeros(k);
            for i in (0..n).filter(|i| d.clusters[*i] == c) {
                score += x.row(i).transpose() * (d.weights[i] * fit.residuals[i]);
            }
            meat += &score * score.transpose();
        }
        let factor = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n - k) as f64);
        let oracle = &bread * meat * &bread * factor;
        worst = worst.max((fit.cov_clustered.unwrap() - oracle).amax());
    }
    outcome(worst <= 1e-10, format!("max |clustered - brute-force sandwich| = {worst:.2e}"))
}

/// Weighted least squares through the normal equations.
fn normal_equations(y: &[f64], x: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let xtw = x.transpose() * wm;
    (&xtw * x).lu().solve(&(&xtw * DVector::from_column_slice(y))).unwrap()
}

/// Residuals of a per-group regression on `[1, t]`, or on `[1]` when `trend` is false.
fn partial_out(v: &[f64], groups: usize, len: usize, trend: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    for g in 0..groups {
        let s = &v[g * len..(g + 1) * len];
        let tm = (len as f64 - 1.0) / 2.0;
        let m = s.iter().sum::<f64>() / len as f64;
        let slope = if trend {
            let sxy: f64 = s.iter().enumerate().map(|(t, y)| (t as f64 - tm) * (y - m)).sum();
            let sxx: f64 = (0..len).map(|t| (t as f64 - tm).powi(2)).sum();
            sxy / sxx
        } else {
            0.0
        };
        out.extend(s.iter().enumerate().map(|(t, y)| y - m - slope * (t as f64 - tm)));
    }
    out
}

fn column(d: &DesignMatrix, label: &str) -> Vec<f64> {
    d.columns.column(d.column_index(label).unwrap()).iter().copied().collect()
}

/// FWL check: the coefficient on state unemployment from the full design
/// equals the one from regressing partialled-out variables on each other.
fn fwl_gap(data: &PanelDataset, ty: ModelType) -> f64 {
    let spec = ModelSpec::new(ty, Subtype::Two, SeriesKey::Total);
    let d = build_design(data, &spec).unwrap();
    let full = wls_fit(&d).unwrap().coefficient(STATE_UNEMPLOYMENT).unwrap();
    let (s, t) = (data.n_states(), data.n_years());
    let trend = ty == ModelType::L;
    let regressors = [STATE_UNEMPLOYMENT, "age_under5", "age_over65"];
    let cols: Vec<Vec<f64>> = regressors.iter().map(|l| partial_out(&column(&d, l), s, t, trend)).collect();
    let x = DMatrix::from_fn(s * t, cols.len(), |i, j| cols[j][i]);
    let y = partial_out(&d.response, s, t, trend);
    let short = normal_equations(&y, &x, &d.weights)[0];
    (full - short).abs()
}

fn criterion_4() -> Outcome {
    // Populations are constant within each simulated state, so weighted
    // within-state projections coincide with unweighted ones.
    let mut cfg = SimConfig::iid(8, 15, -0.5, 0.02, 4);
    cfg.trend_process = TrendProcess::Linear { slope_sd: 0.01 };
    cfg.year_effect_sd = 0.02;
    let (data, _) = generate_panel(&cfg).unwrap();
    let fwl_trend = fwl_gap(&data, ModelType::L);
    let within = fwl_gap(&data, ModelType::B);

    let mut reference_gap = 0.0f64;
    for ty in [ModelType::B, ModelType::L, ModelType::D, ModelType::HP] {
        let spec = ModelSpec::new(ty, Subtype::One, SeriesKey::Total);
        let a = wls_fit(&build_design(&data, &spec).unwrap()).unwrap();
        let alt = ReferenceCategories { state: 5, year: 7 };
        let b = wls_fit(&build_design_with(&data, &spec, alt).unwrap()).unwrap();
        reference_gap = reference_gap.max(
            (a.coefficient(STATE_UNEMPLOYMENT).unwrap() - b.coefficient(STATE_UNEMPLOYMENT).unwrap()).abs(),
        );
        for (ra, rb) in a.residuals.iter().zip(&b.residuals) {
            reference_gap = reference_gap.max((ra - rb).abs());
        }
    }
    outcome(
        fwl_trend <= 1e-8 && within <= 1e-8 && reference_gap <= 1e-8,
        format!(
            "trend FWL gap {fwl_trend:.2e}, within-transformation gap {within:.2e}, reference-category gap {reference_gap:.2e}"
        ),
    )
}

fn iid_config() -> SimConfig {
    SimConfig::iid(20, 27, -0.5, 0.02, 2024)
}

fn criterion_5(summaries: &BTreeMap<&'static str, McSummary>, elapsed: Duration) -> Outcome {
    let mut pass = elapsed < Duration::from_secs(120);
    let mut parts = Vec::new();
    for (name, s) in summaries {
        let mc_se = s.sd_of_estimates / (s.n_reps as f64).sqrt();
        let ok = s.mean_bias.abs() < 3.0 * mc_se && (0.92..=0.98).contains(&s.coverage_ols);
        pass &= ok;
        parts.push(format!(
            "{name}: bias/mc_se {:+.2}, coverage {:.3}",
            s.mean_bias / mc_se,
            s.coverage_ols
        ));
    }
    outcome(pass, format!("{}; {}", parts.join("; "), secs(elapsed)))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = SimConfig {
        true_beta_u: 0.0,
        error_process: ErrorProcess::Ar1 { rho: 0.8, sigma: 0.02 },
        trend_process: TrendProcess::Smooth { scale: 0.002 },
        ..iid_config()
    };
    let rate = |ty| {
        let spec = ModelSpec::new(ty, Subtype::One, SeriesKey::Total);
        run_monte_carlo(&cfg, &spec, 1000).unwrap().rejection_rate_at_5pct_ols
    };
    let (b, hp) = (rate(ModelType::B), rate(ModelType::HP));
    let el = start.elapsed();
    outcome(
        b > 0.15 && b > hp && (0.03..=0.10).contains(&hp) && el < Duration::from_secs(300),
        format!(
            "B1 rejection {b:.3} (> 0.15: {}), HP1 rejection {hp:.3} (< B1: {}, in [0.03, 0.10]: {}), {}",
            b > 0.15,
            b > hp,
            (0.03..=0.10).contains(&hp),
            secs(el)
        ),
    )
}

fn criterion_7(d1: &McSummary) -> Outcome {
    let acf = d1.mean_acf_lag1.unwrap();
    outcome((acf + 0.5).abs() <= 0.1, format!("D1 mean lag-1 residual ACF {acf:.4} over {} reps", d1.n_reps))
}

/// Fit result carrying only i.i.d. draws as residuals, for the diagnostics.
fn iid_residuals(rng: &mut ChaCha8Rng, states: &[String], n_years: usize) -> FitResult {
    let n = states.len() * n_years;
    let mut rows = Vec::with_capacity(n);
    for s in states {
        rows.extend((0..n_years).map(|t| RowKey { state: s.clone(), year: 1980 + t as i32 }));
    }
    FitResult {
        labels: vec![],
        beta: vec![],
        residuals: (0..n).map(|_| normal(rng)).collect(),
        rows,
        weights: vec![1.0; n],
        rss: 0.0,
        sigma2: 0.0,
        cov_ols: DMatrix::zeros(0, 0),
        cov_clustered: None,
        dof_ols: n,
        dof_clustered: None,
        loglik: None,
        aic: None,
        n,
        k: 0,
        n_clusters: states.len(),
    }
}

fn criterion_8(b1: &McSummary) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let states: Vec<String> = state_centroids().keys().cloned().collect();
    let (mut acf, mut xcorr) = (0.0, 0.0);
    let reps = 500;
    for _ in 0..reps {
        let fit = iid_residuals(&mut rng, &states, 27);
        acf += residual_acf_report(&fit, false).unwrap().pct_within_lag1 / reps as f64;
        xcorr += residual_xcorr_report(&fit, state_centroids(), false).unwrap().pct_within_band / reps as f64;
    }
    let ok = |p: f64| (93.0..=97.0).contains(&p);
    outcome(
        ok(acf) && ok(xcorr),
        format!(
            "i.i.d. residuals, 50 states x 27 years, {reps} reps: lag-1 within {acf:.2}%, pairs within {xcorr:.2}% \
             (for information, B1 fit residuals on the i.i.d. panel: {:.2}% / {:.2}%)",
            b1.mean_pct_acf_lag1_within.unwrap(),
            b1.mean_pct_xcorr_within.unwrap()
        ),
    )
}

fn criterion_9() -> Outcome {
    let hand = icd_jump_correct(&Series::new(vec![0.0, 1.0, 5.0, 6.0], 1997).unwrap(), 1998).unwrap();
    let exact = hand.values() == [0.0, 1.0, 2.0, 3.0];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let j = rng.random_range(0..n - 1);
        let out = icd_jump_correct(&Series::new(x.clone(), 1970).unwrap(), 1970 + j as i32).unwrap();
        let y = out.values();
        let mut others = 0.0;
        for t in 0..n - 1 {
            if t != j {
                worst = worst.max(((y[t + 1] - y[t]) - (x[t + 1] - x[t])).abs());
                others += x[t + 1] - x[t];
            }
        }
        worst = worst.max(((y[j + 1] - y[j]) - others / (n - 2) as f64).abs());
    }
    outcome(
        exact && worst < 1e-12,
        format!("hand example exact: {exact}, max increment change {worst:.2e} over 100 series"),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "HP filter oracle", criterion_1()),
        (2, "WLS/GLS identities", criterion_2()),
        (3, "clustered covariance", criterion_3()),
        (4, "design equivalences", criterion_4()),
    ];

    let start = Instant::now();
    let cfg = iid_config();
    let mut summaries = BTreeMap::new();
    for (name, ty) in [("B1", ModelType::B), ("D1", ModelType::D), ("HP1", ModelType::HP), ("L1", ModelType::L)] {
        let spec = ModelSpec::new(ty, Subtype::One, SeriesKey::Total);
        summaries.insert(name, run_monte_carlo(&cfg, &spec, 500).unwrap());
    }
    let elapsed = start.elapsed();
    results.push((5, "Monte Carlo recovery", criterion_5(&summaries, elapsed)));
    results.push((6, "spurious significance", criterion_6()));
    results.push((7, "differencing ACF", criterion_7(&summaries["D1"])));
    results.push((8, "diagnostics calibration", criterion_8(&summaries["B1"])));
    results.push((9, "ICD correction", criterion_9()));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n} ({name}): {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("criterion 10 (real-data check): SKIPPED, needs user-supplied mortality and unemployment files");
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
