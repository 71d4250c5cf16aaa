//! Command-line front end. Each subcommand writes its outputs atomically into
//! `--out` together with a `manifest.json` describing the run.
//!
//! Exit codes: 0 success, 1 numerical or model failure, 2 invalid input.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::dataset::{load_panel_with, LoadOptions, PanelDataset, SeriesKey};
use crate::design::{ModelSpec, ModelType, Subtype, WeightScheme};
use crate::diag::{residual_acf_report, residual_xcorr_report, state_effect_dispersion, AcfReport, XcorrReport};
use crate::error::{Error, Result};
use crate::estim::{compare_models, fit_model, t_pvalue, ComparisonRow, EffectReport};
use crate::mc::{run_monte_carlo, SimConfig};
use crate::output::{num, opt_num, write_json, CsvTable, RunManifest};
use crate::series::DEFAULT_HP_LAMBDA;

#[derive(Debug, Parser)]
#[command(name = "mortpanel", version, about = "Panel regressions of state mortality on unemployment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and write coefficients, effects and residuals.
    Fit(FitArgs),
    /// Fit several specs and tabulate effects and AIC side by side.
    Compare(CompareArgs),
    /// Residual autocorrelation and cross-correlation diagnostics.
    Diagnose(DiagnoseArgs),
    /// Per-state unemployment effects and their dispersion.
    Effects(FitArgs),
    /// Monte Carlo study of a spec on synthetic panels.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Mortality CSV (state,year,category,rate).
    #[arg(long)]
    pub mortality: PathBuf,
    /// Unemployment CSV (state,year,rate), including national rows.
    #[arg(long)]
    pub unemployment: PathBuf,
    /// Age structure CSV (state,year,prop_under5,prop_over65,population).
    #[arg(long)]
    pub agestructure: PathBuf,
    /// Fill missing national unemployment with the population-weighted mean.
    #[arg(long)]
    pub national_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct SpecOptions {
    /// Mortality series key, e.g. total, age65plus, cardio.
    #[arg(long, value_parser = parse_series)]
    pub series: SeriesKey,
    /// HP smoothing parameter.
    #[arg(long, default_value_t = DEFAULT_HP_LAMBDA)]
    pub lambda: f64,
    /// Row weights.
    #[arg(long, value_parser = parse_weights, default_value = "pop")]
    pub weights: WeightScheme,
    /// Shift series with a coding break so the break-year jump matches the
    /// series' typical yearly change.
    #[arg(long, value_enum, default_value = "on")]
    pub icd_correct: OnOff,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long = "type", value_parser = parse_type)]
    pub model_type: ModelType,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub subtype: u8,
    #[command(flatten)]
    pub options: SpecOptions,
}

impl ModelArgs {
    pub fn spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(self.model_type, Subtype::try_from(self.subtype)?, self.options.series);
        apply_options(&mut spec, &self.options);
        spec.validate()?;
        Ok(spec)
    }
}

fn apply_options(spec: &mut ModelSpec, o: &SpecOptions) {
    spec.hp_lambda = o.lambda;
    spec.weights = o.weights;
    spec.apply_icd_correction = o.icd_correct == OnOff::On;
}

fn parse_series(s: &str) -> std::result::Result<SeriesKey, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_type(s: &str) -> std::result::Result<ModelType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_weights(s: &str) -> std::result::Result<WeightScheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated model codes, e.g. B1,B2,L1,HP1.
    #[arg(long, value_delimiter = ',')]
    pub specs: Vec<String>,
    #[command(flatten)]
    pub options: SpecOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Use sqrt(weight)-scaled residuals instead of natural-scale ones.
    #[arg(long)]
    pub scaled_residuals: bool,
    /// Also write x/y CSVs ready for plotting.
    #[arg(long)]
    pub plot_data: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Simulation config JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Effects(a) => cmd_effects(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn load(a: &DataArgs) -> Result<PanelDataset> {
    load_panel_with(
        &a.mortality,
        &a.unemployment,
        &a.agestructure,
        LoadOptions { national_fallback: a.national_fallback },
    )
}

fn manifest_for(command: &str, data: Option<&DataArgs>) -> RunManifest {
    let mut m = RunManifest::new(command);
    if let Some(d) = data {
        m.inputs = vec![d.mortality.clone(), d.unemployment.clone(), d.agestructure.clone()];
        m.config = json!({ "national_fallback": d.national_fallback });
    }
    m
}

/// Collects written files and finishes with the manifest.
struct Outputs<'a> {
    dir: &'a Path,
    manifest: RunManifest,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path, manifest: RunManifest) -> Self {
        Self { dir, manifest }
    }

    fn csv(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        let p = self.dir.join(name);
        table.write(&p)?;
        self.manifest.outputs.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.dir.join(name);
        write_json(&p, value)?;
        self.manifest.outputs.push(p);
        Ok(())
    }

    fn finish(self) -> Result<()> {
        write_json(&self.dir.join("manifest.json"), &self.manifest)
    }
}

fn spec_json(spec: &ModelSpec) -> serde_json::Value {
    let mut v = serde_json::to_value(spec).expect("spec serialises");
    v["name"] = json!(spec.short_name());
    v
}

fn stars_or_na(s: Option<&'static str>) -> String {
    s.map_or_else(|| "NA".to_owned(), str::to_owned)
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let spec = a.model.spec()?;
    let data = load(&a.data)?;
    let m = fit_model(&data, &spec)?;
    let fit = &m.fit;

    let mut coef = CsvTable::new(&["term", "estimate", "se_ols", "se_clustered", "t_ols", "p_ols", "p_clustered"]);
    for (j, label) in fit.labels.iter().enumerate() {
        let b = fit.beta[j];
        let se = fit.se_ols(label).unwrap_or(f64::NAN);
        let se_cl = fit.se_clustered(label);
        let p_cl = se_cl.zip(fit.dof_clustered).map(|(s, d)| t_pvalue(b / s, d));
        coef.row(&[
            label.clone(),
            num(b),
            num(se),
            opt_num(se_cl),
            num(b / se),
            num(t_pvalue(b / se, fit.dof_ols)),
            opt_num(p_cl),
        ]);
    }
    let mut resid = CsvTable::new(&["state", "year", "residual", "weight"]);
    for ((r, e), w) in fit.rows.iter().zip(&fit.residuals).zip(&fit.weights) {
        resid.row(&[r.state.clone(), r.year.to_string(), num(*e), num(*w)]);
    }
    let effects = json!({
        "spec": spec_json(&spec),
        "effects": m.effects,
        "aic": fit.aic,
        "loglik": fit.loglik,
        "n": fit.n,
        "k": fit.k,
        "n_clusters": fit.n_clusters,
        "dof_ols": fit.dof_ols,
        "dof_clustered": fit.dof_clustered,
    });

    let mut manifest = manifest_for("fit", Some(&a.data));
    manifest.specs.push(spec_json(&spec));
    let mut out = Outputs::new(&a.out, manifest);
    out.csv("coefficients.csv", &coef)?;
    out.json("effects.json", &effects)?;
    out.csv("residuals.csv", &resid)?;
    out.json("fit.json", fit)?;
    out.finish()
}

fn effect_cells(e: Option<&EffectReport>) -> [String; 4] {
    match e {
        Some(e) => [
            num(e.effect_100beta),
            num(e.se_ols),
            e.stars_ols.to_owned(),
            stars_or_na(e.stars_clustered),
        ],
        None => ["NA".into(), "NA".into(), "NA".into(), "NA".into()],
    }
}

pub fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let codes: Vec<&str> = a.specs.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    if codes.is_empty() {
        return Err(Error::InvalidInput("--specs lists no model codes".into()));
    }
    let specs = codes
        .iter()
        .map(|c| {
            let mut s = ModelSpec::parse_short(c, a.options.series)?;
            apply_options(&mut s, &a.options);
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let data = load(&a.data)?;
    let cmp = compare_models(&data, &specs)?;

    let mut long = CsvTable::new(&[
        "spec",
        "year_effects",
        "state_u_effect",
        "state_u_se_ols",
        "state_u_se_clustered",
        "state_u_stars_ols",
        "state_u_stars_clustered",
        "national_u_effect",
        "national_u_se_ols",
        "national_u_se_clustered",
        "national_u_stars_ols",
        "national_u_stars_clustered",
        "aic",
        "delta_aic",
        "aic_group",
    ]);
    for r in &cmp.rows {
        let mut fields = vec![r.name.clone(), if r.year_effects { "yes" } else { "no" }.to_owned()];
        for e in [&r.state_unemployment, &r.national_unemployment] {
            match e {
                Some(e) => fields.extend([
                    num(e.effect_100beta),
                    num(e.se_ols),
                    opt_num(e.se_clustered),
                    e.stars_ols.to_owned(),
                    stars_or_na(e.stars_clustered),
                ]),
                None => fields.extend(std::iter::repeat_n("NA".to_owned(), 5)),
            }
        }
        fields.extend([opt_num(r.aic), opt_num(r.delta_aic), r.comparable_group.clone()]);
        long.row(&fields);
    }

    // Specs as columns, one row per reported quantity.
    let mut header = vec!["quantity".to_owned()];
    header.extend(cmp.rows.iter().map(|r| r.name.clone()));
    let mut table = CsvTable::new(&header);
    let wide = |label: &str, f: &dyn Fn(&ComparisonRow) -> String| {
        let mut row = vec![label.to_owned()];
        row.extend(cmp.rows.iter().map(f));
        row
    };
    let labels = [
        ("state_u_effect", "state_u_se_ols", "state_u_stars_ols", "state_u_stars_clustered"),
        ("national_u_effect", "national_u_se_ols", "national_u_stars_ols", "national_u_stars_clustered"),
    ];
    for (which, names) in labels.iter().enumerate() {
        let pick = |r: &ComparisonRow| {
            effect_cells(if which == 0 { r.state_unemployment.as_ref() } else { r.national_unemployment.as_ref() })
        };
        table.row(&wide(names.0, &|r| pick(r)[0].clone()));
        table.row(&wide(names.1, &|r| pick(r)[1].clone()));
        table.row(&wide(names.2, &|r| pick(r)[2].clone()));
        table.row(&wide(names.3, &|r| pick(r)[3].clone()));
    }
    table.row(&wide("year_effects", &|r| if r.year_effects { "yes" } else { "no" }.to_owned()));
    table.row(&wide("aic", &|r| opt_num(r.aic)));
    table.row(&wide("delta_aic", &|r| opt_num(r.delta_aic)));

    let mut manifest = manifest_for("compare", Some(&a.data));
    manifest.specs = specs.iter().map(spec_json).collect();
    let mut out = Outputs::new(&a.out, manifest);
    out.csv("comparison.csv", &long)?;
    out.csv("table.csv", &table)?;
    out.json("comparison.json", &cmp)?;
    out.finish()
}

fn acf_table(r: &AcfReport) -> CsvTable {
    let mut t = CsvTable::new(&["state", "lag1", "lag2", "band_lag1", "band_lag2"]);
    for s in &r.per_state {
        t.row(&[s.state.clone(), num(s.lag1), num(s.lag2), num(r.band_lag1), num(r.band_lag2)]);
    }
    t
}

fn xcorr_table(r: &XcorrReport) -> CsvTable {
    let mut t = CsvTable::new(&["state_a", "state_b", "distance_km", "correlation"]);
    for p in &r.pairs {
        t.row(&[p.state_a.clone(), p.state_b.clone(), num(p.distance_km), num(p.correlation)]);
    }
    t
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let spec = a.fit.model.spec()?;
    let data = load(&a.fit.data)?;
    if data.n_states() < 2 {
        return Err(Error::InvalidInput(format!(
            "diagnostics need at least 2 states for cross-correlations, got {}",
            data.n_states()
        )));
    }
    let m = fit_model(&data, &spec)?;
    let acf = residual_acf_report(&m.fit, a.scaled_residuals)?;
    let centroids = data
        .states()
        .iter()
        .map(|s| {
            s.centroid
                .map(|c| (s.code.clone(), c))
                .ok_or_else(|| Error::InvalidInput(format!("no centroid known for state {}", s.code)))
        })
        .collect::<Result<_>>()?;
    let xcorr = residual_xcorr_report(&m.fit, &centroids, a.scaled_residuals)?;
    let summary = json!({
        "spec": spec_json(&spec),
        "scaled_residuals": a.scaled_residuals,
        "n": acf.n,
        "acf_band_lag1": acf.band_lag1,
        "acf_band_lag2": acf.band_lag2,
        "pct_acf_lag1_within_band": acf.pct_within_lag1,
        "pct_acf_lag2_within_band": acf.pct_within_lag2,
        "pct_acf_lag1_above_band": acf.pct_above_lag1,
        "xcorr_band": xcorr.band,
        "n_pairs": xcorr.pairs.len(),
        "pct_xcorr_within_band": xcorr.pct_within_band,
    });

    let mut manifest = manifest_for("diagnose", Some(&a.fit.data));
    manifest.specs.push(spec_json(&spec));
    manifest.config["scaled_residuals"] = json!(a.scaled_residuals);
    manifest.config["plot_data"] = json!(a.plot_data);
    let mut out = Outputs::new(&a.fit.out, manifest);
    out.csv("acf.csv", &acf_table(&acf))?;
    out.csv("xcorr.csv", &xcorr_table(&xcorr))?;
    if a.plot_data {
        let mut p = CsvTable::new(&["x", "y", "lag", "band"]);
        for (i, s) in acf.per_state.iter().enumerate() {
            p.row(&[(i + 1).to_string(), num(s.lag1), "1".into(), num(acf.band_lag1)]);
        }
        for (i, s) in acf.per_state.iter().enumerate() {
            p.row(&[(i + 1).to_string(), num(s.lag2), "2".into(), num(acf.band_lag2)]);
        }
        out.csv("acf_plot.csv", &p)?;
        let mut p = CsvTable::new(&["x", "y", "band"]);
        for pair in &xcorr.pairs {
            p.row(&[num(pair.distance_km), num(pair.correlation), num(xcorr.band)]);
        }
        out.csv("xcorr_plot.csv", &p)?;
    }
    out.json("summary.json", &summary)?;
    out.finish()
}

pub fn cmd_effects(a: &FitArgs) -> Result<()> {
    let spec = a.model.spec()?;
    let data = load(&a.data)?;
    let d = state_effect_dispersion(&data, &spec)?;
    let mut t = CsvTable::new(&["state", "population", "effect_100beta"]);
    for e in &d.effects {
        t.row(&[e.state.clone(), num(e.mean_population), num(e.effect_100beta)]);
    }
    let summary = json!({
        "spec": spec_json(&spec),
        "n_states": d.effects.len(),
        "mean": d.mean,
        "sd": d.sd,
    });
    let mut manifest = manifest_for("effects", Some(&a.data));
    manifest.specs.push(spec_json(&spec));
    let mut out = Outputs::new(&a.out, manifest);
    out.csv("state_effects.csv", &t)?;
    out.json("summary.json", &summary)?;
    out.finish()
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let spec = a.model.spec()?;
    if spec.series != SeriesKey::Total {
        return Err(Error::InvalidInput("simulated panels only carry the 'total' series".into()));
    }
    let text = std::fs::read_to_string(&a.config).map_err(|source| Error::Io { path: a.config.clone(), source })?;
    let mut cfg: SimConfig = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", a.config.display())))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let s = run_monte_carlo(&cfg, &spec, a.reps)?;
    let mut t = CsvTable::new(&[
        "spec",
        "n_reps",
        "true_beta_u",
        "mean_estimate",
        "mean_bias",
        "sd_of_estimates",
        "mean_se_ols",
        "mean_se_clustered",
        "coverage_ols",
        "coverage_clustered",
        "rejection_rate_at_5pct_ols",
        "rejection_rate_at_5pct_clustered",
        "mean_acf_lag1",
        "seed",
    ]);
    t.row(&[
        spec.short_name(),
        s.n_reps.to_string(),
        num(s.true_beta_u),
        num(s.mean_estimate),
        num(s.mean_bias),
        num(s.sd_of_estimates),
        num(s.mean_se_ols),
        opt_num(s.mean_se_clustered),
        num(s.coverage_ols),
        opt_num(s.coverage_clustered),
        num(s.rejection_rate_at_5pct_ols),
        opt_num(s.rejection_rate_at_5pct_clustered),
        opt_num(s.mean_acf_lag1),
        s.seed.to_string(),
    ]);
    let mut manifest = manifest_for("simulate", None);
    manifest.inputs.push(a.config.clone());
    manifest.specs.push(spec_json(&spec));
    manifest.config = json!({ "sim": cfg, "reps": a.reps, "generator": s.generator });
    manifest.seed = Some(cfg.seed);
    let mut out = Outputs::new(&a.out, manifest);
    out.json("summary.json", &s)?;
    out.csv("summary.csv", &t)?;
    out.finish()
}
