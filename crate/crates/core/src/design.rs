//! Model specifications and design-matrix construction.
//!
//! Every model is a special case of
//!
//! ```text
//! M_it = bU U_it + bN N_t + bA A_it + bY_t + bS_i + bT_i t + e_it
//! ```
//!
//! where the model type fixes how mortality and the time-varying covariates
//! are transformed (levels, levels with state trends, first differences or
//! HP residuals) and the subtype fixes which unemployment terms and whether
//! year effects enter.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{PanelDataset, SeriesKey};
use crate::error::{Error, Result};
use crate::series::{self, Series, DEFAULT_HP_LAMBDA};

pub const INTERCEPT: &str = "intercept";
pub const STATE_UNEMPLOYMENT: &str = "state_unemployment";
pub const NATIONAL_UNEMPLOYMENT: &str = "national_unemployment";
pub const AGE_UNDER5: &str = "age_under5";
pub const AGE_OVER65: &str = "age_over65";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelType {
    /// Levels with state fixed effects.
    B,
    /// Levels with state fixed effects and state-specific linear trends.
    L,
    /// First differences with state fixed effects.
    D,
    /// HP-filter residuals; no state effects.
    HP,
}

impl ModelType {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelType::B => "B",
            ModelType::L => "L",
            ModelType::D => "D",
            ModelType::HP => "HP",
        }
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "B" => Ok(ModelType::B),
            "L" => Ok(ModelType::L),
            "D" => Ok(ModelType::D),
            "HP" => Ok(ModelType::HP),
            _ => Err(Error::InvalidInput(format!("unknown model type '{s}' (expected B, L, D or HP)"))),
        }
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Covariate subset: 1 = state unemployment + year effects, 2 = state
/// unemployment only, 3 = national unemployment only, 4 = both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Subtype {
    One,
    Two,
    Three,
    Four,
}

impl Subtype {
    pub fn number(self) -> u8 {
        match self {
            Subtype::One => 1,
            Subtype::Two => 2,
            Subtype::Three => 3,
            Subtype::Four => 4,
        }
    }

    pub fn has_state_unemployment(self) -> bool {
        !matches!(self, Subtype::Three)
    }

    /// National unemployment is a linear combination of year effects, so the
    /// two never appear together.
    pub fn has_national_unemployment(self) -> bool {
        matches!(self, Subtype::Three | Subtype::Four)
    }

    pub fn has_year_effects(self) -> bool {
        matches!(self, Subtype::One)
    }
}

impl TryFrom<u8> for Subtype {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Subtype::One),
            2 => Ok(Subtype::Two),
            3 => Ok(Subtype::Three),
            4 => Ok(Subtype::Four),
            _ => Err(Error::InvalidInput(format!("subtype must be 1-4, got {v}"))),
        }
    }
}

impl From<Subtype> for u8 {
    fn from(s: Subtype) -> u8 {
        s.number()
    }
}

/// Row weights: analytic weights equal to population (rows scaled by
/// sqrt(population)), or weights equal to sqrt(population).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightScheme {
    #[default]
    #[serde(rename = "pop")]
    Pop,
    #[serde(rename = "sqrt-pop")]
    SqrtPop,
}

impl WeightScheme {
    fn weight(self, population: f64) -> f64 {
        match self {
            WeightScheme::Pop => population,
            WeightScheme::SqrtPop => population.sqrt(),
        }
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pop" => Ok(WeightScheme::Pop),
            "sqrt-pop" => Ok(WeightScheme::SqrtPop),
            _ => Err(Error::InvalidInput(format!("unknown weight scheme '{s}' (expected pop or sqrt-pop)"))),
        }
    }
}

fn default_lambda() -> f64 {
    DEFAULT_HP_LAMBDA
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_type: ModelType,
    pub subtype: Subtype,
    pub series: SeriesKey,
    #[serde(default = "default_lambda")]
    pub hp_lambda: f64,
    #[serde(default = "default_true")]
    pub apply_icd_correction: bool,
    #[serde(default)]
    pub weights: WeightScheme,
}

impl ModelSpec {
    pub fn new(model_type: ModelType, subtype: Subtype, series: SeriesKey) -> Self {
        Self {
            model_type,
            subtype,
            series,
            hp_lambda: DEFAULT_HP_LAMBDA,
            apply_icd_correction: true,
            weights: WeightScheme::Pop,
        }
    }

    /// Parses the short form used in tables, e.g. `B1` or `HP4`.
    pub fn parse_short(code: &str, series: SeriesKey) -> Result<Self> {
        let code = code.trim();
        let split = code
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| Error::InvalidInput(format!("model code '{code}' lacks a subtype digit")))?;
        let (ty, sub) = code.split_at(split);
        let sub: u8 = sub
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad subtype in model code '{code}'")))?;
        Ok(Self::new(ty.parse()?, Subtype::try_from(sub)?, series))
    }

    pub fn short_name(&self) -> String {
        format!("{}{}", self.model_type, self.subtype.number())
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_type == ModelType::HP && !(self.hp_lambda > 0.0 && self.hp_lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("HP lambda must be positive, got {}", self.hp_lambda)));
        }
        Ok(())
    }
}

/// Which state and which (transformed) year serve as omitted dummy
/// categories. Indices refer to the panel's state order and to the row years
/// of the transformed panel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReferenceCategories {
    pub state: usize,
    pub year: usize,
}

/// Identifies the panel cell a design row came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowKey {
    pub state: String,
    pub year: i32,
}

/// Response, regressors, analytic weights and cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub response: Vec<f64>,
    pub columns: DMatrix<f64>,
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
    /// Cluster index per row (the state).
    pub clusters: Vec<usize>,
    pub rows: Vec<RowKey>,
}

impl DesignMatrix {
    /// Assembles a design from raw parts; rows get synthetic keys.
    pub fn new(
        response: Vec<f64>,
        columns: DMatrix<f64>,
        labels: Vec<String>,
        weights: Vec<f64>,
        clusters: Vec<usize>,
    ) -> Result<Self> {
        let rows = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| RowKey { state: format!("g{c}"), year: i as i32 })
            .collect();
        let d = Self { response, columns, labels, weights, clusters, rows };
        d.validate()?;
        Ok(d)
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn n_clusters(&self) -> usize {
        let mut ids = self.clusters.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.response.len();
        if n == 0 {
            return Err(Error::InvalidInput("design has no rows".into()));
        }
        for len in [self.columns.nrows(), self.weights.len(), self.clusters.len(), self.rows.len()] {
            if len != n {
                return Err(Error::LengthMismatch { left: n, right: len });
            }
        }
        if self.labels.len() != self.columns.ncols() {
            return Err(Error::LengthMismatch { left: self.columns.ncols(), right: self.labels.len() });
        }
        for (i, l) in self.labels.iter().enumerate() {
            if self.labels[..i].contains(l) {
                return Err(Error::InvalidInput(format!("duplicate column label '{l}'")));
            }
        }
        if let Some(i) = self.weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidInput(format!("weight at row {i} must be positive")));
        }
        if self.response.iter().chain(self.columns.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Identity for B and L, first differences for D, HP residuals for HP.
pub fn transform_series_for_type(x: &Series, model_type: ModelType, hp_lambda: f64) -> Result<Series> {
    match model_type {
        ModelType::B | ModelType::L => Ok(x.clone()),
        ModelType::D => series::difference(x),
        ModelType::HP => Ok(series::hp_filter(x, hp_lambda)?.residual),
    }
}

pub fn build_design(data: &PanelDataset, spec: &ModelSpec) -> Result<DesignMatrix> {
    build_design_with(data, spec, ReferenceCategories::default())
}

/// Builds the design with explicit reference categories for the state and
/// year dummies.
pub fn build_design_with(
    data: &PanelDataset,
    spec: &ModelSpec,
    reference: ReferenceCategories,
) -> Result<DesignMatrix> {
    spec.validate()?;
    if !data.has_series(spec.series) {
        return Err(Error::InvalidInput(format!("panel has no '{}' mortality series", spec.series)));
    }
    let n_states = data.n_states();
    let ty = spec.model_type;
    let lambda = spec.hp_lambda;
    let tf = |s: &Series| transform_series_for_type(s, ty, lambda);

    let national = tf(&data.national_unemployment_series())?;
    let row_years: Vec<i32> = (national.start_year()..=national.end_year()).collect();
    let t_rows = row_years.len();
    if reference.state >= n_states || reference.year >= t_rows {
        return Err(Error::InvalidInput("reference category out of range".into()));
    }

    let with_age = !spec.series.is_age_specific();
    let sub = spec.subtype;
    let state_effects = matches!(ty, ModelType::B | ModelType::L | ModelType::D) && n_states > 1;
    let trends = ty == ModelType::L;
    // With year effects the sum of all state trends lies in their span.
    let drop_reference_trend = trends && sub.has_year_effects() && n_states > 1;

    let mut labels: Vec<String> = vec![INTERCEPT.into()];
    if sub.has_state_unemployment() {
        labels.push(STATE_UNEMPLOYMENT.into());
    }
    if sub.has_national_unemployment() {
        labels.push(NATIONAL_UNEMPLOYMENT.into());
    }
    if with_age {
        labels.push(AGE_UNDER5.into());
        labels.push(AGE_OVER65.into());
    }
    let state_col0 = labels.len();
    if state_effects {
        for s in data.states().iter().filter(|s| s.id != reference.state) {
            labels.push(format!("state:{}", s.code));
        }
    }
    let trend_col0 = labels.len();
    if trends {
        for s in data.states() {
            if !(drop_reference_trend && s.id == reference.state) {
                labels.push(format!("trend:{}", s.code));
            }
        }
    }
    let year_col0 = labels.len();
    if sub.has_year_effects() {
        for (t, y) in row_years.iter().enumerate() {
            if t != reference.year {
                labels.push(format!("year:{y}"));
            }
        }
    }

    let n = n_states * t_rows;
    let k = labels.len();
    let mut x = DMatrix::<f64>::zeros(n, k);
    let mut response = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut clusters = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let t_center = (t_rows as f64 - 1.0) / 2.0;

    for st in data.states() {
        let s = st.id;
        let y = tf(&data.log_mortality_series(spec.series, s, spec.apply_icd_correction)?)?;
        let u = tf(&data.state_unemployment_series(s))?;
        let under5 = tf(&data.prop_under5_series(s))?;
        let over65 = tf(&data.prop_over65_series(s))?;
        // D rows are weighted by the base year of each increment.
        let pop = data.population_series(s);
        for t in 0..t_rows {
            let r = s * t_rows + t;
            let mut c = 0;
            x[(r, c)] = 1.0;
            c += 1;
            if sub.has_state_unemployment() {
                x[(r, c)] = u.values()[t];
                c += 1;
            }
            if sub.has_national_unemployment() {
                x[(r, c)] = national.values()[t];
                c += 1;
            }
            if with_age {
                x[(r, c)] = under5.values()[t];
                x[(r, c + 1)] = over65.values()[t];
            }
            if state_effects && s != reference.state {
                let offset = if s > reference.state { s - 1 } else { s };
                x[(r, state_col0 + offset)] = 1.0;
            }
            if trends && !(drop_reference_trend && s == reference.state) {
                let offset = if drop_reference_trend && s > reference.state { s - 1 } else { s };
                x[(r, trend_col0 + offset)] = t as f64 - t_center;
            }
            if sub.has_year_effects() && t != reference.year {
                let offset = if t > reference.year { t - 1 } else { t };
                x[(r, year_col0 + offset)] = 1.0;
            }
            response.push(y.values()[t]);
            weights.push(spec.weights.weight(pop.values()[t]));
            clusters.push(s);
            rows.push(RowKey { state: st.code.clone(), year: row_years[t] });
        }
    }

    let d = DesignMatrix { response, columns: x, labels, weights, clusters, rows };
    d.validate()?;
    if let Some(cols) = crate::estim::rank_deficient_columns(&d.columns, &d.labels) {
        return Err(Error::RankDeficient { columns: cols });
    }
    Ok(d)
}


#[cfg(test)]
pub(crate) use tests::toy_panel;
