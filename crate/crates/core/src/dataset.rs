//! Balanced state-by-year panel: mortality rates by category, state and
//! national unemployment, population and age structure.
//!
//! Input is three CSV files (see [`load_panel`]); every parse or consistency
//! failure is reported with the file and line it came from.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{LatLon, Series};

/// State code used for national rows in the unemployment file.
pub const NATIONAL_CODE: &str = "US";

/// Last year before the ICD-9 to ICD-10 coding change.
pub const ICD_TRANSITION_YEAR: i32 = 1998;

const CENTROIDS_CSV: &str = include_str!("../data/centroids.csv");

/// Mortality category: total, one of three adult age groups, or one of eight
/// causes of death.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeriesKey {
    #[serde(rename = "total")]
    Total,
    #[serde(rename = "age20-44")]
    Age20To44,
    #[serde(rename = "age45-64")]
    Age45To64,
    #[serde(rename = "age65plus")]
    Age65Plus,
    #[serde(rename = "cardio")]
    Cardiovascular,
    #[serde(rename = "ischemic")]
    Ischemic,
    #[serde(rename = "cancer")]
    Cancer,
    #[serde(rename = "respiratory")]
    Respiratory,
    #[serde(rename = "infectious")]
    OtherInfectious,
    #[serde(rename = "traffic")]
    Traffic,
    #[serde(rename = "suicide")]
    Suicide,
    #[serde(rename = "homicide")]
    Homicide,
}

impl SeriesKey {
    pub const ALL: [SeriesKey; 12] = [
        SeriesKey::Total,
        SeriesKey::Age20To44,
        SeriesKey::Age45To64,
        SeriesKey::Age65Plus,
        SeriesKey::Cardiovascular,
        SeriesKey::Ischemic,
        SeriesKey::Cancer,
        SeriesKey::Respiratory,
        SeriesKey::OtherInfectious,
        SeriesKey::Traffic,
        SeriesKey::Suicide,
        SeriesKey::Homicide,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SeriesKey::Total => "total",
            SeriesKey::Age20To44 => "age20-44",
            SeriesKey::Age45To64 => "age45-64",
            SeriesKey::Age65Plus => "age65plus",
            SeriesKey::Cardiovascular => "cardio",
            SeriesKey::Ischemic => "ischemic",
            SeriesKey::Cancer => "cancer",
            SeriesKey::Respiratory => "respiratory",
            SeriesKey::OtherInfectious => "infectious",
            SeriesKey::Traffic => "traffic",
            SeriesKey::Suicide => "suicide",
            SeriesKey::Homicide => "homicide",
        }
    }

    /// Age-specific rates are modelled without age-structure covariates.
    pub fn is_age_specific(self) -> bool {
        matches!(self, SeriesKey::Age20To44 | SeriesKey::Age45To64 | SeriesKey::Age65Plus)
    }

    /// Categories affected by the coding change between 1998 and 1999.
    pub fn has_icd_jump(self) -> bool {
        matches!(self, SeriesKey::Ischemic | SeriesKey::Cancer)
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeriesKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SeriesKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mortality category '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateInfo {
    pub id: usize,
    pub code: String,
    pub centroid: Option<LatLon>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Fill missing national unemployment with the population-weighted mean
    /// of state rates instead of failing.
    pub national_fallback: bool,
}

/// Balanced panel. Per-cell vectors are stored state-major:
/// index `state * n_years + (year - first_year)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    states: Vec<StateInfo>,
    first_year: i32,
    n_years: usize,
    mortality: BTreeMap<SeriesKey, Vec<f64>>,
    state_unemployment: Vec<f64>,
    national_unemployment: Vec<f64>,
    population: Vec<f64>,
    prop_under5: Vec<f64>,
    prop_over65: Vec<f64>,
}

/// Column data used to assemble a [`PanelDataset`] in memory.
#[derive(Debug, Clone, Default)]
pub struct PanelParts {
    pub state_codes: Vec<String>,
    pub first_year: i32,
    pub n_years: usize,
    pub mortality: BTreeMap<SeriesKey, Vec<f64>>,
    pub state_unemployment: Vec<f64>,
    pub national_unemployment: Vec<f64>,
    pub population: Vec<f64>,
    pub prop_under5: Vec<f64>,
    pub prop_over65: Vec<f64>,
}

impl PanelDataset {
    pub fn from_parts(parts: PanelParts) -> Result<Self> {
        let PanelParts {
            state_codes,
            first_year,
            n_years,
            mortality,
            state_unemployment,
            national_unemployment,
            population,
            prop_under5,
            prop_over65,
        } = parts;
        if state_codes.is_empty() || n_years == 0 {
            return Err(Error::InvalidInput("panel needs at least one state and one year".into()));
        }
        let mut seen = BTreeSet::new();
        for code in &state_codes {
            if !seen.insert(code.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate state code {code}")));
            }
        }
        if mortality.is_empty() {
            return Err(Error::InvalidInput("panel has no mortality series".into()));
        }
        let cells = state_codes.len() * n_years;
        let check_len = |name: &str, len: usize, want: usize| {
            if len == want {
                Ok(())
            } else {
                Err(Error::Unbalanced(format!("{name} has {len} cells, expected {want}")))
            }
        };
        for (key, v) in &mortality {
            check_len(&format!("mortality {key}"), v.len(), cells)?;
            if let Some(i) = v.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "mortality {key} rate must be positive at cell {i}"
                )));
            }
        }
        check_len("state unemployment", state_unemployment.len(), cells)?;
        check_len("national unemployment", national_unemployment.len(), n_years)?;
        check_len("population", population.len(), cells)?;
        check_len("prop_under5", prop_under5.len(), cells)?;
        check_len("prop_over65", prop_over65.len(), cells)?;
        if let Some(i) = state_unemployment
            .iter()
            .chain(&national_unemployment)
            .position(|u| !u.is_finite())
        {
            return Err(Error::InvalidInput(format!("non-finite unemployment at cell {i}")));
        }
        if let Some(i) = population.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidInput(format!("population must be positive at cell {i}")));
        }
        for i in 0..cells {
            let (a, b) = (prop_under5[i], prop_over65[i]);
            if !((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) && a + b < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "age proportions ({a}, {b}) invalid at cell {i}"
                )));
            }
        }
        let centroids = state_centroids();
        let states = state_codes
            .into_iter()
            .enumerate()
            .map(|(id, code)| StateInfo { id, centroid: centroids.get(&code).copied(), code })
            .collect();
        Ok(Self {
            states,
            first_year,
            n_years,
            mortality,
            state_unemployment,
            national_unemployment,
            population,
            prop_under5,
            prop_over65,
        })
    }

    pub fn states(&self) -> &[StateInfo] {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.first_year..=self.first_year + self.n_years as i32 - 1
    }

    pub fn series_keys(&self) -> impl Iterator<Item = SeriesKey> + '_ {
        self.mortality.keys().copied()
    }

    pub fn has_series(&self, key: SeriesKey) -> bool {
        self.mortality.contains_key(&key)
    }

    pub fn state_index(&self, code: &str) -> Option<usize> {
        self.states.iter().position(|s| s.code == code)
    }

    fn cell(&self, state: usize, t: usize) -> usize {
        state * self.n_years + t
    }

    fn state_slice<'a>(&self, v: &'a [f64], state: usize) -> &'a [f64] {
        &v[self.cell(state, 0)..self.cell(state, 0) + self.n_years]
    }

    fn series_of(&self, v: &[f64], state: usize) -> Series {
        Series::new(self.state_slice(v, state).to_vec(), self.first_year)
            .expect("panel cells are validated finite")
    }

    /// Mortality rate (deaths per 1000 per year).
    pub fn mortality(&self, key: SeriesKey, state: usize, year: i32) -> Option<f64> {
        let t = self.year_index(year)?;
        self.mortality.get(&key).map(|v| v[self.cell(state, t)])
    }

    pub fn mortality_series(&self, key: SeriesKey, state: usize) -> Result<Series> {
        let v = self
            .mortality
            .get(&key)
            .ok_or_else(|| Error::InvalidInput(format!("panel has no '{key}' mortality series")))?;
        Ok(self.series_of(v, state))
    }

    /// Log mortality for one state, with the coding-change correction applied
    /// when requested and the series is affected and spans the transition.
    pub fn log_mortality_series(&self, key: SeriesKey, state: usize, icd_correct: bool) -> Result<Series> {
        let rates = self.mortality_series(key, state)?;
        let logs = Series::new(rates.values().iter().map(|r| r.ln()).collect(), self.first_year)?;
        let spans = self.year_index(ICD_TRANSITION_YEAR).is_some()
            && self.year_index(ICD_TRANSITION_YEAR + 1).is_some();
        if icd_correct && key.has_icd_jump() && spans && logs.len() >= 3 {
            icd_jump_correct(&logs, ICD_TRANSITION_YEAR)
        } else {
            Ok(logs)
        }
    }

    pub fn state_unemployment_series(&self, state: usize) -> Series {
        self.series_of(&self.state_unemployment, state)
    }

    pub fn national_unemployment_series(&self) -> Series {
        Series::new(self.national_unemployment.clone(), self.first_year)
            .expect("panel cells are validated finite")
    }

    pub fn population_series(&self, state: usize) -> Series {
        self.series_of(&self.population, state)
    }

    pub fn prop_under5_series(&self, state: usize) -> Series {
        self.series_of(&self.prop_under5, state)
    }

    pub fn prop_over65_series(&self, state: usize) -> Series {
        self.series_of(&self.prop_over65, state)
    }

    pub fn population(&self, state: usize, year: i32) -> Option<f64> {
        self.year_index(year).map(|t| self.population[self.cell(state, t)])
    }

    pub fn mean_population(&self, state: usize) -> f64 {
        let s = self.state_slice(&self.population, state);
        s.iter().sum::<f64>() / s.len() as f64
    }

    fn year_index(&self, year: i32) -> Option<usize> {
        let t = year.checked_sub(self.first_year)?;
        (t >= 0 && (t as usize) < self.n_years).then_some(t as usize)
    }

    /// Restricts the panel to the given states, in the given order.
    pub fn subset_states(&self, states: &[usize]) -> Result<Self> {
        if let Some(&bad) = states.iter().find(|&&s| s >= self.n_states()) {
            return Err(Error::InvalidInput(format!("state index {bad} out of range")));
        }
        let pick = |v: &[f64]| -> Vec<f64> {
            states.iter().flat_map(|&s| self.state_slice(v, s).iter().copied()).collect()
        };
        Self::from_parts(PanelParts {
            state_codes: states.iter().map(|&s| self.states[s].code.clone()).collect(),
            first_year: self.first_year,
            n_years: self.n_years,
            mortality: self.mortality.iter().map(|(k, v)| (*k, pick(v))).collect(),
            state_unemployment: pick(&self.state_unemployment),
            national_unemployment: self.national_unemployment.clone(),
            population: pick(&self.population),
            prop_under5: pick(&self.prop_under5),
            prop_over65: pick(&self.prop_over65),
        })
    }
}

#[derive(Debug, Deserialize)]
struct MortalityRow {
    state: String,
    year: i32,
    category: String,
    rate: f64,
}

#[derive(Debug, Deserialize)]
struct UnemploymentRow {
    state: String,
    year: i32,
    rate: f64,
}

#[derive(Debug, Deserialize)]
struct AgeRow {
    state: String,
    year: i32,
    prop_under5: f64,
    prop_over65: f64,
    population: f64,
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<(u64, T)>> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let data_err = |line: u64, message: String| Error::Data { path: path.to_path_buf(), line, message };
    let headers = rdr.headers().map_err(|e| data_err(1, e.to_string()))?.clone();
    if headers.iter().ne(header.iter().copied()) {
        let got: Vec<&str> = headers.iter().collect();
        return Err(data_err(1, format!("expected header '{}', found '{}'", header.join(","), got.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: T = rec.deserialize(Some(&headers)).map_err(|e| data_err(line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

fn check_code(path: &Path, line: u64, code: &str) -> Result<()> {
    if code.len() == 2 && code.chars().all(|c| c.is_ascii_uppercase()) {
        Ok(())
    } else {
        Err(Error::Data {
            path: path.to_path_buf(),
            line,
            message: format!("'{code}' is not a two-letter state code"),
        })
    }
}

/// Loads a panel from `mortality.csv`, `unemployment.csv` and
/// `agestructure.csv`, failing on missing national unemployment.
pub fn load_panel(mortality_csv: &Path, unemployment_csv: &Path, agestructure_csv: &Path) -> Result<PanelDataset> {
    load_panel_with(mortality_csv, unemployment_csv, agestructure_csv, LoadOptions::default())
}

pub fn load_panel_with(
    mortality_csv: &Path,
    unemployment_csv: &Path,
    agestructure_csv: &Path,
    opts: LoadOptions,
) -> Result<PanelDataset> {
    let data_err = |path: &Path, line: u64, message: String| Error::Data { path: path.to_path_buf(), line, message };

    let mort_rows: Vec<(u64, MortalityRow)> = read_rows(mortality_csv, &["state", "year", "category", "rate"])?;
    let mut mort_cells: HashMap<(SeriesKey, String, i32), f64> = HashMap::new();
    let mut codes = BTreeSet::new();
    let mut years = BTreeSet::new();
    for (line, row) in mort_rows {
        if row.state == NATIONAL_CODE {
            continue;
        }
        check_code(mortality_csv, line, &row.state)?;
        let key: SeriesKey = row
            .category
            .parse()
            .map_err(|e: Error| data_err(mortality_csv, line, e.to_string()))?;
        if !(row.rate.is_finite() && row.rate > 0.0) {
            return Err(data_err(mortality_csv, line, format!("rate must be positive, got {}", row.rate)));
        }
        codes.insert(row.state.clone());
        years.insert(row.year);
        if mort_cells.insert((key, row.state.clone(), row.year), row.rate).is_some() {
            return Err(data_err(
                mortality_csv,
                line,
                format!("duplicate cell ({}, {}, {key})", row.state, row.year),
            ));
        }
    }
    let (Some(&first_year), Some(&last_year)) = (years.first(), years.last()) else {
        return Err(data_err(mortality_csv, 2, "no mortality rows".into()));
    };
    if let Some(gap) = (first_year..=last_year).find(|y| !years.contains(y)) {
        return Err(Error::Unbalanced(format!(
            "{}: years are not contiguous, {gap} is missing",
            mortality_csv.display()
        )));
    }
    let n_years = (last_year - first_year + 1) as usize;
    let codes: Vec<String> = codes.into_iter().collect();
    let state_pos: HashMap<&str, usize> = codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let cells = codes.len() * n_years;
    let keys: BTreeSet<SeriesKey> = mort_cells.keys().map(|k| k.0).collect();
    let mut mortality = BTreeMap::new();
    for key in keys {
        let mut v = Vec::with_capacity(cells);
        for code in &codes {
            for year in first_year..=last_year {
                let rate = mort_cells.get(&(key, code.clone(), year)).ok_or_else(|| {
                    Error::Unbalanced(format!(
                        "{}: missing {key} mortality for {code} {year}",
                        mortality_csv.display()
                    ))
                })?;
                v.push(*rate);
            }
        }
        mortality.insert(key, v);
    }

    let locate = |path: &Path, line: u64, code: &str, year: i32| -> Result<usize> {
        let s = *state_pos
            .get(code)
            .ok_or_else(|| data_err(path, line, format!("state {code} does not appear in the mortality file")))?;
        if !(first_year..=last_year).contains(&year) {
            return Err(data_err(path, line, format!("year {year} outside {first_year}-{last_year}")));
        }
        Ok(s * n_years + (year - first_year) as usize)
    };

    let mut state_unemp = vec![None; cells];
    let mut national = vec![None; n_years];
    for (line, row) in read_rows::<UnemploymentRow>(unemployment_csv, &["state", "year", "rate"])? {
        if !(row.rate.is_finite() && row.rate >= 0.0) {
            return Err(data_err(unemployment_csv, line, format!("rate must be non-negative, got {}", row.rate)));
        }
        let slot = if row.state == NATIONAL_CODE {
            if !(first_year..=last_year).contains(&row.year) {
                return Err(data_err(unemployment_csv, line, format!("year {} outside panel", row.year)));
            }
            &mut national[(row.year - first_year) as usize]
        } else {
            check_code(unemployment_csv, line, &row.state)?;
            &mut state_unemp[locate(unemployment_csv, line, &row.state, row.year)?]
        };
        if slot.replace(row.rate).is_some() {
            return Err(data_err(unemployment_csv, line, format!("duplicate cell ({}, {})", row.state, row.year)));
        }
    }

    let mut age = vec![None; cells];
    for (line, row) in read_rows::<AgeRow>(agestructure_csv, &["state", "year", "prop_under5", "prop_over65", "population"])? {
        check_code(agestructure_csv, line, &row.state)?;
        let idx = locate(agestructure_csv, line, &row.state, row.year)?;
        if !(row.population.is_finite() && row.population > 0.0) {
            return Err(data_err(agestructure_csv, line, format!("population must be positive, got {}", row.population)));
        }
        let props_ok = [row.prop_under5, row.prop_over65].iter().all(|p| (0.0..=1.0).contains(p))
            && row.prop_under5 + row.prop_over65 < 1.0;
        if !props_ok {
            return Err(data_err(
                agestructure_csv,
                line,
                format!("age proportions ({}, {}) must lie in [0,1] and sum below 1", row.prop_under5, row.prop_over65),
            ));
        }
        if age[idx].replace((row.prop_under5, row.prop_over65, row.population)).is_some() {
            return Err(data_err(agestructure_csv, line, format!("duplicate cell ({}, {})", row.state, row.year)));
        }
    }

    let missing = |path: &Path, idx: usize| {
        Error::Unbalanced(format!(
            "{}: missing cell for {} {}",
            path.display(),
            codes[idx / n_years],
            first_year + (idx % n_years) as i32
        ))
    };
    let mut state_unemployment = Vec::with_capacity(cells);
    for (i, u) in state_unemp.iter().enumerate() {
        state_unemployment.push(u.ok_or_else(|| missing(unemployment_csv, i))?);
    }
    let (mut population, mut prop_under5, mut prop_over65) = (vec![], vec![], vec![]);
    for (i, a) in age.iter().enumerate() {
        let (u5, o65, pop) = a.ok_or_else(|| missing(agestructure_csv, i))?;
        prop_under5.push(u5);
        prop_over65.push(o65);
        population.push(pop);
    }
    let mut national_unemployment = Vec::with_capacity(n_years);
    for (t, n) in national.iter().enumerate() {
        let year = first_year + t as i32;
        match n {
            Some(v) => national_unemployment.push(*v),
            None if opts.national_fallback => {
                let (mut num, mut den) = (0.0, 0.0);
                for s in 0..codes.len() {
                    let i = s * n_years + t;
                    num += population[i] * state_unemployment[i];
                    den += population[i];
                }
                national_unemployment.push(num / den);
            }
            None => {
                return Err(Error::Unbalanced(format!(
                    "{}: missing national ({NATIONAL_CODE}) unemployment for {year}",
                    unemployment_csv.display()
                )))
            }
        }
    }

    PanelDataset::from_parts(PanelParts {
        state_codes: codes,
        first_year,
        n_years,
        mortality,
        state_unemployment,
        national_unemployment,
        population,
        prop_under5,
        prop_over65,
    })
}

/// Paths written by [`save_panel`].
#[derive(Debug, Clone)]
pub struct PanelFiles {
    pub mortality: PathBuf,
    pub unemployment: PathBuf,
    pub agestructure: PathBuf,
}

/// Writes the panel in the same three-file layout [`load_panel`] reads.
/// Numbers are written in shortest round-trip form.
pub fn save_panel(data: &PanelDataset, dir: &Path) -> Result<PanelFiles> {
    let files = PanelFiles {
        mortality: dir.join("mortality.csv"),
        unemployment: dir.join("unemployment.csv"),
        agestructure: dir.join("agestructure.csv"),
    };
    let years: Vec<i32> = data.years().collect();

    let mut mort = String::from("state,year,category,rate\n");
    for (key, v) in &data.mortality {
        for st in &data.states {
            for (t, year) in years.iter().enumerate() {
                mort.push_str(&format!("{},{year},{key},{}\n", st.code, v[data.cell(st.id, t)]));
            }
        }
    }
    let mut unemp = String::from("state,year,rate\n");
    for st in &data.states {
        for (t, year) in years.iter().enumerate() {
            unemp.push_str(&format!("{},{year},{}\n", st.code, data.state_unemployment[data.cell(st.id, t)]));
        }
    }
    for (t, year) in years.iter().enumerate() {
        unemp.push_str(&format!("{NATIONAL_CODE},{year},{}\n", data.national_unemployment[t]));
    }
    let mut age = String::from("state,year,prop_under5,prop_over65,population\n");
    for st in &data.states {
        for (t, year) in years.iter().enumerate() {
            let i = data.cell(st.id, t);
            age.push_str(&format!(
                "{},{year},{},{},{}\n",
                st.code, data.prop_under5[i], data.prop_over65[i], data.population[i]
            ));
        }
    }
    crate::output::write_atomic(&files.mortality, mort.as_bytes())?;
    crate::output::write_atomic(&files.unemployment, unemp.as_bytes())?;
    crate::output::write_atomic(&files.agestructure, age.as_bytes())?;
    Ok(files)
}

/// Replaces the log-increment from `jump_from_year` to the next year by the
/// mean of all other increments, shifting later levels so that every other
/// increment is kept.
pub fn icd_jump_correct(logm: &Series, jump_from_year: i32) -> Result<Series> {
    let n = logm.len();
    if n < 3 {
        return Err(Error::TooShort { needed: 3, got: n });
    }
    if jump_from_year < logm.start_year() || jump_from_year >= logm.end_year() {
        return Err(Error::InvalidInput(format!(
            "jump year {jump_from_year} needs both it and the next year inside {}-{}",
            logm.start_year(),
            logm.end_year()
        )));
    }
    let j = (jump_from_year - logm.start_year()) as usize;
    let x = logm.values();
    let jump = x[j + 1] - x[j];
    let others: f64 = x.windows(2).enumerate().filter(|(i, _)| *i != j).map(|(_, w)| w[1] - w[0]).sum();
    let shift = others / (n - 2) as f64 - jump;
    let out = x.iter().enumerate().map(|(i, v)| if i > j { v + shift } else { *v }).collect();
    Series::new(out, logm.start_year())
}

/// Index `t` of the largest absolute increment `|x_{t+1} - x_t|`, earliest on ties.
pub fn detect_largest_jump(logm: &Series) -> Result<usize> {
    if logm.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: logm.len() });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (t, w) in logm.values().windows(2).enumerate() {
        let d = (w[1] - w[0]).abs();
        if d > best.1 {
            best = (t, d);
        }
    }
    Ok(best.0)
}

/// Geographic centres of the 50 states, keyed by two-letter code.
pub fn state_centroids() -> &'static BTreeMap<String, LatLon> {
    static TABLE: OnceLock<BTreeMap<String, LatLon>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rdr = csv::Reader::from_reader(CENTROIDS_CSV.as_bytes());
        rdr.deserialize::<(String, f64, f64)>()
            .map(|r| {
                let (code, lat, lon) = r.expect("shipped centroid table is well formed");
                (code, LatLon::new(lat, lon).expect("shipped centroid in range"))
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn icd_hand_example() {
        let x = Series::new(vec![0.0, 1.0, 5.0, 6.0], 0).unwrap();
        assert_eq!(icd_jump_correct(&x, 1).unwrap().values(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn icd_fixed_point_and_errors() {
        let x = Series::new(vec![0.5, 1.5, 2.5, 3.5, 4.5], 1996).unwrap();
        assert_eq!(icd_jump_correct(&x, 1998).unwrap(), x);
        assert!(icd_jump_correct(&Series::new(vec![0.0, 1.0], 1998).unwrap(), 1998).is_err());
        assert!(icd_jump_correct(&x, 2000).is_err());
        assert!(icd_jump_correct(&x, 1995).is_err());
    }

    #[test]
    fn largest_jump_examples() {
        let s = |v: &[f64]| Series::from_values(v.to_vec()).unwrap();
        assert_eq!(detect_largest_jump(&s(&[0.0, 1.0, 5.0, 6.0])).unwrap(), 1);
        assert_eq!(detect_largest_jump(&s(&[0.0, 2.0, 3.0])).unwrap(), 0);
        assert_eq!(detect_largest_jump(&s(&[1.0, 2.0, 3.0, 4.0])).unwrap(), 0);
        assert!(detect_largest_jump(&s(&[1.0])).is_err());
    }

    #[test]
    fn centroid_table() {
        let c = state_centroids();
        assert_eq!(c.len(), 50);
        let hi = c["HI"];
        assert!((20.0..=22.0).contains(&hi.lat));
        assert!(c.get("ZZ").is_none());
        assert!(c.get("DC").is_none());
    }

    #[test]
    fn series_key_spellings_round_trip() {
        for k in SeriesKey::ALL {
            assert_eq!(k.as_str().parse::<SeriesKey>().unwrap(), k);
        }
        assert!("age65+".parse::<SeriesKey>().is_err());
        assert_eq!(SeriesKey::ALL.iter().filter(|k| k.is_age_specific()).count(), 3);
    }

    proptest! {
        #[test]
        fn icd_preserves_other_increments(
            x in prop::collection::vec(-3.0f64..3.0, 3..30),
            pick in 0usize..1000,
        ) {
            let s = Series::new(x.clone(), 1980).unwrap();
            let j = pick % (x.len() - 1);
            let out = icd_jump_correct(&s, 1980 + j as i32).unwrap();
            let y = out.values();
            prop_assert_eq!(y[0], x[0]);
            let mut others = 0.0;
            for t in 0..x.len() - 1 {
                if t != j {
                    prop_assert!(((y[t + 1] - y[t]) - (x[t + 1] - x[t])).abs() < 1e-12);
                    others += x[t + 1] - x[t];
                }
            }
            let mean = others / (x.len() - 2) as f64;
            prop_assert!(((y[j + 1] - y[j]) - mean).abs() < 1e-12);
        }
    }
}
