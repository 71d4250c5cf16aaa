//! Panel regressions relating state-level mortality to unemployment.
//!
//! The crate covers the whole pipeline: loading a balanced state-by-year
//! panel ([`dataset`]), building the four model types (basic, linear trend,
//! differenced, HP-detrended) with their covariate subtypes ([`design`]),
//! weighted least squares with OLS and state-clustered covariances plus AIC
//! ([`estim`]), residual diagnostics ([`diag`]) and a Monte Carlo harness for
//! checking bias and coverage on synthetic panels ([`mc`]).

pub mod cli;
pub mod dataset;
pub mod design;
pub mod diag;
pub mod error;
pub mod estim;
pub mod mc;
pub mod output;
pub mod series;

pub use dataset::{PanelDataset, SeriesKey, StateInfo};
pub use design::{DesignMatrix, ModelSpec, ModelType, Subtype, WeightScheme};
pub use error::{Error, Result};
pub use estim::{EffectReport, FitResult};
pub use series::{HpDecomposition, Series};
