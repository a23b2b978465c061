//! Estimators shared by the efficacy metrics and the simulation studies.

pub mod lmm;
pub mod logistic;
pub mod ols;
pub mod optim;
pub mod wald;

pub use lmm::{fit_lmm, LmmOptions, MixedModelFit, PredictionRule, RemlProblem};
pub use logistic::{fit_multinomial_logistic, MultinomialLogit, DEFAULT_RIDGE};
pub use ols::{fit_ols, fit_ols_fe, LinearModelFit, OlsFeFit};
pub use wald::{z_critical, WaldInterval};
