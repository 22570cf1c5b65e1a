//! Measurements on solved instances: dyadic growth traces and fits, Dini
//! sums, Campanato-type Hölder fits, free-boundary extraction, the repelling
//! distance and the flatness threshold.

mod boundary;
mod flatness;
mod growth;
mod holder;

pub use boundary::{
    extract_free_boundary, repelling_distance, BoundaryStatus, FreeBoundary, FreeBoundarySummary,
    RepellingReport,
};
pub use flatness::{
    flatness_experiment, FlatnessInstance, FlatnessOptions, FlatnessProbe, FlatnessReport,
    MemberOutcome,
};
pub use growth::{
    dini_sum, dyadic_sup_trace, fit_growth_exponent, fit_growth_exponent_window, growth_target,
    successive_ratio_check, DiniReport, DyadicTrace, GrowthFit, RatioCheck, TraceEntry,
};
pub use holder::{campanato_fit, HolderFit};

use thiserror::Error;

use crate::energy::EnergyError;
use crate::field::FieldError;
use crate::minimize::MinimizeError;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("gamma(x0) = {gamma} >= 2: the growth exponent is undefined, use the repelling estimate")]
    Regime { gamma: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("below grid resolution: {0}")]
    Resolution(String),
    #[error("{found} usable entries, at least {needed} required")]
    InsufficientData { found: usize, needed: usize },
    #[error("point {0:?} is outside the grid")]
    Point(Vec<f64>),
    #[error("modulus is not Dini (partial sum {partial_sum} after {terms} terms)")]
    NonDini { partial_sum: f64, terms: usize },
    #[error("instance family is empty")]
    EmptyFamily,
    #[error("flatness fails without forcing on instance `{instance}`")]
    FlatAtZero { instance: String },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Minimize(#[from] MinimizeError),
}

pub(crate) fn csv_string(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
