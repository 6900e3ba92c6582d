//! Bayesian finite mixtures of two-sided censored (Tobit) regressions,
//! fitted by Gibbs sampling with data augmentation.
//!
//! Class indices are 0-based throughout the library; files and messages
//! number classes from 1.

pub mod distributions;
pub mod error;
pub mod fit;
pub mod gibbs;
pub mod io;
pub mod model;
pub mod numeric;
pub mod posterior;
pub mod simulate;

pub use distributions::RngStream;
pub use error::{Error, Result};
pub use fit::{FitReport, Criterion};
pub use gibbs::{
    relabel_draws, run_chain, run_chain_from, ChainSettings, DrawStore, GibbsState, Hyperpriors, InitStrategy,
    RelabelRule,
};
pub use model::{dataset_loglik, Censoring, ComponentParams, MixtureParams, ObservationSet};
pub use posterior::{DensityBand, Treatment};
pub use simulate::{builtin_dgp, DgpSpec};
