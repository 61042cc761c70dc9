//! Supervised joint Gaussian graphical mixture model for high-dimensional
//! predictors with a censored survival outcome.
//!
//! Subjects fall into `K` latent subgroups. Within subgroup `k` the predictors
//! follow a Gaussian graphical model with sparse precision matrix `Omega_k`,
//! and the log survival time follows a normal accelerated failure time
//! regression on the predictors. Parameters are estimated by MAP-EM under a
//! spike-and-slab Laplace prior on the off-diagonal precision entries, a
//! cross-subgroup similarity prior on their signs, and Laplace priors on the
//! regression coefficients and means.
//!
//! ```no_run
//! use sbjgm::{fit, EmConfig, Hyperparams, SimDesign, Setting, Topology};
//!
//! let design = SimDesign::new(2, 30, Topology::PowerLaw, Setting::S1, 7).unwrap();
//! let sim = sbjgm::simgen::simulate(&design).unwrap();
//! let data = sim.dataset.standardized();
//! let h = Hyperparams::default_for(data.n(), data.p());
//! let result = fit(&data, 2, &h, &EmConfig::default()).unwrap();
//! println!("BIC {:.2}, {} edges in subgroup 1", result.bic, result.edges[0].len());
//! ```

pub mod em;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod precision;
pub mod regression;
pub mod selection;
pub mod simgen;

pub use em::{e_step, fit, fit_from, m_step, EmConfig, EmRun, InitMethod, RunObserver, ThresholdMode};
pub use error::{Error, Result};
pub use likelihood::{log_likelihood, penalized_log_posterior};
pub use metrics::{evaluate, Metrics};
pub use model::{Dataset, Edge, FitResult, Hyperparams, ModelParams, Responsibilities};
pub use precision::{solve_precisions, AdmmConfig};
pub use regression::update_regression;
pub use selection::{select_model, select_model_observed, Selection, SelectionRow};
pub use simgen::{Setting, SimDesign, Topology, Truth};
