//! Calibration of dichotomous test data under the Rasch model, the two
//! Birnbaum variants (item or person discrimination) and the model with both
//! person and item discrimination, with logistic or normal-ogive links.
//!
//! ```
//! use irtcal::{estimate, sample_population, simulate, EstimationConfig};
//! use irtcal::{LinkFunction, ModelKind, ModelSpec, SimulationScenario};
//!
//! let spec = ModelSpec::new(ModelKind::ThreeParam, LinkFunction::NormalOgive);
//! let truth = sample_population(60, 20, 1, 0.3).unwrap();
//! let data = simulate(&SimulationScenario::new(spec, truth, 2).unwrap()).unwrap();
//! let fit = estimate(&data, spec, &EstimationConfig::default()).unwrap();
//! assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
//! ```

pub mod analysis;
pub mod cli;
pub mod ctt;
pub mod error;
pub mod estimation;
pub mod matrix;
pub mod model;
pub mod report;
pub mod simulation;

pub use analysis::{
    compare_models, fisher_z, pearson_r, ranked_table, standardize, z_difference_test, z_sigma, Axis,
    ComparisonReport, RankedTable,
};
pub use ctt::{
    clean_test, item_difficulty, item_total_correlation, person_total_correlation, CttOptions, CttReport,
};
pub use error::{IrtError, Result};
pub use estimation::{
    estimate, estimate_from_rasch, estimate_rasch, log_likelihood, loglik_gradient, EstimationConfig,
    ExtremeScorePolicy, FitResult, Gradient,
};
pub use matrix::ResponseMatrix;
pub use model::{
    combined_discrimination, logistic, normal_cdf, success_probability, LinkFunction, ModelKind, ModelSpec,
    ParameterSet,
};
pub use simulation::{sample_population, simulate, SimulationScenario};
