//! Seeded synthetic response matrices.
//!
//! The generator is ChaCha8 seeded from a `u64` via `seed_from_u64`. Streams
//! are consumed in a fixed order: for [`sample_population`] all person
//! strengths, then item strengths, then person discriminations, then item
//! discriminations (normal deviates from `rand_distr::StandardNormal`); for
//! [`simulate`] one uniform `f64` per cell in row-major order, with a success
//! whenever the draw is below the success probability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::matrix::{default_labels, ResponseMatrix};
use crate::model::{combined_unchecked, ModelSpec, ParameterSet, FIXED_DISCRIMINATION};

/// Discriminations are clamped to these bounds when sampled, matching the
/// default estimation bounds.
pub const SAMPLE_D_BOUNDS: (f64, f64) = (0.2, 5.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub spec: ModelSpec,
    pub true_params: ParameterSet,
    pub seed: u64,
    pub n_persons: usize,
    pub n_items: usize,
}

impl SimulationScenario {
    /// Scenario whose `true_params` have the model's fixed discriminations
    /// reset to `sqrt(2)`.
    pub fn new(spec: ModelSpec, true_params: ParameterSet, seed: u64) -> Result<Self> {
        let scenario = Self {
            spec,
            n_persons: true_params.n_persons(),
            n_items: true_params.n_items(),
            true_params: true_params.with_fixings(spec.kind),
            seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_persons < 2 || self.n_items < 2 {
            return domain(format!(
                "scenario needs at least 2 persons and 2 items, got {}x{}",
                self.n_persons, self.n_items
            ));
        }
        self.true_params.check_dims(self.n_persons, self.n_items)?;
        self.true_params.check_values()
    }
}

/// Standard normal strengths and log-normal discriminations around `sqrt(2)`
/// with log-scale spread `d_spread`.
pub fn sample_population(n_persons: usize, n_items: usize, seed: u64, d_spread: f64) -> Result<ParameterSet> {
    if n_persons < 2 || n_items < 2 {
        return domain(format!(
            "population needs at least 2 persons and 2 items, got {n_persons}x{n_items}"
        ));
    }
    if !(d_spread >= 0.0 && d_spread.is_finite()) {
        return domain(format!(
            "d_spread must be finite and non-negative, got {d_spread}"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let theta = normals(n_persons);
    let beta = normals(n_items);
    let (lo, hi) = SAMPLE_D_BOUNDS;
    let spread = |z: f64| {
        if d_spread == 0.0 {
            FIXED_DISCRIMINATION
        } else {
            (FIXED_DISCRIMINATION * (d_spread * z).exp()).clamp(lo, hi)
        }
    };
    let d_person = normals(n_persons).into_iter().map(spread).collect();
    let d_item = normals(n_items).into_iter().map(spread).collect();
    Ok(ParameterSet {
        theta,
        beta,
        d_person,
        d_item,
    })
}

pub fn simulate(scenario: &SimulationScenario) -> Result<ResponseMatrix> {
    scenario.validate()?;
    let p = scenario.true_params.with_fixings(scenario.spec.kind);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut cells = Vec::with_capacity(scenario.n_persons * scenario.n_items);
    for i in 0..scenario.n_persons {
        for j in 0..scenario.n_items {
            let ds = combined_unchecked(p.d_person[i], p.d_item[j]);
            let prob = scenario.spec.link.eval(ds * (p.theta[i] - p.beta[j]));
            let u: f64 = rng.random();
            cells.push(Some(u < prob));
        }
    }
    ResponseMatrix::new(
        default_labels('P', scenario.n_persons),
        default_labels('I', scenario.n_items),
        cells,
    )
}
