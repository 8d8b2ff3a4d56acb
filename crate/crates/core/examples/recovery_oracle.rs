//! Simulate-then-estimate run that produced the recovery bounds frozen in
//! `tests/fixtures/recovery.json` (`observed_r`; `min_r` sits a little below
//! it). Run with
//! `cargo run --release --example recovery_oracle`.

use std::time::Instant;

use irtcal::{
    estimate, pearson_r, sample_population, simulate, standardize, EstimationConfig, LinkFunction, ModelKind,
    ModelSpec, SimulationScenario,
};

const N_PERSONS: usize = 500;
const N_ITEMS: usize = 60;

fn main() {
    let cfg = EstimationConfig::default();
    for (k, kind) in ModelKind::ALL.into_iter().enumerate() {
        let spec = ModelSpec::new(kind, LinkFunction::NormalOgive);
        let d_spread = if kind == ModelKind::Rasch { 0.0 } else { 0.5 };
        let pop_seed = 1000 + k as u64;
        let sim_seed = 2000 + k as u64;
        let truth = sample_population(N_PERSONS, N_ITEMS, pop_seed, d_spread).unwrap();
        let scenario = SimulationScenario::new(spec, truth, sim_seed).unwrap();
        let data = simulate(&scenario).unwrap();
        let started = Instant::now();
        let fit = estimate(&data, spec, &cfg).unwrap();
        let elapsed = started.elapsed();
        let true_theta: Vec<f64> = fit
            .kept_persons
            .iter()
            .map(|&i| scenario.true_params.theta[i])
            .collect();
        let r = pearson_r(
            &standardize(&true_theta).unwrap(),
            &standardize(&fit.params.theta).unwrap(),
        )
        .unwrap();
        println!(
            "{kind:>10}: pop_seed {pop_seed} sim_seed {sim_seed} d_spread {d_spread} r {r:.4} iters {} converged {} excluded {}/{} ll {:.3} ({:.2?})",
            fit.iterations,
            fit.converged,
            fit.excluded_persons.len(),
            fit.excluded_items.len(),
            fit.log_likelihood,
            elapsed
        );
    }
}
