use irtcal::{
    sample_population, simulate, LinkFunction, ModelKind, ModelSpec, ParameterSet, SimulationScenario,
};
use proptest::prelude::*;

#[test]
fn rasch_at_zero_gives_half_successes() {
    let spec = ModelSpec::new(ModelKind::Rasch, LinkFunction::Logistic);
    let scenario = SimulationScenario::new(spec, ParameterSet::neutral(100, 100), 42).unwrap();
    let data = simulate(&scenario).unwrap();
    let correct: usize = (0..100).map(|i| data.person_counts(i).0).sum();
    let share = correct as f64 / 1e4;
    assert!((share - 0.5).abs() < 0.02, "share {share}");
}

#[test]
fn population_mean_is_near_zero() {
    let pop = sample_population(10_000, 2, 9, 0.0).unwrap();
    let mean = pop.theta.iter().sum::<f64>() / 1e4;
    assert!(mean.abs() < 0.03, "mean {mean}");
}

#[test]
fn cell_frequencies_match_probabilities() {
    // One person and item pair per probability level, replicated over seeds.
    let spec = ModelSpec::new(ModelKind::ThreeParam, LinkFunction::NormalOgive);
    let params = ParameterSet {
        theta: vec![-1.0, 0.0, 0.8],
        beta: vec![0.0, 0.5],
        d_person: vec![0.7, 1.4, 3.0],
        d_item: vec![2.0, 1.0],
    };
    let reps = 4000;
    let mut hits = [[0usize; 2]; 3];
    for seed in 0..reps {
        let data = simulate(&SimulationScenario::new(spec, params.clone(), seed).unwrap()).unwrap();
        for (i, row) in hits.iter_mut().enumerate() {
            for (j, h) in row.iter_mut().enumerate() {
                *h += usize::from(data.get(i, j).unwrap());
            }
        }
    }
    for (i, row) in hits.iter().enumerate() {
        for (j, &h) in row.iter().enumerate() {
            let p = irtcal::success_probability(
                spec,
                params.theta[i],
                params.beta[j],
                params.d_person[i],
                params.d_item[j],
            )
            .unwrap();
            let sd = (p * (1.0 - p) / reps as f64).sqrt();
            let freq = h as f64 / reps as f64;
            assert!(
                (freq - p).abs() < 3.0 * sd + 1e-9,
                "cell ({i},{j}): {freq} vs {p}"
            );
        }
    }
}

#[test]
fn smallest_matrix() {
    let spec = ModelSpec::new(ModelKind::ThreeParam, LinkFunction::Logistic);
    let pop = sample_population(2, 2, 0, 0.4).unwrap();
    let data = simulate(&SimulationScenario::new(spec, pop, 0).unwrap()).unwrap();
    assert_eq!((data.n_persons(), data.n_items()), (2, 2));
}

#[test]
fn links_give_different_matrices() {
    let pop = sample_population(60, 30, 5, 0.0).unwrap();
    let run = |link| {
        let spec = ModelSpec::new(ModelKind::Rasch, link);
        simulate(&SimulationScenario::new(spec, pop.clone(), 6).unwrap()).unwrap()
    };
    assert_ne!(run(LinkFunction::Logistic), run(LinkFunction::NormalOgive));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn seeded_runs_are_reproducible(seed: u64, n in 2usize..30, k in 2usize..20, spread in 0.0f64..1.0) {
        let a = sample_population(n, k, seed, spread).unwrap();
        prop_assert_eq!(&a, &sample_population(n, k, seed, spread).unwrap());
        let spec = ModelSpec::new(ModelKind::ThreeParam, LinkFunction::NormalOgive);
        let s = SimulationScenario::new(spec, a, seed ^ 1).unwrap();
        prop_assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
        prop_assert_eq!(s.true_params.n_persons(), n);
        prop_assert_eq!(s.true_params.n_items(), k);
    }
}
