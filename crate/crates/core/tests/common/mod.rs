//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use irtcal::{LinkFunction, ModelKind, ModelSpec, ParameterSet, ResponseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Composite Simpson rule for the standard normal density on `[a, b]`.
fn density_integral(a: f64, b: f64) -> f64 {
    let n = ((((b - a) / 2e-3).ceil() as usize).max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut sum = phi(a) + phi(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * phi(a + k as f64 * h);
    }
    sum * h / 3.0
}

/// Standard normal CDF by quadrature. Negative arguments integrate the
/// lower tail directly, so small probabilities keep their relative accuracy.
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    if x < 0.0 {
        density_integral(-x, -x + 15.0)
    } else {
        0.5 + density_integral(0.0, x)
    }
}

pub fn logistic_ref(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Combined discrimination from the variance-addition law.
pub fn combined_ref(a: f64, b: f64) -> f64 {
    1.0 / (1.0 / (a * a) + 1.0 / (b * b)).sqrt()
}

pub fn pearson_ref(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson_ref(&ranks(x), &ranks(y))
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Log-likelihood straight from the definition, with the probit evaluated by
/// quadrature. Fixed discriminations are taken as sqrt(2).
pub fn loglik_ref(m: &ResponseMatrix, p: &ParameterSet, spec: ModelSpec) -> f64 {
    let s2 = std::f64::consts::SQRT_2;
    let mut ll = 0.0;
    for i in 0..m.n_persons() {
        for j in 0..m.n_items() {
            let Some(y) = m.get(i, j) else { continue };
            let di = if spec.kind.frees_person_d() {
                p.d_person[i]
            } else {
                s2
            };
            let dj = if spec.kind.frees_item_d() { p.d_item[j] } else { s2 };
            let x = combined_ref(di, dj) * (p.theta[i] - p.beta[j]);
            let signed = if y { x } else { -x };
            let q = match spec.link {
                LinkFunction::Logistic => logistic_ref(signed),
                LinkFunction::NormalOgive => normal_cdf_quadrature(signed),
            };
            ll += q.clamp(1e-12, 1.0 - 1e-12).ln();
        }
    }
    ll
}

/// Random matrix with about 10% missing cells, moderate parameters.
pub fn random_instance(seed: u64, n: usize, m: usize) -> (ResponseMatrix, ParameterSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<Option<bool>>> = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    if rng.random::<f64>() < 0.1 {
                        None
                    } else {
                        Some(rng.random::<bool>())
                    }
                })
                .collect()
        })
        .collect();
    let params = ParameterSet {
        theta: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        beta: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        d_person: (0..n).map(|_| rng.random_range(0.3..4.0)).collect(),
        d_item: (0..m).map(|_| rng.random_range(0.3..4.0)).collect(),
    };
    (ResponseMatrix::from_rows(&rows).unwrap(), params)
}

pub fn all_specs() -> Vec<ModelSpec> {
    let mut v = Vec::new();
    for kind in ModelKind::ALL {
        for link in [LinkFunction::Logistic, LinkFunction::NormalOgive] {
            v.push(ModelSpec::new(kind, link));
        }
    }
    v
}

#[derive(Debug, Deserialize)]
pub struct RecoveryCase {
    pub model: ModelKind,
    pub d_spread: f64,
    pub population_seed: u64,
    pub response_seed: u64,
    pub min_r: f64,
}

#[derive(Debug, Deserialize)]
pub struct CliCase {
    pub seed: u64,
    pub persons: usize,
    pub items: usize,
    #[serde(default)]
    pub model: Option<ModelKind>,
    pub d_spread: f64,
    pub min_r: f64,
}

#[derive(Debug, Deserialize)]
pub struct RecoveryFixture {
    pub n_persons: usize,
    pub n_items: usize,
    pub link: LinkFunction,
    pub cases: Vec<RecoveryCase>,
    pub cli_round_trip: CliCase,
    pub cli_rasch_data: CliCase,
}

pub fn recovery_fixture() -> RecoveryFixture {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/recovery.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Numeric cells of every table in a text report, keyed by (axis, label).
pub fn text_tables(text: &str) -> Vec<(String, String, Vec<String>)> {
    let mut rows = Vec::new();
    let mut axis = String::new();
    let mut in_table = false;
    for line in text.lines() {
        if line.starts_with("Persons (") || line.starts_with("Items (") {
            axis = line.split(' ').next().unwrap().to_lowercase();
            in_table = false;
            continue;
        }
        if line.starts_with("label") {
            in_table = true;
            continue;
        }
        if line.is_empty() || line.starts_with("baseline") {
            in_table = false;
        }
        if in_table {
            let mut f = line.split_whitespace();
            let label = f.next().unwrap().to_string();
            rows.push((axis.clone(), label, f.map(str::to_string).collect()));
        }
    }
    rows
}
