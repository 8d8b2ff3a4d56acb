//! Scale standardization and Fisher-z model comparison.
//!
//! Fitted strengths from different models live on scales that differ by an
//! affine map, so every comparison first standardizes each vector to zero
//! mean and unit standard deviation, then correlates it with the baseline
//! model. Correlations are moved to Fisher's z, whose sampling variance is
//! `1/(n-3)`; the difference of two z values then has standard deviation
//! `sqrt(2) * sigma_z`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{domain, IrtError, Result};
use crate::estimation::FitResult;
use crate::matrix::ResponseMatrix;
use crate::model::ModelSpec;

/// Upper 10% point of the standard normal, `Phi^-1(0.9)`.
pub const ONE_SIDED_10PCT_CRITICAL: f64 = 1.281_551_565_544_600_4;

/// The 10% boundary quoted for the z-difference ratio in the original
/// analysis (the two-sided 10% point, rounded).
pub const QUOTED_10PCT_BOUNDARY: f64 = 1.64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdDenominator {
    /// `n - 1`
    #[default]
    Sample,
    /// `n`
    Population,
}

pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    standardize_with(values, SdDenominator::Sample)
}

/// Affine map to mean 0 and standard deviation 1.
pub fn standardize_with(values: &[f64], denom: SdDenominator) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return domain(format!("standardize needs at least 2 values, got {n}"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return domain("standardize: non-finite value");
    }
    let mean = mean(values);
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let dof = match denom {
        SdDenominator::Sample => (n - 1) as f64,
        SdDenominator::Population => n as f64,
    };
    let sd = (ss / dof).sqrt();
    if !(sd > 0.0) {
        return domain("standardize: zero variance");
    }
    let out: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    // Second centering pass removes the rounding residue of the first.
    let resid = self::mean(&out);
    Ok(out.into_iter().map(|v| v - resid).collect())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pearson correlation, or `None` if either series has zero variance.
pub(crate) fn pearson_opt(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return domain(format!("length mismatch: {} vs {}", x.len(), y.len()));
    }
    if x.len() < 3 {
        return domain(format!("pearson_r needs at least 3 pairs, got {}", x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return domain("pearson_r: non-finite value");
    }
    pearson_opt(x, y).ok_or_else(|| IrtError::Domain("pearson_r: zero variance".into()))
}

/// `0.5 * ln((1 + r) / (1 - r))`.
pub fn fisher_z(r: f64) -> Result<f64> {
    if !(r.abs() < 1.0) {
        return domain(format!("fisher_z requires |r| < 1, got {r}"));
    }
    Ok(r.atanh())
}

/// Standard deviation of Fisher's z for a sample of `n`.
pub fn z_sigma(n: usize) -> Result<f64> {
    if n < 4 {
        return domain(format!("z_sigma requires n >= 4, got {n}"));
    }
    Ok((1.0 / (n - 3) as f64).sqrt())
}

/// Test of the difference between two z values obtained on samples of size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZDifference {
    pub delta: f64,
    pub sigma_delta: f64,
    pub ratio: f64,
    /// One-sided test at the 10% level (`ratio >= 1.2816`).
    pub significant_at_10pct: bool,
    /// `ratio >= 1.64`.
    pub reaches_quoted_boundary: bool,
}

pub fn z_difference_test(z_a: f64, z_b: f64, n: usize) -> Result<ZDifference> {
    if !z_a.is_finite() || !z_b.is_finite() {
        return domain("z values must be finite");
    }
    let sigma_delta = std::f64::consts::SQRT_2 * z_sigma(n)?;
    let delta = (z_a - z_b).abs();
    let ratio = delta / sigma_delta;
    Ok(ZDifference {
        delta,
        sigma_delta,
        ratio,
        significant_at_10pct: ratio >= ONE_SIDED_10PCT_CRITICAL,
        reaches_quoted_boundary: ratio >= QUOTED_10PCT_BOUNDARY,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparedModel {
    pub model: ModelSpec,
    pub r: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub model_a: ModelSpec,
    pub model_b: ModelSpec,
    #[serde(flatten)]
    pub test: ZDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline_model: ModelSpec,
    pub n: usize,
    pub compared: Vec<ComparedModel>,
    pub sigma_z: f64,
    pub pairwise: Vec<PairwiseComparison>,
}

/// Correlates every model's vector with the baseline's and tests all pairs of
/// non-baseline models against each other. A vector identical to the
/// baseline's (after standardization) is skipped rather than producing an
/// infinite z.
pub fn compare_models(
    vectors: &[(ModelSpec, Vec<f64>)],
    baseline: ModelSpec,
    n: usize,
) -> Result<ComparisonReport> {
    let base = vectors
        .iter()
        .find(|(spec, _)| *spec == baseline)
        .ok_or_else(|| IrtError::Domain(format!("baseline model {baseline} not among the vectors")))?;
    let base_std = standardize(&base.1)?;
    let sigma_z = z_sigma(n)?;

    let mut compared = Vec::new();
    for (spec, values) in vectors {
        if *spec == baseline {
            continue;
        }
        if values.len() != base_std.len() {
            return domain(format!(
                "vector for {spec} has length {}, baseline has {}",
                values.len(),
                base_std.len()
            ));
        }
        let std = standardize(values)?;
        if std == base_std {
            continue;
        }
        let r = pearson_r(&std, &base_std)?;
        compared.push(ComparedModel {
            model: *spec,
            r,
            z: fisher_z(r)?,
        });
    }

    let mut pairwise = Vec::new();
    for (a_idx, a) in compared.iter().enumerate() {
        for b in &compared[a_idx + 1..] {
            pairwise.push(PairwiseComparison {
                model_a: a.model,
                model_b: b.model,
                test: z_difference_test(a.z, b.z, n)?,
            });
        }
    }
    Ok(ComparisonReport {
        baseline_model: baseline,
        n,
        compared,
        sigma_z,
        pairwise,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Persons,
    Items,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    /// Row or column index in the calibrated matrix.
    pub index: usize,
    /// Standardized values, one per column.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTable {
    pub axis: Axis,
    pub sort_by: ModelSpec,
    pub columns: Vec<ModelSpec>,
    pub rows: Vec<TableRow>,
    pub comparison: Option<ComparisonReport>,
}

/// Standardized strengths of every model side by side. Persons are sorted by
/// decreasing strength under `sort_by`, items by increasing strength.
pub fn ranked_table(
    results: &[(ModelSpec, FitResult)],
    axis: Axis,
    sort_by: ModelSpec,
    matrix: &ResponseMatrix,
) -> Result<RankedTable> {
    let Some((_, first)) = results.first() else {
        return domain("ranked_table needs at least one result");
    };
    let kept = |fit: &FitResult| match axis {
        Axis::Persons => fit.kept_persons.clone(),
        Axis::Items => fit.kept_items.clone(),
    };
    let indices = kept(first);
    if results.iter().any(|(_, fit)| kept(fit) != indices) {
        return domain("results were fitted on different persons or items");
    }
    let labels = match axis {
        Axis::Persons => matrix.person_ids(),
        Axis::Items => matrix.item_ids(),
    };
    if let Some(&bad) = indices.iter().find(|&&k| k >= labels.len()) {
        return domain(format!("fitted index {bad} outside the matrix"));
    }

    let mut ordered: Vec<&(ModelSpec, FitResult)> = results.iter().collect();
    ordered.sort_by_key(|(spec, _)| (spec.kind, spec.link as u8));
    let columns: Vec<ModelSpec> = ordered.iter().map(|(spec, _)| *spec).collect();
    let sort_col = columns
        .iter()
        .position(|s| *s == sort_by)
        .ok_or_else(|| IrtError::Domain(format!("sort model {sort_by} not among the results")))?;

    let mut vectors = Vec::with_capacity(ordered.len());
    for (spec, fit) in &ordered {
        let raw = match axis {
            Axis::Persons => &fit.params.theta,
            Axis::Items => &fit.params.beta,
        };
        if raw.len() != indices.len() {
            return domain(format!(
                "{spec}: parameter vector length does not match fitted indices"
            ));
        }
        vectors.push((*spec, standardize(raw)?));
    }

    let mut rows: Vec<TableRow> = indices
        .iter()
        .enumerate()
        .map(|(pos, &k)| TableRow {
            label: labels[k].clone(),
            index: k,
            values: vectors.iter().map(|(_, v)| v[pos]).collect(),
        })
        .collect();
    rows.sort_by(|a, b| {
        let ord = a.values[sort_col]
            .partial_cmp(&b.values[sort_col])
            .unwrap_or(Ordering::Equal);
        match axis {
            Axis::Persons => ord.reverse(),
            Axis::Items => ord,
        }
    });

    let comparison = if vectors.len() > 1 {
        Some(compare_models(&vectors, sort_by, indices.len())?)
    } else {
        None
    };
    Ok(RankedTable {
        axis,
        sort_by,
        columns,
        rows,
        comparison,
    })
}
