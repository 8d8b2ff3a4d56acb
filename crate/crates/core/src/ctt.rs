//! Classical test statistics and pre-calibration cleaning.

use serde::{Deserialize, Serialize};

use crate::analysis::pearson_opt;
use crate::error::{domain, IrtError, Result};
use crate::matrix::ResponseMatrix;

/// Largest share of persons that cleaning may flag.
pub const MAX_PERSON_QUOTA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CttOptions {
    /// Items whose item-total correlation falls below this are removed.
    pub item_r_threshold: f64,
    /// Share of persons (at most 5%) with the lowest person-total
    /// correlation to flag.
    pub person_quota: f64,
    /// Leave the correlated item (person) out of the totals.
    pub corrected: bool,
    /// Repeat item removal until no remaining item falls below the threshold.
    pub fixpoint: bool,
    /// Drop flagged persons from the returned matrix instead of only reporting them.
    pub remove_flagged_persons: bool,
}

impl Default for CttOptions {
    fn default() -> Self {
        Self {
            item_r_threshold: 0.2,
            person_quota: MAX_PERSON_QUOTA,
            corrected: false,
            fixpoint: false,
            remove_flagged_persons: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CttReport {
    /// Share of non-missing responses that are incorrect, per item.
    pub difficulty: Vec<f64>,
    /// Item-total correlation per item of the input matrix; `None` when a
    /// series has zero variance.
    pub item_total_r: Vec<Option<f64>>,
    /// Person-total correlation per person, computed after item removal.
    pub person_total_r: Vec<Option<f64>>,
    pub flagged_items: Vec<usize>,
    pub flagged_persons: Vec<usize>,
    pub item_r_threshold: f64,
    pub person_quota: f64,
}

/// Share of persons who failed item `item`.
pub fn item_difficulty(matrix: &ResponseMatrix, item: usize) -> Result<f64> {
    if item >= matrix.n_items() {
        return domain(format!("item index {item} out of range"));
    }
    let (correct, seen) = matrix.item_counts(item);
    if seen == 0 {
        return domain(format!("item {} has no responses", matrix.item_ids()[item]));
    }
    Ok(1.0 - correct as f64 / seen as f64)
}

pub fn item_total_correlation(matrix: &ResponseMatrix, item: usize) -> Result<f64> {
    item_total_correlation_with(matrix, item, false)
}

pub fn person_total_correlation(matrix: &ResponseMatrix, person: usize) -> Result<f64> {
    person_total_correlation_with(matrix, person, false)
}

/// Correlation of an item's responses with the persons' total scores, over
/// persons who answered the item. With `corrected` the item itself is left
/// out of each total.
pub fn item_total_correlation_with(matrix: &ResponseMatrix, item: usize, corrected: bool) -> Result<f64> {
    if item >= matrix.n_items() {
        return domain(format!("item index {item} out of range"));
    }
    let totals: Vec<f64> = (0..matrix.n_persons())
        .map(|i| matrix.person_counts(i).0 as f64)
        .collect();
    let cells: Vec<Option<bool>> = matrix.column(item).collect();
    correlate_with_totals(&cells, &totals, corrected)
        .map_err(|why| IrtError::UndefinedCorrelation(format!("item {}: {why}", matrix.item_ids()[item])))
}

/// Transposed counterpart of [`item_total_correlation_with`]: a person's
/// responses against the items' total scores.
pub fn person_total_correlation_with(matrix: &ResponseMatrix, person: usize, corrected: bool) -> Result<f64> {
    if person >= matrix.n_persons() {
        return domain(format!("person index {person} out of range"));
    }
    let totals: Vec<f64> = (0..matrix.n_items())
        .map(|j| matrix.item_counts(j).0 as f64)
        .collect();
    correlate_with_totals(matrix.row(person), &totals, corrected).map_err(|why| {
        IrtError::UndefinedCorrelation(format!("person {}: {why}", matrix.person_ids()[person]))
    })
}

fn correlate_with_totals(
    cells: &[Option<bool>],
    totals: &[f64],
    corrected: bool,
) -> std::result::Result<f64, &'static str> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = cells
        .iter()
        .zip(totals)
        .filter_map(|(c, &t)| {
            c.map(|x| {
                let x = f64::from(u8::from(x));
                (x, if corrected { t - x } else { t })
            })
        })
        .unzip();
    if xs.len() < 2 {
        return Err("fewer than two responses");
    }
    pearson_opt(&xs, &ys).ok_or("zero variance")
}

/// Number of persons a quota allows, rounded up.
pub fn person_quota_count(n_persons: usize, quota: f64) -> usize {
    // The small offset keeps exact products such as 0.05 * 40 from rounding up.
    (quota * n_persons as f64 - 1e-9).ceil().max(0.0) as usize
}

fn item_correlations(matrix: &ResponseMatrix, corrected: bool) -> Vec<Option<f64>> {
    (0..matrix.n_items())
        .map(|j| item_total_correlation_with(matrix, j, corrected).ok())
        .collect()
}

/// Removes items with low item-total correlation and flags the persons with
/// the lowest person-total correlation, up to `ceil(quota * n_persons)`.
///
/// Item removal is a single pass unless `fixpoint` is set. Person
/// correlations are computed once, on the matrix left after item removal.
/// Items whose correlation is undefined (every answer the same) count as
/// having correlation 0.
pub fn clean_test(matrix: &ResponseMatrix, opts: &CttOptions) -> Result<(ResponseMatrix, CttReport)> {
    if !opts.item_r_threshold.is_finite() {
        return domain("item_r_threshold must be finite");
    }
    if !(0.0..=MAX_PERSON_QUOTA).contains(&opts.person_quota) {
        return domain(format!(
            "person_quota must lie in [0, {MAX_PERSON_QUOTA}], got {}",
            opts.person_quota
        ));
    }
    let difficulty = (0..matrix.n_items())
        .map(|j| item_difficulty(matrix, j))
        .collect::<Result<Vec<_>>>()?;
    let item_total_r = item_correlations(matrix, opts.corrected);

    let below = |r: &Option<f64>| r.unwrap_or(0.0) < opts.item_r_threshold;
    let mut kept_items: Vec<usize> = (0..matrix.n_items())
        .filter(|&j| !below(&item_total_r[j]))
        .collect();
    let all_persons: Vec<usize> = (0..matrix.n_persons()).collect();
    let mut reduced = select_or_refuse(matrix, &all_persons, &kept_items)?;
    if opts.fixpoint {
        loop {
            let rs = item_correlations(&reduced, opts.corrected);
            let keep: Vec<usize> = (0..kept_items.len()).filter(|&k| !below(&rs[k])).collect();
            if keep.len() == kept_items.len() {
                break;
            }
            kept_items = keep.iter().map(|&k| kept_items[k]).collect();
            reduced = select_or_refuse(matrix, &all_persons, &kept_items)?;
        }
    }
    let flagged_items: Vec<usize> = (0..matrix.n_items())
        .filter(|j| !kept_items.contains(j))
        .collect();

    let person_total_r: Vec<Option<f64>> = (0..reduced.n_persons())
        .map(|i| person_total_correlation_with(&reduced, i, opts.corrected).ok())
        .collect();
    let budget = person_quota_count(matrix.n_persons(), opts.person_quota);
    let mut ranked: Vec<(usize, f64)> = person_total_r
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut flagged_persons: Vec<usize> = ranked.into_iter().take(budget).map(|(i, _)| i).collect();
    flagged_persons.sort_unstable();

    if opts.remove_flagged_persons && !flagged_persons.is_empty() {
        let keep: Vec<usize> = all_persons
            .into_iter()
            .filter(|i| !flagged_persons.contains(i))
            .collect();
        reduced = select_or_refuse(matrix, &keep, &kept_items)?;
    }

    let report = CttReport {
        difficulty,
        item_total_r,
        person_total_r,
        flagged_items,
        flagged_persons,
        item_r_threshold: opts.item_r_threshold,
        person_quota: opts.person_quota,
    };
    Ok((reduced, report))
}

fn select_or_refuse(matrix: &ResponseMatrix, persons: &[usize], items: &[usize]) -> Result<ResponseMatrix> {
    if persons.len() < 2 || items.len() < 2 {
        return Err(IrtError::Refusal(format!(
            "cleaning would leave {} persons and {} items (need at least 2 of each)",
            persons.len(),
            items.len()
        )));
    }
    matrix.select(persons, items)
}
