//! Joint maximum-likelihood calibration.
//!
//! All four model kinds are fitted by block-coordinate ascent: every sweep
//! updates the person strengths, then the item strengths, then whichever
//! discrimination blocks the model frees. Within a block each parameter only
//! touches its own row (or column) of the likelihood, so the 1-D updates are
//! independent and run in parallel. Each update is a Fisher-scoring step with
//! step halving, accepted only if its share of the likelihood does not drop;
//! the whole likelihood therefore never decreases from sweep to sweep.
//!
//! Coordinate sweeps crawl along directions where several parameters trade
//! off against each other, such as a person discrimination and strength near
//! a bound. So each sweep is followed by a damped joint Fisher-scoring step
//! (Levenberg-Marquardt style) over all free parameters. The person blocks of
//! the information matrix are eliminated first, so only a dense system of
//! item size is factored. The step is backtracked and kept only if the
//! likelihood does not drop.
//!
//! The likelihood is unchanged by shifting all strengths by a constant, and
//! for models with free discriminations by trading a common factor between
//! the discriminations and the strength differences. After every sweep the
//! fit is moved back to a fixed gauge:
//!
//! * mean person strength 0;
//! * `ThreeParam`: geometric mean of the item discriminations `sqrt(2)`;
//! * two-parameter kinds: geometric mean of the combined discrimination over
//!   the free block equal to 1, its value in the Rasch model.
//!
//! Non-Rasch models start from the Rasch solution with all discriminations at
//! `sqrt(2)`, where every model coincides with the Rasch model.
//!
//! Joint ML estimates of this kind carry the well known finite-test-length
//! bias (strengths are spread too wide). No correction is applied.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, IrtError, Result};
use crate::matrix::ResponseMatrix;
use crate::model::{
    clamp_prob, combined_partial, combined_unchecked, LinkFunction, ModelKind, ModelSpec, ParameterSet,
    FIXED_DISCRIMINATION, PROB_EPS,
};

/// Weight of the quadratic pull toward 0 used by [`ExtremeScorePolicy::Penalize`].
pub const PENALTY_WEIGHT: f64 = 0.01;

const MAX_STRENGTH_STEP: f64 = 1.0;
const MAX_LOG_D_STEP: f64 = 0.5;
const MAX_HALVINGS: usize = 30;
const JOINT_HALVINGS: usize = 10;
const LAMBDA_START: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-8;
const LAMBDA_MAX: f64 = 1e6;
/// Largest item-side system a joint step solves directly.
const MAX_JOINT_DIM: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremeScorePolicy {
    /// Drop persons and items with all-correct or all-incorrect responses
    /// (repeatedly, since a drop can create new extremes) and fit the rest.
    #[default]
    Exclude,
    /// Keep everything and add `-PENALTY_WEIGHT/2 * (sum theta^2 + sum beta^2)`
    /// to the objective. The penalty also fixes location and scale, so no
    /// gauge is applied in this mode.
    Penalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub max_iterations: usize,
    /// Largest absolute parameter change in an iteration that counts as converged.
    pub tolerance: f64,
    pub d_bounds: (f64, f64),
    /// Multiplier on every Fisher-scoring step, in (0, 1].
    pub step_damping: f64,
    pub extreme_score_policy: ExtremeScorePolicy,
    /// Follow each sweep with a joint Fisher-scoring step over all free
    /// parameters, kept only when it raises the objective.
    pub accelerate: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-4,
            d_bounds: (0.2, 5.0),
            step_damping: 1.0,
            extreme_score_policy: ExtremeScorePolicy::Exclude,
            accelerate: true,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return domain(format!("tolerance must be positive, got {}", self.tolerance));
        }
        let (lo, hi) = self.d_bounds;
        // Compare with a hair of slack so that (sqrt(2), sqrt(2)) spelled in
        // decimal still counts as containing sqrt(2).
        let slack = 4.0 * f64::EPSILON;
        if !(lo > 0.0 && lo <= SQRT_2 * (1.0 + slack) && SQRT_2 <= hi * (1.0 + slack) && hi.is_finite()) {
            return domain(format!(
                "d_bounds must satisfy 0 < lower <= sqrt(2) <= upper, got ({lo}, {hi})"
            ));
        }
        if !(self.step_damping > 0.0 && self.step_damping <= 1.0) {
            return domain(format!(
                "step_damping must lie in (0, 1], got {}",
                self.step_damping
            ));
        }
        if self.max_iterations == 0 {
            return domain("max_iterations must be at least 1");
        }
        Ok(())
    }

    fn log_bounds(&self) -> (f64, f64) {
        (self.d_bounds.0.ln(), self.d_bounds.1.ln())
    }

    fn d_block_free(&self) -> bool {
        self.d_bounds.0 < FIXED_DISCRIMINATION || self.d_bounds.1 > FIXED_DISCRIMINATION
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    /// Parameters of the persons in `kept_persons` and items in `kept_items`,
    /// in that order.
    pub params: ParameterSet,
    /// Objective at the start and after every iteration (a sweep over all
    /// blocks plus the joint step).
    pub loglik_trace: Vec<f64>,
    /// Log-likelihood at `params` without any penalty.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute parameter change in the final iteration.
    pub last_change: f64,
    pub excluded_persons: Vec<usize>,
    pub excluded_items: Vec<usize>,
    pub kept_persons: Vec<usize>,
    pub kept_items: Vec<usize>,
}

/// Gradient of the log-likelihood. Discrimination blocks are `None` when the
/// model holds them fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub d_person: Option<Vec<f64>>,
    pub d_item: Option<Vec<f64>>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.theta
            .iter()
            .chain(&self.beta)
            .chain(self.d_person.iter().flatten())
            .chain(self.d_item.iter().flatten())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Log-likelihood contribution of one response with linear predictor `x`,
/// plus its derivative and expected information with respect to `x`.
#[inline]
fn cell_terms(link: LinkFunction, x: f64, correct: bool) -> (f64, f64, f64) {
    let sign = if correct { 1.0 } else { -1.0 };
    let q = link.eval(sign * x);
    if q < PROB_EPS || q > 1.0 - PROB_EPS {
        // Clamped region: the contribution is constant.
        return (clamp_prob(q).ln(), 0.0, 0.0);
    }
    let f = link.density(x);
    let score = sign * f / q;
    let other = 1.0 - q;
    let info = f * f / (q * other);
    (q.ln(), score, info)
}

#[inline]
fn cell_loglik(link: LinkFunction, x: f64, correct: bool) -> f64 {
    let sign = if correct { 1.0 } else { -1.0 };
    clamp_prob(link.eval(sign * x)).ln()
}

fn check_inputs(matrix: &ResponseMatrix, params: &ParameterSet) -> Result<()> {
    params.check_dims(matrix.n_persons(), matrix.n_items())?;
    params.check_values()
}

/// Sum over non-missing cells of `x ln P + (1 - x) ln(1 - P)`.
pub fn log_likelihood(matrix: &ResponseMatrix, params: &ParameterSet, spec: ModelSpec) -> Result<f64> {
    check_inputs(matrix, params)?;
    let mut total = 0.0;
    for i in 0..matrix.n_persons() {
        for (j, cell) in matrix.row(i).iter().enumerate() {
            if let Some(y) = *cell {
                let (di, dj) = spec.effective_d(params.d_person[i], params.d_item[j]);
                let x = combined_unchecked(di, dj) * (params.theta[i] - params.beta[j]);
                total += cell_loglik(spec.link, x, y);
            }
        }
    }
    Ok(total)
}

/// Analytic gradient of [`log_likelihood`] over the model's free parameters.
pub fn loglik_gradient(matrix: &ResponseMatrix, params: &ParameterSet, spec: ModelSpec) -> Result<Gradient> {
    check_inputs(matrix, params)?;
    let (n, m) = (matrix.n_persons(), matrix.n_items());
    let mut g = Gradient {
        theta: vec![0.0; n],
        beta: vec![0.0; m],
        d_person: spec.kind.frees_person_d().then(|| vec![0.0; n]),
        d_item: spec.kind.frees_item_d().then(|| vec![0.0; m]),
    };
    for i in 0..n {
        for (j, cell) in matrix.row(i).iter().enumerate() {
            let Some(y) = *cell else { continue };
            let (di, dj) = spec.effective_d(params.d_person[i], params.d_item[j]);
            let ds = combined_unchecked(di, dj);
            let diff = params.theta[i] - params.beta[j];
            let (_, s, _) = cell_terms(spec.link, ds * diff, y);
            g.theta[i] += s * ds;
            g.beta[j] -= s * ds;
            if let Some(gp) = g.d_person.as_mut() {
                gp[i] += s * diff * combined_partial(di, dj);
            }
            if let Some(gi) = g.d_item.as_mut() {
                gi[j] += s * diff * combined_partial(dj, di);
            }
        }
    }
    Ok(g)
}

/// Rasch fit with both discriminations held at `sqrt(2)`.
pub fn estimate_rasch(
    matrix: &ResponseMatrix,
    link: LinkFunction,
    cfg: &EstimationConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let spec = ModelSpec::new(ModelKind::Rasch, link);
    let prepared = Prepared::new(matrix, cfg.extreme_score_policy)?;
    let start = prepared.data.initial_params(link);
    run(&prepared, spec, cfg, start, BlockSet::default())
}

/// Fits `spec`, warm-starting from a Rasch fit of the same matrix.
pub fn estimate(matrix: &ResponseMatrix, spec: ModelSpec, cfg: &EstimationConfig) -> Result<FitResult> {
    let rasch = estimate_rasch(matrix, spec.link, cfg)?;
    estimate_from_rasch(matrix, spec, cfg, &rasch)
}

/// Continues from an existing Rasch fit of `matrix`: strengths from the fit,
/// all discriminations at `sqrt(2)`.
pub fn estimate_from_rasch(
    matrix: &ResponseMatrix,
    spec: ModelSpec,
    cfg: &EstimationConfig,
    rasch: &FitResult,
) -> Result<FitResult> {
    cfg.validate()?;
    if rasch.spec != ModelSpec::new(ModelKind::Rasch, spec.link) {
        return domain(format!(
            "warm start must be a Rasch fit with link {}, got {}",
            spec.link, rasch.spec
        ));
    }
    let prepared = Prepared::new(matrix, cfg.extreme_score_policy)?;
    if prepared.kept_persons != rasch.kept_persons || prepared.kept_items != rasch.kept_items {
        return domain("warm start was fitted on a different matrix");
    }
    let blocks = BlockSet {
        d_person: spec.kind.frees_person_d() && cfg.d_block_free(),
        d_item: spec.kind.frees_item_d() && cfg.d_block_free(),
    };
    if !blocks.any() {
        // Nothing beyond the Rasch parameters can move, so the objective is
        // the Rasch objective and the warm start is already its maximum.
        return Ok(FitResult {
            spec,
            ..rasch.clone()
        });
    }
    let start = rasch.params.with_fixings(ModelKind::Rasch);
    run(&prepared, spec, cfg, start, blocks)
}

#[derive(Debug, Clone, Copy, Default)]
struct BlockSet {
    d_person: bool,
    d_item: bool,
}

impl BlockSet {
    fn any(self) -> bool {
        self.d_person || self.d_item
    }
}

/// Matrix after extreme-score exclusion, stored both row- and column-major.
struct Data {
    n: usize,
    m: usize,
    rows: Vec<Option<bool>>,
    cols: Vec<Option<bool>>,
    person_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl Data {
    fn new(matrix: &ResponseMatrix) -> Self {
        let (n, m) = (matrix.n_persons(), matrix.n_items());
        let rows: Vec<Option<bool>> = (0..n).flat_map(|i| matrix.row(i).to_vec()).collect();
        let cols = (0..m)
            .flat_map(|j| matrix.column(j).collect::<Vec<_>>())
            .collect();
        Self {
            n,
            m,
            rows,
            cols,
            person_ids: matrix.person_ids().to_vec(),
            item_ids: matrix.item_ids().to_vec(),
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[Option<bool>] {
        &self.rows[i * self.m..(i + 1) * self.m]
    }

    #[inline]
    fn col(&self, j: usize) -> &[Option<bool>] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    /// Smoothed log-odds of the raw scores, centered on mean person strength 0.
    fn initial_params(&self, link: LinkFunction) -> ParameterSet {
        let scale = match link {
            LinkFunction::Logistic => 1.0,
            LinkFunction::NormalOgive => 1.0 / 1.7,
        };
        let logodds = |cells: &[Option<bool>]| {
            let (c, s) = cells.iter().fold((0.0f64, 0.0f64), |(c, s), x| match x {
                Some(true) => (c + 1.0, s + 1.0),
                Some(false) => (c, s + 1.0),
                None => (c, s),
            });
            let p = (c + 0.5) / (s + 1.0);
            (p / (1.0 - p)).ln() * scale
        };
        let mut params = ParameterSet::neutral(self.n, self.m);
        params.theta = (0..self.n).map(|i| logodds(self.row(i))).collect();
        params.beta = (0..self.m).map(|j| -logodds(self.col(j))).collect();
        let shift = mean(&params.theta);
        params.theta.iter_mut().for_each(|t| *t -= shift);
        params.beta.iter_mut().for_each(|b| *b -= shift);
        params
    }
}

struct Prepared {
    data: Data,
    policy: ExtremeScorePolicy,
    kept_persons: Vec<usize>,
    kept_items: Vec<usize>,
    excluded_persons: Vec<usize>,
    excluded_items: Vec<usize>,
}

impl Prepared {
    fn new(matrix: &ResponseMatrix, policy: ExtremeScorePolicy) -> Result<Self> {
        for i in 0..matrix.n_persons() {
            if matrix.person_counts(i).1 == 0 {
                return domain(format!("person {} has no responses", matrix.person_ids()[i]));
            }
        }
        for j in 0..matrix.n_items() {
            if matrix.item_counts(j).1 == 0 {
                return domain(format!("item {} has no responses", matrix.item_ids()[j]));
            }
        }
        let (kept_persons, kept_items) = match policy {
            ExtremeScorePolicy::Exclude => drop_extremes(matrix),
            ExtremeScorePolicy::Penalize => {
                ((0..matrix.n_persons()).collect(), (0..matrix.n_items()).collect())
            }
        };
        if kept_persons.len() < 2 || kept_items.len() < 2 {
            return Err(IrtError::Refusal(format!(
                "after excluding extreme scores {} persons and {} items remain (need at least 2 of each)",
                kept_persons.len(),
                kept_items.len()
            )));
        }
        let excluded_persons = (0..matrix.n_persons())
            .filter(|i| !kept_persons.contains(i))
            .collect();
        let excluded_items = (0..matrix.n_items())
            .filter(|j| !kept_items.contains(j))
            .collect();
        let reduced = matrix.select(&kept_persons, &kept_items)?;
        Ok(Self {
            data: Data::new(&reduced),
            policy,
            kept_persons,
            kept_items,
            excluded_persons,
            excluded_items,
        })
    }
}

/// Repeatedly removes rows and columns whose responses are all equal. The
/// result does not depend on removal order: removing cells never makes an
/// extreme row or column non-extreme.
fn drop_extremes(matrix: &ResponseMatrix) -> (Vec<usize>, Vec<usize>) {
    let mut persons: Vec<usize> = (0..matrix.n_persons()).collect();
    let mut items: Vec<usize> = (0..matrix.n_items()).collect();
    let extreme = |cells: &mut dyn Iterator<Item = Option<bool>>| {
        let (c, s) = cells
            .flatten()
            .fold((0, 0), |(c, s), x| (c + usize::from(x), s + 1));
        s == 0 || c == 0 || c == s
    };
    loop {
        let before = (persons.len(), items.len());
        persons.retain(|&i| !extreme(&mut items.iter().map(|&j| matrix.get(i, j))));
        items.retain(|&j| !extreme(&mut persons.iter().map(|&i| matrix.get(i, j))));
        if (persons.len(), items.len()) == before || persons.is_empty() || items.is_empty() {
            return (persons, items);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Terms {
    f: f64,
    g: f64,
    h: f64,
}

/// Which parameter a 1-D update moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Strength,
    LogD,
}

struct Engine<'a> {
    data: &'a Data,
    link: LinkFunction,
    penalty: f64,
    damping: f64,
    log_bounds: (f64, f64),
}

impl Engine<'_> {
    /// Terms of person `i`'s row with `theta_i = t` and `d_i = d`.
    fn person_terms(&self, p: &ParameterSet, i: usize, t: f64, d: f64, target: Target) -> Terms {
        let mut acc = Terms {
            f: 0.0,
            g: 0.0,
            h: 0.0,
        };
        for (j, cell) in self.data.row(i).iter().enumerate() {
            let Some(y) = *cell else { continue };
            let dj = p.d_item[j];
            let ds = combined_unchecked(d, dj);
            let diff = t - p.beta[j];
            let (ll, s, w) = cell_terms(self.link, ds * diff, y);
            let a = match target {
                Target::Strength => ds,
                Target::LogD => diff * combined_partial(d, dj) * d,
            };
            acc.f += ll;
            acc.g += s * a;
            acc.h += w * a * a;
        }
        if target == Target::Strength {
            self.add_penalty(&mut acc, t);
        }
        acc
    }

    /// Terms of item `j`'s column with `beta_j = b` and `d_j = d`.
    fn item_terms(&self, p: &ParameterSet, j: usize, b: f64, d: f64, target: Target) -> Terms {
        let mut acc = Terms {
            f: 0.0,
            g: 0.0,
            h: 0.0,
        };
        for (i, cell) in self.data.col(j).iter().enumerate() {
            let Some(y) = *cell else { continue };
            let di = p.d_person[i];
            let ds = combined_unchecked(di, d);
            let diff = p.theta[i] - b;
            let (ll, s, w) = cell_terms(self.link, ds * diff, y);
            let a = match target {
                Target::Strength => -ds,
                Target::LogD => diff * combined_partial(d, di) * d,
            };
            acc.f += ll;
            acc.g += s * a;
            acc.h += w * a * a;
        }
        if target == Target::Strength {
            self.add_penalty(&mut acc, b);
        }
        acc
    }

    #[inline]
    fn add_penalty(&self, acc: &mut Terms, v: f64) {
        if self.penalty > 0.0 {
            acc.f -= 0.5 * self.penalty * v * v;
            acc.g -= self.penalty * v;
            acc.h += self.penalty;
        }
    }

    /// One damped Fisher-scoring step from `x0` with step halving; returns
    /// `x0` unchanged if no trial point matches its objective.
    fn ascend(&self, x0: f64, max_step: f64, bounds: Option<(f64, f64)>, eval: impl Fn(f64) -> Terms) -> f64 {
        let start = eval(x0);
        if !(start.h > 0.0) || start.g == 0.0 {
            return x0;
        }
        let mut step = (self.damping * start.g / start.h).clamp(-max_step, max_step);
        for _ in 0..MAX_HALVINGS {
            let mut x = x0 + step;
            if let Some((lo, hi)) = bounds {
                x = x.clamp(lo, hi);
            }
            if x == x0 {
                return x0;
            }
            if eval(x).f >= start.f {
                return x;
            }
            step *= 0.5;
        }
        x0
    }

    fn update_theta(&self, p: &ParameterSet) -> Vec<f64> {
        (0..self.data.n)
            .into_par_iter()
            .map(|i| {
                let d = p.d_person[i];
                self.ascend(p.theta[i], MAX_STRENGTH_STEP, None, |t| {
                    self.person_terms(p, i, t, d, Target::Strength)
                })
            })
            .collect()
    }

    fn update_beta(&self, p: &ParameterSet) -> Vec<f64> {
        (0..self.data.m)
            .into_par_iter()
            .map(|j| {
                let d = p.d_item[j];
                self.ascend(p.beta[j], MAX_STRENGTH_STEP, None, |b| {
                    self.item_terms(p, j, b, d, Target::Strength)
                })
            })
            .collect()
    }

    fn update_d_person(&self, p: &ParameterSet) -> Vec<f64> {
        (0..self.data.n)
            .into_par_iter()
            .map(|i| {
                let d0 = p.d_person[i];
                let u = self.ascend(d0.ln(), MAX_LOG_D_STEP, Some(self.log_bounds), |u| {
                    self.person_terms(p, i, p.theta[i], u.exp(), Target::LogD)
                });
                if u == d0.ln() {
                    d0
                } else {
                    u.exp()
                }
            })
            .collect()
    }

    fn update_d_item(&self, p: &ParameterSet) -> Vec<f64> {
        (0..self.data.m)
            .into_par_iter()
            .map(|j| {
                let d0 = p.d_item[j];
                let u = self.ascend(d0.ln(), MAX_LOG_D_STEP, Some(self.log_bounds), |u| {
                    self.item_terms(p, j, p.beta[j], u.exp(), Target::LogD)
                });
                if u == d0.ln() {
                    d0
                } else {
                    u.exp()
                }
            })
            .collect()
    }

    /// Log-likelihood over all cells, with the penalty if active.
    fn objective(&self, p: &ParameterSet) -> f64 {
        let ll: f64 = (0..self.data.n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for (j, cell) in self.data.row(i).iter().enumerate() {
                    if let Some(y) = *cell {
                        let ds = combined_unchecked(p.d_person[i], p.d_item[j]);
                        acc += cell_loglik(self.link, ds * (p.theta[i] - p.beta[j]), y);
                    }
                }
                acc
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        if self.penalty > 0.0 {
            let sq: f64 = p.theta.iter().chain(&p.beta).map(|v| v * v).sum();
            ll - 0.5 * self.penalty * sq
        } else {
            ll
        }
    }

    fn numeric_failure(&self, p: &ParameterSet, kept_persons: &[usize], kept_items: &[usize]) -> IrtError {
        for i in 0..self.data.n {
            for (j, cell) in self.data.row(i).iter().enumerate() {
                if let Some(y) = *cell {
                    let ds = combined_unchecked(p.d_person[i], p.d_item[j]);
                    if !cell_loglik(self.link, ds * (p.theta[i] - p.beta[j]), y).is_finite() {
                        return IrtError::NumericFailure {
                            person: kept_persons[i],
                            item: kept_items[j],
                            person_id: self.data.person_ids[i].clone(),
                            item_id: self.data.item_ids[j].clone(),
                        };
                    }
                }
            }
        }
        IrtError::NumericFailure {
            person: kept_persons[0],
            item: kept_items[0],
            person_id: self.data.person_ids[0].clone(),
            item_id: self.data.item_ids[0].clone(),
        }
    }
}

struct Runner<'a> {
    engine: Engine<'a>,
    kind: ModelKind,
    blocks: BlockSet,
    gauge: bool,
    d_bounds: (f64, f64),
}

impl Runner<'_> {
    /// One pass over all blocks followed by the gauge.
    fn sweep(&self, p: &ParameterSet) -> ParameterSet {
        let mut next = p.clone();
        next.theta = self.engine.update_theta(&next);
        next.beta = self.engine.update_beta(&next);
        if self.blocks.d_person {
            next.d_person = self.engine.update_d_person(&next);
        }
        if self.blocks.d_item {
            next.d_item = self.engine.update_d_item(&next);
        }
        self.apply_gauge(&mut next);
        next
    }

    fn apply_gauge(&self, p: &mut ParameterSet) {
        if self.gauge {
            center(p);
            fix_scale(p, self.kind, self.blocks, self.d_bounds);
        }
    }

    /// Damped joint Fisher-scoring step over every free parameter, followed
    /// by a backtracking line search. The person blocks of the information
    /// matrix are block diagonal, so they are eliminated first and only the
    /// item-side system is solved densely. Discriminations sitting on a bound
    /// with the gradient pointing outward are held fixed. Returns the new
    /// point, its objective and whether the full step was taken.
    fn joint_step(&self, p: &ParameterSet, f0: f64, lambda: f64) -> Option<(ParameterSet, f64, bool)> {
        let e = &self.engine;
        let data = e.data;
        let (n, m) = (data.n, data.m);
        let kp = 1 + usize::from(self.blocks.d_person);
        let kq = 1 + usize::from(self.blocks.d_item);
        let dim = kq * m;
        if dim > MAX_JOINT_DIM {
            return None;
        }
        let (llo, lhi) = e.log_bounds;
        let pinned = |d: f64, g: f64| {
            let u = d.ln();
            (u <= llo + 1e-12 && g < 0.0) || (u >= lhi - 1e-12 && g > 0.0)
        };
        let damp = |h: &mut [[f64; 2]; 2], k: usize| {
            for a in 0..k {
                h[a][a] = h[a][a] * (1.0 + lambda) + 1e-10;
            }
        };

        // Derivatives of the linear predictor of cell (i, j) with respect to
        // (theta_i, ln d_i) and (beta_j, ln d_j).
        let partials = |i: usize, j: usize| {
            let (di, dj) = (p.d_person[i], p.d_item[j]);
            let ds = combined_unchecked(di, dj);
            let diff = p.theta[i] - p.beta[j];
            let xp = [ds, diff * combined_partial(di, dj) * di];
            let xq = [-ds, diff * combined_partial(dj, di) * dj];
            (ds * diff, xp, xq)
        };

        struct PersonBlock {
            a_inv: [[f64; 2]; 2],
            w: [f64; 2],
            b: Vec<f64>,
            bw: Vec<f64>,
        }

        let persons: Vec<PersonBlock> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut a = [[0.0; 2]; 2];
                let mut g = [0.0; 2];
                let mut b = vec![0.0; kp * dim];
                for (j, cell) in data.row(i).iter().enumerate() {
                    let Some(y) = *cell else { continue };
                    let (x, xp, xq) = partials(i, j);
                    let (_, s, w) = cell_terms(e.link, x, y);
                    for r in 0..kp {
                        g[r] += s * xp[r];
                        for c in 0..kp {
                            a[r][c] += w * xp[r] * xp[c];
                        }
                        for c in 0..kq {
                            b[r * dim + kq * j + c] = w * xp[r] * xq[c];
                        }
                    }
                }
                a[0][0] += e.penalty;
                g[0] -= e.penalty * p.theta[i];
                if kp == 2 && pinned(p.d_person[i], g[1]) {
                    a[0][1] = 0.0;
                    a[1][0] = 0.0;
                    a[1][1] = 1.0;
                    g[1] = 0.0;
                    b[dim..].fill(0.0);
                }
                damp(&mut a, kp);
                let a_inv = if kp == 1 {
                    [[1.0 / a[0][0], 0.0], [0.0, 0.0]]
                } else {
                    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
                };
                let w = [
                    a_inv[0][0] * g[0] + a_inv[0][1] * g[1],
                    a_inv[1][0] * g[0] + a_inv[1][1] * g[1],
                ];
                // Rows of A^-1 B.
                let mut bw = vec![0.0; kp * dim];
                for r in 0..kp {
                    for c in 0..kp {
                        let f = a_inv[r][c];
                        if f != 0.0 {
                            for k in 0..dim {
                                bw[r * dim + k] += f * b[c * dim + k];
                            }
                        }
                    }
                }
                PersonBlock { a_inv, w, b, bw }
            })
            .collect();

        let items: Vec<([[f64; 2]; 2], [f64; 2], bool)> = (0..m)
            .into_par_iter()
            .map(|j| {
                let mut c = [[0.0; 2]; 2];
                let mut g = [0.0; 2];
                for (i, cell) in data.col(j).iter().enumerate() {
                    let Some(y) = *cell else { continue };
                    let (x, _, xq) = partials(i, j);
                    let (_, s, w) = cell_terms(e.link, x, y);
                    for r in 0..kq {
                        g[r] += s * xq[r];
                        for k in 0..kq {
                            c[r][k] += w * xq[r] * xq[k];
                        }
                    }
                }
                c[0][0] += e.penalty;
                g[0] -= e.penalty * p.beta[j];
                let frozen = kq == 2 && pinned(p.d_item[j], g[1]);
                if frozen {
                    c[0][1] = 0.0;
                    c[1][0] = 0.0;
                    c[1][1] = 1.0;
                    g[1] = 0.0;
                }
                damp(&mut c, kq);
                (c, g, frozen)
            })
            .collect();

        let mut s = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (j, (c, g, _)) in items.iter().enumerate() {
            for r in 0..kq {
                rhs[kq * j + r] = g[r];
                for k in 0..kq {
                    s[(kq * j + r, kq * j + k)] = c[r][k];
                }
            }
        }
        let frozen_item = |k: usize| kq == 2 && k % 2 == 1 && items[k / 2].2;
        for pb in &persons {
            for r in 0..kp {
                let brow = &pb.b[r * dim..(r + 1) * dim];
                let wrow = &pb.bw[r * dim..(r + 1) * dim];
                for (k, &bk) in brow.iter().enumerate() {
                    if bk == 0.0 || frozen_item(k) {
                        continue;
                    }
                    rhs[k] -= bk * pb.w[r];
                    for (l, &wl) in wrow.iter().enumerate() {
                        s[(k, l)] -= bk * wl;
                    }
                }
            }
        }
        for k in (0..dim).filter(|&k| frozen_item(k)) {
            for l in 0..dim {
                s[(k, l)] = 0.0;
                s[(l, k)] = 0.0;
            }
            s[(k, k)] = 1.0;
            rhs[k] = 0.0;
        }
        let dq = s.cholesky()?.solve(&rhs);
        if dq.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dp: Vec<[f64; 2]> = persons
            .iter()
            .map(|pb| {
                let mut bq = [0.0; 2];
                for r in 0..kp {
                    bq[r] = pb.b[r * dim..(r + 1) * dim]
                        .iter()
                        .zip(dq.iter())
                        .map(|(b, d)| b * d)
                        .sum();
                }
                let a = &pb.a_inv;
                [
                    pb.w[0] - (a[0][0] * bq[0] + a[0][1] * bq[1]),
                    pb.w[1] - (a[1][0] * bq[0] + a[1][1] * bq[1]),
                ]
            })
            .collect();

        let (lo, hi) = self.d_bounds;
        let mut t = 1.0;
        for _ in 0..JOINT_HALVINGS {
            let mut trial = p.clone();
            for i in 0..n {
                trial.theta[i] += t * dp[i][0];
                if kp == 2 {
                    trial.d_person[i] = (p.d_person[i].ln() + t * dp[i][1]).exp().clamp(lo, hi);
                }
            }
            for j in 0..m {
                trial.beta[j] += t * dq[kq * j];
                if kq == 2 {
                    trial.d_item[j] = (p.d_item[j].ln() + t * dq[kq * j + 1]).exp().clamp(lo, hi);
                }
            }
            self.apply_gauge(&mut trial);
            let f = e.objective(&trial);
            if f.is_finite() && f >= f0 {
                return Some((trial, f, t == 1.0));
            }
            t *= 0.5;
        }
        None
    }
}

fn run(
    prepared: &Prepared,
    spec: ModelSpec,
    cfg: &EstimationConfig,
    start: ParameterSet,
    blocks: BlockSet,
) -> Result<FitResult> {
    let engine = Engine {
        data: &prepared.data,
        link: spec.link,
        penalty: match prepared.policy {
            ExtremeScorePolicy::Exclude => 0.0,
            ExtremeScorePolicy::Penalize => PENALTY_WEIGHT,
        },
        damping: cfg.step_damping,
        log_bounds: cfg.log_bounds(),
    };
    let runner = Runner {
        engine,
        kind: spec.kind,
        blocks,
        gauge: prepared.policy == ExtremeScorePolicy::Exclude,
        d_bounds: cfg.d_bounds,
    };
    let engine = &runner.engine;
    let failure = |p: &ParameterSet| engine.numeric_failure(p, &prepared.kept_persons, &prepared.kept_items);

    let mut params = start;
    let first = engine.objective(&params);
    if !first.is_finite() {
        return Err(failure(&params));
    }
    let mut trace = vec![first];
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;

    let mut lambda = LAMBDA_START;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut next = runner.sweep(&params);
        let mut value = engine.objective(&next);
        if cfg.accelerate && value.is_finite() {
            match runner.joint_step(&next, value, lambda) {
                Some((p, v, full)) => {
                    next = p;
                    value = v;
                    lambda = if full {
                        (lambda * 0.1).max(LAMBDA_MIN)
                    } else {
                        lambda * 10.0
                    };
                }
                None => lambda = (lambda * 10.0).min(LAMBDA_MAX),
            }
        }
        if !value.is_finite() {
            return Err(failure(&next));
        }
        last_change = max_change(&params, &next);
        params = next;
        trace.push(value);
        if last_change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let reduced_ll = {
        let plain = Engine {
            penalty: 0.0,
            ..runner.engine
        };
        plain.objective(&params)
    };
    Ok(FitResult {
        spec,
        params,
        loglik_trace: trace,
        log_likelihood: reduced_ll,
        iterations,
        converged,
        last_change,
        excluded_persons: prepared.excluded_persons.clone(),
        excluded_items: prepared.excluded_items.clone(),
        kept_persons: prepared.kept_persons.clone(),
        kept_items: prepared.kept_items.clone(),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max_change(a: &ParameterSet, b: &ParameterSet) -> f64 {
    let pairs = a
        .theta
        .iter()
        .zip(&b.theta)
        .chain(a.beta.iter().zip(&b.beta))
        .chain(a.d_person.iter().zip(&b.d_person))
        .chain(a.d_item.iter().zip(&b.d_item));
    pairs.map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn center(p: &mut ParameterSet) {
    let shift = mean(&p.theta);
    p.theta.iter_mut().for_each(|t| *t -= shift);
    p.beta.iter_mut().for_each(|b| *b -= shift);
}

fn geometric_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x.ln(), n + 1));
    (sum / n as f64).exp()
}

/// Discrimination whose combination with `other` equals `combined`.
fn partner_for(combined: f64, other: f64) -> f64 {
    1.0 / (1.0 / (combined * combined) - 1.0 / (other * other)).sqrt()
}

/// Applies the scale gauge: multiplies the combined discriminations by a
/// common factor `c` and divides all strengths by it. `c` is limited so that
/// every discrimination stays inside its bounds, which keeps the likelihood
/// unchanged.
fn fix_scale(p: &mut ParameterSet, kind: ModelKind, blocks: BlockSet, (lo, hi): (f64, f64)) {
    if !blocks.any() {
        return;
    }
    let c = match kind {
        ModelKind::ThreeParam => {
            let target = FIXED_DISCRIMINATION / geometric_mean(p.d_item.iter().copied());
            let all = || p.d_person.iter().chain(&p.d_item);
            let c_min = all().map(|&d| lo / d).fold(0.0, f64::max);
            let c_max = all().map(|&d| hi / d).fold(f64::INFINITY, f64::min);
            let c = target.clamp(c_min.min(1.0), c_max.max(1.0));
            if c == 1.0 {
                return;
            }
            p.d_person.iter_mut().for_each(|d| *d *= c);
            p.d_item.iter_mut().for_each(|d| *d *= c);
            c
        }
        ModelKind::TwoParamItem | ModelKind::TwoParamPerson => {
            let block = if kind == ModelKind::TwoParamItem {
                &mut p.d_item
            } else {
                &mut p.d_person
            };
            let fixed = FIXED_DISCRIMINATION;
            let combined: Vec<f64> = block.iter().map(|&d| combined_unchecked(d, fixed)).collect();
            let target = 1.0 / geometric_mean(combined.iter().copied());
            let (a_lo, a_hi) = (combined_unchecked(lo, fixed), combined_unchecked(hi, fixed));
            let c_min = combined.iter().map(|&a| a_lo / a).fold(0.0, f64::max);
            let c_max = combined.iter().map(|&a| a_hi / a).fold(f64::INFINITY, f64::min);
            let c = target.clamp(c_min.min(1.0), c_max.max(1.0));
            if c == 1.0 {
                return;
            }
            for (d, a) in block.iter_mut().zip(&combined) {
                *d = partner_for(a * c, fixed).clamp(lo, hi);
            }
            c
        }
        ModelKind::Rasch => return,
    };
    p.theta.iter_mut().for_each(|t| *t /= c);
    p.beta.iter_mut().for_each(|b| *b /= c);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec::new(kind, LinkFunction::Logistic)
    }

    #[test]
    fn single_cell_loglik() {
        let m = ResponseMatrix::from_binary(&[vec![1, 0], vec![0, 1]]).unwrap();
        let p = ParameterSet::neutral(2, 2);
        let ll = log_likelihood(&m, &p, spec(ModelKind::Rasch)).unwrap();
        assert_abs_diff_eq!(ll, 4.0 * 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn missing_cells_are_skipped() {
        let m = ResponseMatrix::from_rows(&[vec![Some(true), None], vec![None, Some(false)]]).unwrap();
        let p = ParameterSet::neutral(2, 2);
        let ll = log_likelihood(&m, &p, spec(ModelKind::Rasch)).unwrap();
        assert_abs_diff_eq!(ll, 2.0 * 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn clamped_loglik_is_finite() {
        let m = ResponseMatrix::from_binary(&[vec![1, 1], vec![1, 1]]).unwrap();
        let mut p = ParameterSet::neutral(2, 2);
        p.theta = vec![1e4, 1e4];
        let ll = log_likelihood(&m, &p, spec(ModelKind::Rasch)).unwrap();
        assert!(ll.is_finite());
        assert!(ll >= 4.0 * (1.0 - PROB_EPS).ln());
        p.theta = vec![-1e4, -1e4];
        let ll = log_likelihood(&m, &p, spec(ModelKind::Rasch)).unwrap();
        assert_abs_diff_eq!(ll, 4.0 * PROB_EPS.ln(), epsilon = 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let m = ResponseMatrix::from_binary(&[vec![1, 0], vec![0, 1]]).unwrap();
        let p = ParameterSet::neutral(3, 2);
        assert!(log_likelihood(&m, &p, spec(ModelKind::Rasch)).is_err());
        assert!(loglik_gradient(&m, &p, spec(ModelKind::Rasch)).is_err());
    }

    #[test]
    fn rasch_single_cell_gradient_antisymmetry() {
        let m = ResponseMatrix::from_rows(&[vec![Some(true), None], vec![None, None]]).unwrap();
        let mut p = ParameterSet::neutral(2, 2);
        p.theta[0] = 0.3;
        p.beta[0] = -0.4;
        let g = loglik_gradient(&m, &p, spec(ModelKind::Rasch)).unwrap();
        assert_eq!(g.theta[0], -g.beta[0]);
        assert_abs_diff_eq!(g.theta[0], 1.0 - crate::model::logistic(0.7), epsilon = 1e-15);
        assert!(g.d_person.is_none() && g.d_item.is_none());
    }

    #[test]
    fn config_validation() {
        assert!(EstimationConfig::default().validate().is_ok());
        let bad = EstimationConfig {
            d_bounds: (1.5, 5.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let frozen = EstimationConfig {
            d_bounds: (SQRT_2, SQRT_2),
            ..Default::default()
        };
        assert!(frozen.validate().is_ok());
        assert!(!frozen.d_block_free());
        let tol = EstimationConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(tol.validate().is_err());
    }

    #[test]
    fn extremes_are_excluded_until_stable() {
        // Person 0 is perfect; once dropped, item 2 is failed by everyone left.
        let m = ResponseMatrix::from_binary(&[
            vec![1, 1, 1, 1],
            vec![1, 0, 0, 1],
            vec![0, 1, 0, 0],
            vec![1, 0, 0, 0],
            vec![0, 1, 0, 1],
        ])
        .unwrap();
        let (p, i) = drop_extremes(&m);
        assert_eq!(p, vec![1, 2, 3, 4]);
        assert_eq!(i, vec![0, 1, 3]);
    }

    #[test]
    fn all_missing_row_is_rejected() {
        let m = ResponseMatrix::from_rows(&[
            vec![Some(true), Some(false)],
            vec![None, None],
            vec![Some(false), Some(true)],
        ])
        .unwrap();
        assert!(matches!(
            estimate_rasch(&m, LinkFunction::Logistic, &EstimationConfig::default()),
            Err(IrtError::Domain(_))
        ));
    }

    #[test]
    fn refusal_when_nothing_is_left() {
        let m = ResponseMatrix::from_binary(&[vec![1, 1], vec![0, 0], vec![1, 1]]).unwrap();
        assert!(matches!(
            estimate_rasch(&m, LinkFunction::Logistic, &EstimationConfig::default()),
            Err(IrtError::Refusal(_))
        ));
    }

    #[test]
    fn partner_inverts_combination() {
        for d in [0.2, 0.9, SQRT_2, 3.0, 5.0] {
            let a = combined_unchecked(d, SQRT_2);
            assert_abs_diff_eq!(partner_for(a, SQRT_2), d, epsilon = 1e-12);
        }
    }

    #[test]
    fn scale_gauge_preserves_likelihood() {
        let m = ResponseMatrix::from_binary(&[
            vec![1, 0, 1, 0],
            vec![1, 1, 0, 0],
            vec![0, 1, 1, 1],
            vec![1, 0, 0, 1],
        ])
        .unwrap();
        let mut p = ParameterSet::neutral(4, 4);
        p.theta = vec![0.5, -0.2, 0.8, -1.1];
        p.beta = vec![-0.3, 0.1, 0.4, 0.0];
        p.d_person = vec![0.9, 2.0, 1.2, 3.1];
        p.d_item = vec![1.1, 0.7, 2.5, 1.9];
        for kind in [
            ModelKind::TwoParamItem,
            ModelKind::TwoParamPerson,
            ModelKind::ThreeParam,
        ] {
            let s = spec(kind);
            let q = p.with_fixings(kind);
            let before = log_likelihood(&m, &q, s).unwrap();
            let mut g = q.clone();
            let blocks = BlockSet {
                d_person: kind.frees_person_d(),
                d_item: kind.frees_item_d(),
            };
            fix_scale(&mut g, kind, blocks, (0.2, 5.0));
            let after = log_likelihood(&m, &g, s).unwrap();
            assert_abs_diff_eq!(before, after, epsilon = 1e-12);
            match kind {
                ModelKind::ThreeParam => {
                    assert_abs_diff_eq!(geometric_mean(g.d_item.iter().copied()), SQRT_2, epsilon = 1e-12)
                }
                ModelKind::TwoParamItem => assert_abs_diff_eq!(
                    geometric_mean(g.d_item.iter().map(|&d| combined_unchecked(d, SQRT_2))),
                    1.0,
                    epsilon = 1e-12
                ),
                _ => assert_abs_diff_eq!(
                    geometric_mean(g.d_person.iter().map(|&d| combined_unchecked(d, SQRT_2))),
                    1.0,
                    epsilon = 1e-12
                ),
            }
        }
    }
}
