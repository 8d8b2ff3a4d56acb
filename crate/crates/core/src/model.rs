//! Link functions, model kinds and success probabilities.
//!
//! Every model evaluates `link(d_s * (theta - beta))` with the combined
//! discrimination `d_s = d_i d_j / sqrt(d_i^2 + d_j^2)`. Discriminations a
//! model does not estimate are held at `sqrt(2)`, which gives `d_s = 1` and
//! makes the Rasch model the common starting point of all four kinds.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, IrtError, Result};

/// Value of a discrimination that the model does not estimate.
pub const FIXED_DISCRIMINATION: f64 = SQRT_2;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-12;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Logistic function `1 / (1 + e^-x)`.
///
/// Evaluated without overflow for any finite `x`. In `f64` the result rounds
/// to exactly `1.0` once `x` exceeds about 36.7 and underflows to `0.0` only
/// below about -745; callers that take logarithms clamp with [`clamp_prob`].
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal cumulative distribution function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Resulting discrimination of a person/item pair: independent strength
/// fluctuations with standard deviations `1/d_i` and `1/d_j` add in variance.
pub fn combined_discrimination(d_person: f64, d_item: f64) -> Result<f64> {
    if !(d_person > 0.0 && d_person.is_finite()) || !(d_item > 0.0 && d_item.is_finite()) {
        return domain(format!(
            "discriminations must be finite and positive, got ({d_person}, {d_item})"
        ));
    }
    Ok(combined_unchecked(d_person, d_item))
}

#[inline]
pub(crate) fn combined_unchecked(d_person: f64, d_item: f64) -> f64 {
    // hypot avoids overflow for very large discriminations.
    d_person * d_item / d_person.hypot(d_item)
}

/// Partial derivative of the combined discrimination with respect to its
/// first argument: `d_j^3 / (d_i^2 + d_j^2)^(3/2)`.
#[inline]
pub(crate) fn combined_partial(d_wrt: f64, d_other: f64) -> f64 {
    let h = d_wrt.hypot(d_other);
    let r = d_other / h;
    r * r * r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkFunction {
    Logistic,
    #[serde(alias = "normal")]
    NormalOgive,
}

impl LinkFunction {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            LinkFunction::Logistic => logistic(x),
            LinkFunction::NormalOgive => normal_cdf(x),
        }
    }

    /// Derivative of the link at `x`.
    #[inline]
    pub fn density(self, x: f64) -> f64 {
        match self {
            LinkFunction::Logistic => {
                let p = logistic(x);
                p * (1.0 - p)
            }
            LinkFunction::NormalOgive => normal_pdf(x),
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            LinkFunction::Logistic => "logit",
            LinkFunction::NormalOgive => "probit",
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkFunction::Logistic => "logistic",
            LinkFunction::NormalOgive => "normal",
        })
    }
}

impl FromStr for LinkFunction {
    type Err = IrtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" | "logit" => Ok(LinkFunction::Logistic),
            "normal" | "normal-ogive" | "probit" => Ok(LinkFunction::NormalOgive),
            other => domain(format!("unknown link {other:?} (expected logistic or normal)")),
        }
    }
}

/// Which discriminations a model estimates.
///
/// Ordered as the columns of the ranked tables: Rasch, Birnbaum with item
/// discrimination, Birnbaum with person discrimination, both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "rasch")]
    Rasch,
    #[serde(rename = "2pl-item")]
    TwoParamItem,
    #[serde(rename = "2pl-person")]
    TwoParamPerson,
    #[serde(rename = "3p")]
    ThreeParam,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Rasch,
        ModelKind::TwoParamItem,
        ModelKind::TwoParamPerson,
        ModelKind::ThreeParam,
    ];

    pub fn frees_person_d(self) -> bool {
        matches!(self, ModelKind::TwoParamPerson | ModelKind::ThreeParam)
    }

    pub fn frees_item_d(self) -> bool {
        matches!(self, ModelKind::TwoParamItem | ModelKind::ThreeParam)
    }

    /// Short name used on the command line.
    pub fn code(self) -> &'static str {
        match self {
            ModelKind::Rasch => "rasch",
            ModelKind::TwoParamItem => "2pl-item",
            ModelKind::TwoParamPerson => "2pl-person",
            ModelKind::ThreeParam => "3p",
        }
    }

    /// Column title in report tables.
    pub fn title(self) -> &'static str {
        match self {
            ModelKind::Rasch => "Rasch",
            ModelKind::TwoParamItem => "Birnbaum-v1",
            ModelKind::TwoParamPerson => "Birnbaum-v2",
            ModelKind::ThreeParam => "ThreeParam",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ModelKind {
    type Err = IrtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rasch" | "1pl" => Ok(ModelKind::Rasch),
            "2pl-item" | "2pl" | "birnbaum" => Ok(ModelKind::TwoParamItem),
            "2pl-person" => Ok(ModelKind::TwoParamPerson),
            "3p" | "three-param" => Ok(ModelKind::ThreeParam),
            other => domain(format!(
                "unknown model {other:?} (expected rasch, 2pl-item, 2pl-person or 3p)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub link: LinkFunction,
}

impl ModelSpec {
    pub const fn new(kind: ModelKind, link: LinkFunction) -> Self {
        Self { kind, link }
    }

    /// Discrimination pair actually used by this model for the given values.
    #[inline]
    pub fn effective_d(&self, d_person: f64, d_item: f64) -> (f64, f64) {
        (
            if self.kind.frees_person_d() {
                d_person
            } else {
                FIXED_DISCRIMINATION
            },
            if self.kind.frees_item_d() {
                d_item
            } else {
                FIXED_DISCRIMINATION
            },
        )
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.link)
    }
}

/// Probability that a person of strength `theta` succeeds on an item of
/// strength `beta`. Discriminations the model does not estimate are replaced
/// by `sqrt(2)` regardless of the values passed. The result is clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`, so it always lies strictly inside (0, 1).
pub fn success_probability(
    spec: ModelSpec,
    theta: f64,
    beta: f64,
    d_person: f64,
    d_item: f64,
) -> Result<f64> {
    combined_discrimination(d_person, d_item)?;
    let (di, dj) = spec.effective_d(d_person, d_item);
    let ds = combined_discrimination(di, dj)?;
    Ok(clamp_prob(spec.link.eval(ds * (theta - beta))))
}

/// Person and item parameters on one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub d_person: Vec<f64>,
    pub d_item: Vec<f64>,
}

impl ParameterSet {
    /// All strengths zero, all discriminations `sqrt(2)`.
    pub fn neutral(n_persons: usize, n_items: usize) -> Self {
        Self {
            theta: vec![0.0; n_persons],
            beta: vec![0.0; n_items],
            d_person: vec![FIXED_DISCRIMINATION; n_persons],
            d_item: vec![FIXED_DISCRIMINATION; n_items],
        }
    }

    pub fn n_persons(&self) -> usize {
        self.theta.len()
    }

    pub fn n_items(&self) -> usize {
        self.beta.len()
    }

    /// Copy with the discriminations a model does not estimate reset to `sqrt(2)`.
    pub fn with_fixings(&self, kind: ModelKind) -> Self {
        let mut out = self.clone();
        if !kind.frees_person_d() {
            out.d_person.fill(FIXED_DISCRIMINATION);
        }
        if !kind.frees_item_d() {
            out.d_item.fill(FIXED_DISCRIMINATION);
        }
        out
    }

    pub fn check_dims(&self, n_persons: usize, n_items: usize) -> Result<()> {
        if self.theta.len() != n_persons
            || self.d_person.len() != n_persons
            || self.beta.len() != n_items
            || self.d_item.len() != n_items
        {
            return domain(format!(
                "parameter dimensions (theta {}, d_person {}, beta {}, d_item {}) do not match {}x{} matrix",
                self.theta.len(),
                self.d_person.len(),
                self.beta.len(),
                self.d_item.len(),
                n_persons,
                n_items
            ));
        }
        Ok(())
    }

    pub fn check_values(&self) -> Result<()> {
        if self.theta.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return domain("strengths must be finite");
        }
        if self
            .d_person
            .iter()
            .chain(&self.d_item)
            .any(|&d| !(d > 0.0 && d.is_finite()))
        {
            return domain("discriminations must be finite and positive");
        }
        Ok(())
    }
}
