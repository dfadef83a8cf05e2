//! Annotation campaign costs, in units of one annotation task.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("spam fraction {0} must lie in [0, 1)")]
    SpamFraction(f64),
    #[error("quality-control period a_w = {0} must be at least 2")]
    ControlPeriod(f64),
    #[error("parameter `{0}` must be finite and non-negative")]
    Negative(&'static str),
    #[error("params file: {0}")]
    Parse(String),
    #[error("unknown cost method `{0}`")]
    UnknownMethod(String),
}

/// Quality estimation followed by confidence-weighted fusion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProposedParams {
    /// Annotations fused per result.
    pub a_mv: f64,
    /// Annotations spent on training the estimator.
    pub a_t: f64,
    /// Expected spam fraction.
    pub s: f64,
}

/// Majority voting with a reference task every `a_w` tasks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaselineParams {
    pub a_mv: f64,
    pub a_w: f64,
    /// Reference annotations to prepare.
    pub a_r: f64,
}

/// Worker qualification plus manual verification.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ManualGradingParams {
    pub s: f64,
    pub n_c: f64,
    pub n_w: f64,
    pub n_aw: f64,
    pub a_aw: f64,
    pub r: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostParams {
    pub proposed: ProposedParams,
    pub baseline: BaselineParams,
    pub manual_grading: ManualGradingParams,
}

fn non_negative(name: &'static str, v: f64) -> Result<(), CostError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(CostError::Negative(name))
    }
}

fn spam(s: f64) -> Result<(), CostError> {
    if (0.0..1.0).contains(&s) {
        Ok(())
    } else {
        Err(CostError::SpamFraction(s))
    }
}

impl ProposedParams {
    pub fn validate(&self) -> Result<(), CostError> {
        non_negative("a_mv", self.a_mv)?;
        non_negative("a_t", self.a_t)?;
        spam(self.s)
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<(), CostError> {
        non_negative("a_mv", self.a_mv)?;
        non_negative("a_r", self.a_r)?;
        if !(self.a_w >= 2.0) {
            return Err(CostError::ControlPeriod(self.a_w));
        }
        Ok(())
    }
}

impl ManualGradingParams {
    pub fn validate(&self) -> Result<(), CostError> {
        for (n, v) in [
            ("n_c", self.n_c),
            ("n_w", self.n_w),
            ("n_aw", self.n_aw),
            ("A_aw", self.a_aw),
            ("r", self.r),
            ("v", self.v),
        ] {
            non_negative(n, v)?;
        }
        spam(self.s)
    }
}

/// `a_t + (a + s/(1−s)·a)·a_mv`
pub fn cost_proposed(a: f64, p: &ProposedParams) -> f64 {
    p.a_t + (a + p.s / (1.0 - p.s) * a) * p.a_mv
}

/// `a_mv·a + a_mv·a/(a_w − 1) + a_r`
pub fn cost_baseline(a: f64, p: &BaselineParams) -> f64 {
    p.a_mv * a + p.a_mv * a / (p.a_w - 1.0) + p.a_r
}

/// `a/(1−s) + n_c·n_w + A_aw·n_aw·r + v`
pub fn cost_manual_grading(a: f64, p: &ManualGradingParams) -> f64 {
    a / (1.0 - p.s) + p.n_c * p.n_w + p.a_aw * p.n_aw * p.r + p.v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMethod {
    Proposed,
    Baseline,
    ManualGrading,
}

impl CostMethod {
    pub const ALL: [CostMethod; 3] = [CostMethod::Proposed, CostMethod::Baseline, CostMethod::ManualGrading];
}

impl fmt::Display for CostMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            CostMethod::Proposed => "proposed",
            CostMethod::Baseline => "baseline",
            CostMethod::ManualGrading => "manual_grading",
        })
    }
}

impl FromStr for CostMethod {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, CostError> {
        match s {
            "proposed" => Ok(CostMethod::Proposed),
            "baseline" => Ok(CostMethod::Baseline),
            "manual_grading" | "manual-grading" => Ok(CostMethod::ManualGrading),
            _ => Err(CostError::UnknownMethod(s.to_string())),
        }
    }
}

/// `cost(a) = slope·a + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub slope: f64,
    pub intercept: f64,
}

impl Affine {
    pub fn eval(&self, a: f64) -> f64 {
        self.slope * a + self.intercept
    }
}

impl CostParams {
    pub fn cost(&self, method: CostMethod, a: f64) -> f64 {
        match method {
            CostMethod::Proposed => cost_proposed(a, &self.proposed),
            CostMethod::Baseline => cost_baseline(a, &self.baseline),
            CostMethod::ManualGrading => cost_manual_grading(a, &self.manual_grading),
        }
    }

    pub fn affine(&self, method: CostMethod) -> Affine {
        Affine { slope: self.cost(method, 1.0) - self.cost(method, 0.0), intercept: self.cost(method, 0.0) }
    }

    /// Parses the TOML params file. Sections `[proposed]`, `[baseline]` and
    /// `[manual_grading]` are all optional; absent fields become 0 with a
    /// warning.
    pub fn from_toml(text: &str) -> Result<Self, CostError> {
        let raw: RawParams = toml::from_str(text).map_err(|e| CostError::Parse(e.to_string()))?;
        let take = |section: &str, name: &str, v: Option<f64>| {
            v.unwrap_or_else(|| {
                log::warn!("[{section}] {name} not set, using 0");
                0.0
            })
        };
        let p = raw.proposed.unwrap_or_default();
        let b = raw.baseline.unwrap_or_default();
        let m = raw.manual_grading.unwrap_or_default();
        Ok(CostParams {
            proposed: ProposedParams {
                a_mv: take("proposed", "a_mv", p.a_mv),
                a_t: take("proposed", "a_t", p.a_t),
                s: take("proposed", "s", p.s),
            },
            baseline: BaselineParams {
                a_mv: take("baseline", "a_mv", b.a_mv),
                a_w: take("baseline", "a_w", b.a_w),
                a_r: take("baseline", "a_r", b.a_r),
            },
            manual_grading: ManualGradingParams {
                s: take("manual_grading", "s", m.s),
                n_c: take("manual_grading", "n_c", m.n_c),
                n_w: take("manual_grading", "n_w", m.n_w),
                n_aw: take("manual_grading", "n_aw", m.n_aw),
                a_aw: take("manual_grading", "A_aw", m.a_aw),
                r: take("manual_grading", "r", m.r),
                v: take("manual_grading", "v", m.v),
            },
        })
    }

    pub fn validate(&self, method: CostMethod) -> Result<(), CostError> {
        match method {
            CostMethod::Proposed => self.proposed.validate(),
            CostMethod::Baseline => self.baseline.validate(),
            CostMethod::ManualGrading => self.manual_grading.validate(),
        }
    }

    /// Tab-separated `a` then one column per valid method, costs scaled by
    /// `unit_cost`. Methods with invalid parameters are left out.
    pub fn cost_table(&self, max_a: u64, step: u64, unit_cost: f64) -> String {
        let methods: Vec<CostMethod> = CostMethod::ALL.into_iter().filter(|&m| self.validate(m).is_ok()).collect();
        let mut out = String::from("a");
        for m in &methods {
            write!(out, "\t{m}").unwrap();
        }
        out.push('\n');
        let step = step.max(1);
        let mut a = 0;
        loop {
            write!(out, "{a}").unwrap();
            for &m in &methods {
                write!(out, "\t{:.4}", self.cost(m, a as f64) * unit_cost).unwrap();
            }
            out.push('\n');
            if a >= max_a {
                break;
            }
            a = (a + step).min(max_a);
        }
        out
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProposed {
    a_mv: Option<f64>,
    a_t: Option<f64>,
    s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaseline {
    a_mv: Option<f64>,
    a_w: Option<f64>,
    a_r: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManual {
    s: Option<f64>,
    n_c: Option<f64>,
    n_w: Option<f64>,
    n_aw: Option<f64>,
    #[serde(rename = "A_aw")]
    a_aw: Option<f64>,
    r: Option<f64>,
    v: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    proposed: Option<RawProposed>,
    baseline: Option<RawBaseline>,
    manual_grading: Option<RawManual>,
}

/// Smallest integer `a ≥ 0` with `first(a) ≤ second(a)`, or `None` when no
/// such `a` exists.
pub fn break_even(first: Affine, second: Affine) -> Option<u64> {
    let le = |a: u64| first.eval(a as f64) <= second.eval(a as f64);
    let ds = first.slope - second.slope;
    let di = first.intercept - second.intercept;
    if ds >= 0.0 {
        // first never falls further behind; either it starts ahead or never catches up
        return le(0).then_some(0);
    }
    let mut a = (di / -ds).ceil().max(0.0) as u64;
    while !le(a) {
        a += 1;
    }
    while a > 0 && le(a - 1) {
        a -= 1;
    }
    Some(a)
}

/// Break-even between two methods under one parameter set.
pub fn break_even_methods(
    params: &CostParams,
    first: CostMethod,
    second: CostMethod,
) -> Result<Option<u64>, CostError> {
    params.validate(first)?;
    params.validate(second)?;
    Ok(break_even(params.affine(first), params.affine(second)))
}
