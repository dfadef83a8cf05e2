//! Fusing several binary masks of the same image.
//!
//! Plain majority voting, confidence-weighted majority voting driven by
//! estimated quality, binary STAPLE, and STAPLE restricted to annotations
//! whose estimated quality clears a threshold.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::Mask;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("no masks to fuse")]
    Empty,
    #[error("mask {index} is {got:?}, expected {expected:?}")]
    DimensionMismatch { index: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("{masks} masks but {estimates} estimates")]
    LengthMismatch { masks: usize, estimates: usize },
    #[error("estimate {s_hat} is below the threshold {epsilon_t}")]
    BelowThreshold { s_hat: f64, epsilon_t: f64 },
    #[error("threshold {0} must lie in [0, 1)")]
    BadThreshold(f64),
    #[error("STAPLE needs at least two masks, got {0}")]
    TooFewRaters(usize),
    #[error("unknown fusion method `{0}`")]
    UnknownMethod(String),
}

/// Normalized confidence `(ŝ − ε_t) / (1 − ε_t)`; `None` below the threshold.
pub fn confidence(s_hat: f64, epsilon_t: f64) -> Option<f64> {
    (s_hat >= epsilon_t).then(|| ((s_hat - epsilon_t) / (1.0 - epsilon_t)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityEstimate {
    pub s_hat: f64,
    pub kappa: Option<f64>,
}

impl QualityEstimate {
    pub fn new(s_hat: f64, epsilon_t: f64) -> Self {
        QualityEstimate { s_hat, kappa: confidence(s_hat, epsilon_t) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filtered {
    /// Indices of accepted annotations, in input order.
    pub accepted: Vec<usize>,
    pub rejected: usize,
}

/// Keeps annotations with `ŝ ≥ ε_t`.
pub fn filter_by_threshold(estimates: &[f64], epsilon_t: f64) -> Filtered {
    let accepted: Vec<usize> = (0..estimates.len()).filter(|&i| estimates[i] >= epsilon_t).collect();
    let rejected = estimates.len() - accepted.len();
    Filtered { accepted, rejected }
}

fn check_shapes(masks: &[&Mask]) -> Result<(usize, usize), FusionError> {
    let first = masks.first().ok_or(FusionError::Empty)?;
    let expected = (first.width(), first.height());
    for (index, m) in masks.iter().enumerate() {
        let got = (m.width(), m.height());
        if got != expected {
            return Err(FusionError::DimensionMismatch { index, expected, got });
        }
    }
    Ok(expected)
}

/// Smallest strict majority of `lambda` voters.
pub fn majority_threshold(lambda: usize) -> usize {
    lambda / 2 + 1
}

/// Pixel set iff more than half of the masks set it.
pub fn majority_vote(masks: &[&Mask]) -> Result<Mask, FusionError> {
    let (w, h) = check_shapes(masks)?;
    let mu = majority_threshold(masks.len());
    let mut counts = vec![0usize; w * h];
    for m in masks {
        for (c, &b) in counts.iter_mut().zip(m.bits()) {
            *c += b as usize;
        }
    }
    Ok(Mask::from_bits(w, h, counts.into_iter().map(|c| c >= mu).collect()))
}

/// Relative slack for the `ΔU ≥ ψ` comparison so that exact ties survive
/// rounding in the accumulated sums.
const TIE_SLACK: f64 = 1e-12;

/// Confidence-weighted majority vote over accepted masks.
///
/// Each mask contributes its confidence κ to the pixels it covers; a pixel is
/// kept when its accumulated weight reaches `max(ΔU) / λ · μ`.
pub fn confidence_weighted_mv(masks: &[&Mask], s_hat: &[f64], epsilon_t: f64) -> Result<Mask, FusionError> {
    if !(0.0..1.0).contains(&epsilon_t) {
        return Err(FusionError::BadThreshold(epsilon_t));
    }
    let (w, h) = check_shapes(masks)?;
    if masks.len() != s_hat.len() {
        return Err(FusionError::LengthMismatch { masks: masks.len(), estimates: s_hat.len() });
    }
    let kappa: Vec<f64> = s_hat
        .iter()
        .map(|&s| confidence(s, epsilon_t).ok_or(FusionError::BelowThreshold { s_hat: s, epsilon_t }))
        .collect::<Result<_, _>>()?;
    let lambda = masks.len();
    if lambda == 1 {
        return Ok(masks[0].clone());
    }
    weighted_vote(masks, &kappa, w, h)
}

/// Weighted vote with explicit weights; exposed for callers that already
/// hold confidences.
pub fn weighted_vote_with(masks: &[&Mask], kappa: &[f64]) -> Result<Mask, FusionError> {
    let (w, h) = check_shapes(masks)?;
    if masks.len() != kappa.len() {
        return Err(FusionError::LengthMismatch { masks: masks.len(), estimates: kappa.len() });
    }
    if masks.len() == 1 {
        return Ok(masks[0].clone());
    }
    weighted_vote(masks, kappa, w, h)
}

fn weighted_vote(masks: &[&Mask], kappa: &[f64], w: usize, h: usize) -> Result<Mask, FusionError> {
    let lambda = masks.len();
    let mut acc = vec![0.0f64; w * h];
    for (m, &k) in masks.iter().zip(kappa) {
        for (a, &b) in acc.iter_mut().zip(m.bits()) {
            if b {
                *a += k;
            }
        }
    }
    let max = acc.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        let union_empty = masks.iter().all(|m| m.is_empty());
        return if union_empty {
            Ok(Mask::new(w, h))
        } else {
            // every accepted estimate sits exactly on the threshold
            majority_vote(masks)
        };
    }
    let psi = max / lambda as f64 * majority_threshold(lambda) as f64;
    let cut = psi - TIE_SLACK * max;
    Ok(Mask::from_bits(w, h, acc.into_iter().map(|a| a > 0.0 && a >= cut).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StapleParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StapleParams {
    fn default() -> Self {
        StapleParams { tol: 1e-7, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StapleResult {
    pub mask: Mask,
    /// Per-rater sensitivity.
    pub p: Vec<f64>,
    /// Per-rater specificity.
    pub q: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// All inputs were empty; the output is the empty mask.
    pub degenerate: bool,
}

const PROB_MIN: f64 = 1e-6;
const PROB_INIT: f64 = 0.99999;

fn clamp_prob(v: f64) -> f64 {
    v.clamp(PROB_MIN, 1.0 - PROB_MIN)
}

/// Binary STAPLE expectation-maximization.
pub fn staple(masks: &[&Mask], params: &StapleParams) -> Result<StapleResult, FusionError> {
    let (w, h) = check_shapes(masks)?;
    let r = masks.len();
    if r < 2 {
        return Err(FusionError::TooFewRaters(r));
    }
    let n = w * h;
    let total_fg: usize = masks.iter().map(|m| m.count()).sum();
    if total_fg == 0 {
        return Ok(StapleResult {
            mask: Mask::new(w, h),
            p: vec![PROB_INIT; r],
            q: vec![PROB_INIT; r],
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }
    let prior = clamp_prob(total_fg as f64 / (n * r) as f64);
    let (log_f, log_b) = (prior.ln(), (1.0 - prior).ln());
    let mut p = vec![PROB_INIT; r];
    let mut q = vec![PROB_INIT; r];
    let mut post = vec![0.0f64; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        iterations += 1;
        let lp: Vec<(f64, f64)> = p.iter().map(|&v| (v.ln(), (1.0 - v).ln())).collect();
        let lq: Vec<(f64, f64)> = q.iter().map(|&v| (v.ln(), (1.0 - v).ln())).collect();
        for (i, wi) in post.iter_mut().enumerate() {
            let (mut a, mut b) = (log_f, log_b);
            for j in 0..r {
                if masks[j].bits()[i] {
                    a += lp[j].0;
                    b += lq[j].1;
                } else {
                    a += lp[j].1;
                    b += lq[j].0;
                }
            }
            // logistic of the log-odds, stable for large magnitudes
            let d = b - a;
            *wi = if d > 0.0 {
                let e = (-d).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + d.exp())
            };
        }
        let sum_w: f64 = post.iter().sum();
        let sum_nw = n as f64 - sum_w;
        let mut delta = 0.0f64;
        for j in 0..r {
            let mut tp = 0.0;
            let mut tn = 0.0;
            for (i, &wi) in post.iter().enumerate() {
                if masks[j].bits()[i] {
                    tp += wi;
                } else {
                    tn += 1.0 - wi;
                }
            }
            let np = if sum_w > 0.0 { clamp_prob(tp / sum_w) } else { p[j] };
            let nq = if sum_nw > 0.0 { clamp_prob(tn / sum_nw) } else { q[j] };
            delta = delta.max((np - p[j]).abs()).max((nq - q[j]).abs());
            p[j] = np;
            q[j] = nq;
        }
        if delta < params.tol {
            converged = true;
            break;
        }
    }
    let mask = Mask::from_bits(w, h, post.iter().map(|&v| v >= 0.5).collect());
    Ok(StapleResult { mask, p, q, iterations, converged, degenerate: false })
}

/// STAPLE over the annotations whose estimate clears `ε_t`. A single
/// survivor is returned unchanged.
pub fn staple_qc(masks: &[&Mask], s_hat: &[f64], epsilon_t: f64, params: &StapleParams) -> Result<Mask, FusionError> {
    if masks.len() != s_hat.len() {
        return Err(FusionError::LengthMismatch { masks: masks.len(), estimates: s_hat.len() });
    }
    let kept = filter_by_threshold(s_hat, epsilon_t);
    let survivors: Vec<&Mask> = kept.accepted.iter().map(|&i| masks[i]).collect();
    match survivors.len() {
        0 => Err(FusionError::Empty),
        1 => {
            check_shapes(masks)?;
            Ok(survivors[0].clone())
        }
        _ => Ok(staple(&survivors, params)?.mask),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMethod {
    Majority,
    ConfidenceWeighted,
    Staple,
    StapleQc,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 4] =
        [FusionMethod::Majority, FusionMethod::ConfidenceWeighted, FusionMethod::Staple, FusionMethod::StapleQc];

    /// Whether the method uses quality estimates to pick annotations.
    pub fn uses_estimates(self) -> bool {
        matches!(self, FusionMethod::ConfidenceWeighted | FusionMethod::StapleQc)
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            FusionMethod::Majority => "mv",
            FusionMethod::ConfidenceWeighted => "cw-mv",
            FusionMethod::Staple => "staple",
            FusionMethod::StapleQc => "staple-qc",
        })
    }
}

impl FromStr for FusionMethod {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mv" | "majority" => Ok(FusionMethod::Majority),
            "cw-mv" | "confidence-weighted" => Ok(FusionMethod::ConfidenceWeighted),
            "staple" => Ok(FusionMethod::Staple),
            "staple-qc" => Ok(FusionMethod::StapleQc),
            other => Err(FusionError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub epsilon_t: f64,
    pub lambda: usize,
    pub method: FusionMethod,
    pub staple: StapleParams,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            epsilon_t: 0.9,
            lambda: 1,
            method: FusionMethod::ConfidenceWeighted,
            staple: StapleParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutcome {
    pub mask: Mask,
    /// Annotations that went into the fused mask, as pool positions.
    pub used: Vec<usize>,
    /// Annotations drawn in total (`λ + r` for estimate-driven methods).
    pub drawn: usize,
    pub rejected: usize,
    /// Fewer than λ annotations passed the threshold before the pool ran out.
    pub short: bool,
}

/// Fuses one image's pool according to `cfg`, visiting annotations in
/// `order`.
///
/// Estimate-driven methods draw until λ annotations pass the threshold. If
/// the pool runs out first, whatever was accepted is fused; if nothing was,
/// the annotation with the highest estimate is returned. Plain methods take
/// the first λ annotations.
pub fn fuse_pool(
    masks: &[&Mask],
    s_hat: &[f64],
    order: &[usize],
    cfg: &FusionConfig,
) -> Result<PoolOutcome, FusionError> {
    if masks.len() != s_hat.len() {
        return Err(FusionError::LengthMismatch { masks: masks.len(), estimates: s_hat.len() });
    }
    check_shapes(masks)?;
    if order.is_empty() || cfg.lambda == 0 {
        return Err(FusionError::Empty);
    }
    if !cfg.method.uses_estimates() {
        let used: Vec<usize> = order.iter().copied().take(cfg.lambda).collect();
        let chosen: Vec<&Mask> = used.iter().map(|&i| masks[i]).collect();
        let mask = match cfg.method {
            FusionMethod::Majority => majority_vote(&chosen)?,
            _ if chosen.len() == 1 => chosen[0].clone(),
            _ => staple(&chosen, &cfg.staple)?.mask,
        };
        let drawn = used.len();
        return Ok(PoolOutcome { mask, used, drawn, rejected: 0, short: drawn < cfg.lambda });
    }

    let mut used = Vec::new();
    let mut drawn = 0;
    for &i in order {
        if used.len() == cfg.lambda {
            break;
        }
        drawn += 1;
        if s_hat[i] >= cfg.epsilon_t {
            used.push(i);
        }
    }
    let rejected = drawn - used.len();
    let short = used.len() < cfg.lambda;
    if used.is_empty() {
        let best =
            *order.iter().max_by(|&&a, &&b| s_hat[a].total_cmp(&s_hat[b]).then(b.cmp(&a))).expect("order is non-empty");
        return Ok(PoolOutcome { mask: masks[best].clone(), used: vec![best], drawn, rejected, short });
    }
    let chosen: Vec<&Mask> = used.iter().map(|&i| masks[i]).collect();
    let est: Vec<f64> = used.iter().map(|&i| s_hat[i]).collect();
    let mask = match cfg.method {
        FusionMethod::ConfidenceWeighted => confidence_weighted_mv(&chosen, &est, cfg.epsilon_t)?,
        _ => staple_qc(&chosen, &est, cfg.epsilon_t, &cfg.staple)?,
    };
    Ok(PoolOutcome { mask, used, drawn, rejected, short })
}
