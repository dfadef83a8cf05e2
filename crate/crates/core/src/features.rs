//! Feature vector describing one annotation session.
//!
//! The layout is fixed per [`SCHEMA_VERSION`]; [`FEATURE_NAMES`] lists every
//! entry in order. Statistics blocks are `(mean, median, std, q95)`.
//! Sub-features that are undefined for a session (no corrections, fewer than
//! two clicks, zero gradient everywhere) are reported as zero.

use std::fmt::Write as _;

use thiserror::Error;

use crate::clickstream::{
    self, canvas_clicks, double_clicks, segment_strokes, zoom_count, Clickstream, EventKind, MatchTolerance, Stroke,
    Target,
};
use crate::geometry::{self, CoordinateSpace, Point, Polygon};
use crate::imaging::{sample_gradient, GradientField};

pub const SCHEMA_VERSION: &str = "clickqc-features-v1";

pub const FEATURE_NAMES: [&str; 49] = [
    "velocity_mean",
    "velocity_median",
    "velocity_std",
    "velocity_q95",
    "acceleration_mean",
    "acceleration_median",
    "acceleration_std",
    "acceleration_q95",
    "zoom_count",
    "canvas_clicks",
    "double_clicks",
    "elapsed_per_click",
    "distance_contour_ratio",
    "stroke_count",
    "draw_count",
    "correction_count",
    "event_count",
    "draw_velocity_mean",
    "draw_velocity_median",
    "draw_velocity_std",
    "draw_velocity_q95",
    "draw_acceleration_mean",
    "draw_acceleration_median",
    "draw_acceleration_std",
    "draw_acceleration_q95",
    "correction_velocity_mean",
    "correction_velocity_median",
    "correction_velocity_std",
    "correction_velocity_q95",
    "correction_acceleration_mean",
    "correction_acceleration_median",
    "correction_acceleration_std",
    "correction_acceleration_q95",
    "draw_angle_mean",
    "draw_angle_median",
    "draw_angle_std",
    "draw_angle_q95",
    "correction_angle_mean",
    "correction_angle_median",
    "correction_angle_std",
    "correction_angle_q95",
    "click_angle_mean",
    "click_angle_median",
    "click_angle_std",
    "click_angle_q95",
    "vertex_normal_angle_mean",
    "vertex_normal_angle_median",
    "vertex_normal_angle_std",
    "vertex_normal_angle_q95",
];

pub const FEATURE_COUNT: usize = FEATURE_NAMES.len();

/// Gradient magnitudes at or below this are treated as zero.
pub const GRADIENT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("need at least {needed} events, got {got}")]
    TooFewEvents { needed: usize, got: usize },
    #[error("angle undefined for a zero vector")]
    UndefinedAngle,
    #[error("feature file: {0}")]
    Format(String),
    #[error("schema mismatch: file has `{got}`, expected `{expected}`")]
    SchemaMismatch { expected: String, got: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub q95: f64,
}

impl SummaryStats {
    pub fn to_array(self) -> [f64; 4] {
        [self.mean, self.median, self.std, self.q95]
    }
}

/// Linear-interpolated quantile of sorted data (`q` in `[0, 1]`).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean, median, population std and linear-interpolated 95% quantile.
/// Empty input gives all zeros.
pub fn summary_stats(xs: &[f64]) -> SummaryStats {
    if xs.is_empty() {
        return SummaryStats::default();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    SummaryStats { mean, median, std: var.sqrt(), q95: quantile_sorted(&sorted, 0.95) }
}

/// Speed attached to one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocitySample {
    pub index: usize,
    pub t_ms: u64,
    /// Canvas displacement per ms; zero for clicks and other non-move events.
    pub velocity: Point,
    pub speed: f64,
}

/// Per-event velocity for every event after the first. Only mouse-moves get a
/// nonzero value; moves with no elapsed time are skipped.
pub fn velocity_samples(stream: &Clickstream) -> Vec<VelocitySample> {
    let ev = stream.events();
    let mut out = Vec::with_capacity(ev.len());
    for i in 1..ev.len() {
        let (prev, cur) = (&ev[i - 1], &ev[i]);
        if cur.kind != EventKind::MouseMove {
            out.push(VelocitySample { index: i, t_ms: cur.t_ms, velocity: Point::default(), speed: 0.0 });
            continue;
        }
        let dt = (cur.t_ms - prev.t_ms) as f64;
        if dt == 0.0 {
            continue;
        }
        let v = (cur.canvas_pos() - prev.canvas_pos()) * (1.0 / dt);
        out.push(VelocitySample { index: i, t_ms: cur.t_ms, velocity: v, speed: v.norm() });
    }
    out
}

/// Speeds in canvas px/ms.
pub fn velocity_series(stream: &Clickstream) -> Result<Vec<f64>, FeatureError> {
    if stream.len() < 2 {
        return Err(FeatureError::TooFewEvents { needed: 2, got: stream.len() });
    }
    Ok(velocity_samples(stream).iter().map(|s| s.speed).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelerationSample {
    pub index: usize,
    pub value: f64,
}

/// Signed change of speed per ms between consecutive velocity samples.
pub fn acceleration_samples(vel: &[VelocitySample]) -> Vec<AccelerationSample> {
    vel.windows(2)
        .filter_map(|w| {
            let dt = (w[1].t_ms - w[0].t_ms) as f64;
            (dt > 0.0).then(|| AccelerationSample { index: w[1].index, value: (w[1].speed - w[0].speed) / dt })
        })
        .collect()
}

/// Accelerations in canvas px/ms².
pub fn acceleration_series(stream: &Clickstream) -> Result<Vec<f64>, FeatureError> {
    if stream.len() < 3 {
        return Err(FeatureError::TooFewEvents { needed: 3, got: stream.len() });
    }
    Ok(acceleration_samples(&velocity_samples(stream)).iter().map(|a| a.value).collect())
}

/// Angle between a direction and the image gradient, folded to `[0°, 90°]`
/// so that parallel and anti-parallel both give 0° and perpendicular 90°.
pub fn angle_to_gradient(direction: Point, gradient: Point) -> Result<f64, FeatureError> {
    let (nd, ng) = (direction.norm(), gradient.norm());
    if nd == 0.0 || ng <= GRADIENT_EPS || !nd.is_finite() || !ng.is_finite() {
        return Err(FeatureError::UndefinedAngle);
    }
    let cos = (direction.dot(gradient) / (nd * ng)).clamp(-1.0, 1.0);
    let omega = cos.acos().to_degrees();
    let gamma = if (0.0..=180.0).contains(&omega) { omega } else { 360.0 - omega };
    const EPS_GAMMA: f64 = 90.0;
    Ok(EPS_GAMMA - (EPS_GAMMA - gamma).abs())
}

/// Fixed-layout feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: String,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|&n| n == name).map(|i| self.values[i])
    }
}

/// Feature extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureConfig {
    pub tolerance: MatchTolerance,
}

fn angle_stats(pairs: impl Iterator<Item = (Point, Point)>) -> [f64; 4] {
    let angles: Vec<f64> = pairs.filter_map(|(d, g)| angle_to_gradient(d, g).ok()).collect();
    summary_stats(&angles).to_array()
}

fn stroke_blocks(
    strokes: &[Stroke],
    stream: &Clickstream,
    vel: &[Option<f64>],
    acc: &[Option<f64>],
    grad: &GradientField,
) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let ev = stream.events();
    let mut vs = Vec::new();
    let mut accs = Vec::new();
    let mut pairs = Vec::new();
    for s in strokes {
        for i in s.event_indices() {
            if let Some(v) = vel[i] {
                vs.push(v);
            }
            if i != s.down_index {
                if let Some(a) = acc[i] {
                    accs.push(a);
                }
            }
        }
        for &i in &s.move_indices {
            if i == 0 {
                continue;
            }
            let d = ev[i].image_pos() - ev[i - 1].image_pos();
            pairs.push((d, sample_gradient(grad, ev[i].image_pos())));
        }
    }
    (summary_stats(&vs).to_array(), summary_stats(&accs).to_array(), angle_stats(pairs.into_iter()))
}

/// Computes the full feature vector for one session.
pub fn extract_features(
    stream: &Clickstream,
    poly: &Polygon,
    grad: &GradientField,
    cfg: &FeatureConfig,
) -> FeatureVector {
    let ev = stream.events();
    let n = ev.len();
    let vel_samples = velocity_samples(stream);
    let acc_samples = acceleration_samples(&vel_samples);
    let mut vel_at = vec![None; n];
    for s in &vel_samples {
        vel_at[s.index] = Some(s.speed);
    }
    let mut acc_at = vec![None; n];
    for a in &acc_samples {
        acc_at[a.index] = Some(a.value);
    }
    let speeds: Vec<f64> = vel_samples.iter().map(|s| s.speed).collect();
    let accs: Vec<f64> = acc_samples.iter().map(|a| a.value).collect();

    let clicks = canvas_clicks(stream);
    let elapsed = stream.duration_ms() as f64 / clicks.max(1) as f64;
    let contour = if poly.len() >= 2 { geometry::contour_length(poly).unwrap_or(0.0) } else { 0.0 };
    let travelled = geometry::path_length(ev, CoordinateSpace::Image);
    let ratio = if contour > 0.0 { travelled / contour } else { 0.0 };

    let seg = segment_strokes(stream);
    let classes = clickstream::classify_strokes(&seg.strokes, stream, cfg.tolerance);
    let (dv, da, dang) = stroke_blocks(&classes.draws, stream, &vel_at, &acc_at, grad);
    let (kv, ka, kang) = stroke_blocks(&classes.corrections, stream, &vel_at, &acc_at, grad);

    let click_pos: Vec<Point> = ev
        .iter()
        .filter(|e| e.kind == EventKind::MouseDown && e.target == Target::Canvas)
        .map(|e| e.image_pos())
        .collect();
    let click_ang = angle_stats(click_pos.windows(2).map(|w| (w[1] - w[0], sample_gradient(grad, w[1]))));

    let vertex_ang = match geometry::vertex_normals(poly) {
        Ok(normals) => angle_stats(poly.vertices.iter().zip(normals).map(|(&p, nrm)| (nrm, sample_gradient(grad, p)))),
        Err(_) => [0.0; 4],
    };

    let mut values = Vec::with_capacity(FEATURE_COUNT);
    values.extend(summary_stats(&speeds).to_array());
    values.extend(summary_stats(&accs).to_array());
    values.extend([
        zoom_count(stream) as f64,
        clicks as f64,
        double_clicks(stream) as f64,
        elapsed,
        ratio,
        seg.strokes.len() as f64,
        classes.draws.len() as f64,
        classes.corrections.len() as f64,
        n as f64,
    ]);
    values.extend(dv);
    values.extend(da);
    values.extend(kv);
    values.extend(ka);
    values.extend(dang);
    values.extend(kang);
    values.extend(click_ang);
    values.extend(vertex_ang);
    debug_assert_eq!(values.len(), FEATURE_COUNT);
    FeatureVector { values, schema_version: SCHEMA_VERSION.to_string() }
}

/// One row of a feature matrix file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub worker_id: String,
    pub image_id: String,
    pub features: FeatureVector,
    pub dsc: Option<f64>,
}

/// Tab-separated feature matrix: a `# schema_version=...` line, a header
/// row, then one row per annotation. Missing DSC is written as `NA`.
pub fn write_feature_table(rows: &[FeatureRow]) -> String {
    let mut out = format!("# schema_version={SCHEMA_VERSION}\nworker_id\timage_id");
    for name in FEATURE_NAMES {
        out.push('\t');
        out.push_str(name);
    }
    out.push_str("\tdsc\n");
    for r in rows {
        write!(out, "{}\t{}", r.worker_id, r.image_id).unwrap();
        for v in &r.features.values {
            write!(out, "\t{v}").unwrap();
        }
        match r.dsc {
            Some(d) => writeln!(out, "\t{d}").unwrap(),
            None => out.push_str("\tNA\n"),
        }
    }
    out
}

/// Parses a feature table. The schema line is required; a schema other than
/// [`SCHEMA_VERSION`] is reported as [`FeatureError::SchemaMismatch`].
pub fn read_feature_table(text: &str) -> Result<Vec<FeatureRow>, FeatureError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| FeatureError::Format("empty file".into()))?;
    let schema = first
        .strip_prefix("# schema_version=")
        .ok_or_else(|| FeatureError::Format("missing schema_version line".into()))?
        .trim();
    if schema != SCHEMA_VERSION {
        return Err(FeatureError::SchemaMismatch { expected: SCHEMA_VERSION.to_string(), got: schema.to_string() });
    }
    let (_, header) = lines.next().ok_or_else(|| FeatureError::Format("missing header".into()))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let expected: Vec<&str> = ["worker_id", "image_id"].into_iter().chain(FEATURE_NAMES).chain(["dsc"]).collect();
    if cols != expected {
        return Err(FeatureError::Format("header does not match feature names".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != expected.len() {
            return Err(FeatureError::Format(format!("line {}: expected {} columns", i + 1, expected.len())));
        }
        let num =
            |s: &str| s.parse::<f64>().map_err(|_| FeatureError::Format(format!("line {}: bad number `{s}`", i + 1)));
        let values = f[2..2 + FEATURE_COUNT].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
        let dsc = match f[f.len() - 1] {
            "NA" => None,
            s => Some(num(s)?),
        };
        rows.push(FeatureRow {
            worker_id: f[0].to_string(),
            image_id: f[1].to_string(),
            features: FeatureVector { values, schema_version: SCHEMA_VERSION.to_string() },
            dsc,
        });
    }
    Ok(rows)
}
