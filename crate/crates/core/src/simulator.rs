//! Synthetic scenes and simulated annotation sessions.
//!
//! Every generated quantity derives from a `u64` seed through ChaCha8
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`). Per-item streams are keyed by
//! mixing the dataset seed with item indices via SplitMix64, so any single
//! scene or session can be regenerated on its own.
//!
//! Sessions are recorded on a canvas at twice the image resolution, with
//! mouse-moves every 10–20 ms of simulated time.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::clickstream::{Clickstream, Event, EventKind, SessionHeader, Target};
use crate::geometry::{dice, rasterize, Mask, Point, Polygon};
use crate::imaging::GrayImage;

/// Canvas pixels per image pixel.
pub const CANVAS_SCALE: f64 = 2.0;
pub const MIN_SCENE_SIZE: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("scene size {0} is below the minimum of {MIN_SCENE_SIZE}")]
    SceneTooSmall(usize),
    #[error("scene has no decoy object for a wrong-object worker")]
    NoDecoy,
    #[error("invalid archetype parameter: {0}")]
    BadArchetype(&'static str),
    #[error("archetype mix: {0}")]
    BadMix(String),
    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },
}

/// SplitMix64 finalizer over a combined key.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Circle,
    Blob,
    Rectangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Blob, Shape::Rectangle];
}

impl FromStr for Shape {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "circle" => Ok(Shape::Circle),
            "blob" => Ok(Shape::Blob),
            "rectangle" => Ok(Shape::Rectangle),
            _ => Err(SimError::Unknown { what: "shape", name: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    /// Smooth periodic texture plus pixel noise.
    Textured,
    /// Intensity falling off radially from the object center, noise-free.
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub shape: Shape,
    pub size: usize,
    pub background: Background,
    pub decoy: bool,
}

impl SceneConfig {
    pub fn new(shape: Shape, size: usize) -> Self {
        SceneConfig { shape, size, background: Background::Textured, decoy: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: GrayImage,
    pub reference: Mask,
    /// Outline of the target object in image coordinates.
    pub boundary: Polygon,
    pub center: Point,
    pub decoy_reference: Option<Mask>,
    pub decoy_boundary: Option<Polygon>,
    pub decoy_center: Option<Point>,
}

/// Object intensity above the local background.
pub const OBJECT_CONTRAST: f64 = 100.0;
pub const DECOY_CONTRAST: f64 = 80.0;

fn radial_polygon(center: Point, n: usize, radius: impl Fn(f64) -> f64) -> Polygon {
    Polygon::new(
        (0..n)
            .map(|k| {
                let a = k as f64 / n as f64 * std::f64::consts::TAU;
                let r = radius(a);
                Point::new(center.x + r * a.cos(), center.y + r * a.sin())
            })
            .collect(),
    )
}

/// Circle radius used for a scene of the given size.
pub fn circle_radius(size: usize) -> f64 {
    (size as f64 * 5.0 / 32.0).round()
}

/// Scene with a textured background and a decoy object.
pub fn generate_scene(shape: Shape, size: usize, seed: u64) -> Result<SyntheticScene, SimError> {
    generate_scene_with(&SceneConfig::new(shape, size), seed)
}

pub fn generate_scene_with(cfg: &SceneConfig, seed: u64) -> Result<SyntheticScene, SimError> {
    let size = cfg.size;
    if size < MIN_SCENE_SIZE {
        return Err(SimError::SceneTooSmall(size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let max_off = s / 16.0;
    let boundary = match cfg.shape {
        Shape::Circle | Shape::Blob => {
            let center = Point::new(
                s / 2.0 + rng.random_range(-max_off..=max_off),
                s / 2.0 + rng.random_range(-max_off..=max_off),
            );
            let r0 = circle_radius(size);
            if cfg.shape == Shape::Circle {
                radial_polygon(center, 256, |_| r0)
            } else {
                let ph: [f64; 3] = [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)];
                let amp: [f64; 3] =
                    [rng.random_range(0.08..0.15), rng.random_range(0.04..0.1), rng.random_range(0.0..0.05)];
                radial_polygon(center, 256, |a| {
                    r0 * (1.0
                        + amp[0] * (2.0 * a + ph[0]).sin()
                        + amp[1] * (3.0 * a + ph[1]).sin()
                        + amp[2] * (5.0 * a + ph[2]).sin())
                })
            }
        }
        Shape::Rectangle => {
            let lo = size / 4;
            let hi = size * 3 / 8;
            let w = rng.random_range(lo..=hi) as f64;
            let h = rng.random_range(lo..=hi) as f64;
            let off = max_off.floor() as i64;
            let x0 = (s / 2.0 - (w / 2.0).floor()) + rng.random_range(-off..=off) as f64;
            let y0 = (s / 2.0 - (h / 2.0).floor()) + rng.random_range(-off..=off) as f64;
            Polygon::new(vec![
                Point::new(x0, y0),
                Point::new(x0 + w, y0),
                Point::new(x0 + w, y0 + h),
                Point::new(x0, y0 + h),
            ])
        }
    };
    let center = centroid(&boundary);
    let reference = rasterize(&boundary, size, size).expect("valid boundary");

    let (decoy_boundary, decoy_reference, decoy_center) = if cfg.decoy {
        let c = Point::new(s * 0.15, s * 0.15);
        let poly = radial_polygon(c, 128, |_| (s * 3.0 / 32.0).round());
        let m = rasterize(&poly, size, size).expect("valid decoy");
        (Some(poly), Some(m), Some(c))
    } else {
        (None, None, None)
    };

    let tex = [
        rng.random_range(0.05..0.2),
        rng.random_range(0.05..0.2),
        rng.random_range(0.0..6.3),
        rng.random_range(0.0..6.3),
    ];
    let noise: Vec<f64> = match cfg.background {
        Background::Textured => (0..size * size).map(|_| normal(&mut rng, 3.0)).collect(),
        Background::Radial => vec![0.0; size * size],
    };
    let cover = coverage(&boundary, size);
    let decoy_cover = decoy_boundary.as_ref().map(|d| coverage(d, size));
    let image = GrayImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let bg = match cfg.background {
            Background::Textured => 70.0 + 8.0 * (tex[0] * px + tex[2]).sin() * (tex[1] * py + tex[3]).sin(),
            Background::Radial => {
                let d2 = (px - center.x).powi(2) + (py - center.y).powi(2);
                30.0 + 100.0 * (-d2 / (2.0 * (s / 3.0).powi(2))).exp()
            }
        };
        let k = y * size + x;
        let mut v = bg + noise[k] + OBJECT_CONTRAST * cover[k];
        if let Some(d) = &decoy_cover {
            v += DECOY_CONTRAST * d[k];
        }
        v.round().clamp(0.0, 255.0)
    });
    Ok(SyntheticScene { image, reference, boundary, center, decoy_reference, decoy_boundary, decoy_center })
}

/// Sub-samples per pixel side when rendering object edges.
const SUPERSAMPLE: usize = 4;

/// Fraction of each pixel covered by `poly`, from a regular sub-pixel grid.
/// Rendering edges this way keeps image gradients normal to the outline.
fn coverage(poly: &Polygon, size: usize) -> Vec<f64> {
    let k = SUPERSAMPLE;
    let fine = rasterize(&Polygon::new(poly.vertices.iter().map(|&p| p * k as f64).collect()), size * k, size * k)
        .expect("valid outline");
    let mut out = vec![0.0; size * size];
    for (i, &b) in fine.bits().iter().enumerate() {
        if b {
            let (fx, fy) = (i % (size * k), i / (size * k));
            out[(fy / k) * size + fx / k] += 1.0;
        }
    }
    out.iter_mut().for_each(|v| *v /= (k * k) as f64);
    out
}

fn centroid(p: &Polygon) -> Point {
    let n = p.vertices.len() as f64;
    let s = p.vertices.iter().fold(Point::default(), |a, &b| a + b);
    s * (1.0 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WorkerKind {
    Diligent,
    Sloppy,
    Spammer,
    BoundingBox,
    WrongObject,
    Inverted,
}

impl WorkerKind {
    pub const ALL: [WorkerKind; 6] = [
        WorkerKind::Diligent,
        WorkerKind::Sloppy,
        WorkerKind::Spammer,
        WorkerKind::BoundingBox,
        WorkerKind::WrongObject,
        WorkerKind::Inverted,
    ];
}

impl fmt::Display for WorkerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            WorkerKind::Diligent => "diligent",
            WorkerKind::Sloppy => "sloppy",
            WorkerKind::Spammer => "spammer",
            WorkerKind::BoundingBox => "bounding-box",
            WorkerKind::WrongObject => "wrong-object",
            WorkerKind::Inverted => "inverted",
        })
    }
}

impl FromStr for WorkerKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        WorkerKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| SimError::Unknown { what: "archetype", name: s.to_string() })
    }
}

/// Behavior parameters of one simulated worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerArchetype {
    pub kind: WorkerKind,
    /// Standard deviation of the outline error along the normal, image px.
    pub jitter_sigma: f64,
    /// Lag-one correlation of the outline error between vertices.
    pub jitter_rho: f64,
    /// Hand speed in canvas px per ms.
    pub speed: f64,
    /// Probability per vertex of a later correction stroke.
    pub correction_rate: f64,
    pub seed: u64,
}

impl WorkerArchetype {
    /// Nominal parameters for `kind`, perturbed per worker by `seed`.
    pub fn preset(kind: WorkerKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (jitter_sigma, jitter_rho, speed, correction_rate) = match kind {
            WorkerKind::Diligent | WorkerKind::WrongObject | WorkerKind::Inverted => {
                (rng.random_range(0.4..0.8), 0.99, rng.random_range(0.25..0.35), rng.random_range(0.005..0.03))
            }
            WorkerKind::Sloppy => (rng.random_range(1.8..3.2), 0.9, rng.random_range(0.6..0.9), 0.0),
            WorkerKind::Spammer => (0.0, 0.0, rng.random_range(1.0..1.5), 0.0),
            WorkerKind::BoundingBox => (0.5, 0.0, rng.random_range(0.4..0.6), 0.0),
        };
        WorkerArchetype { kind, jitter_sigma, jitter_rho, speed, correction_rate, seed }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.jitter_sigma >= 0.0) {
            return Err(SimError::BadArchetype("jitter_sigma must be non-negative"));
        }
        if !(self.speed > 0.0) {
            return Err(SimError::BadArchetype("speed must be positive"));
        }
        if !(0.0..=1.0).contains(&self.correction_rate) || !(0.0..1.0).contains(&self.jitter_rho) {
            return Err(SimError::BadArchetype("probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

struct Recorder<'r> {
    rng: &'r mut ChaCha8Rng,
    events: Vec<Event>,
    t: u64,
    pos: Point,
}

/// Approach moves stop at least this far (canvas px) from the click target,
/// so they never round onto the same pixel.
const APPROACH_GAP: f64 = 1.5;

impl Recorder<'_> {
    fn emit(&mut self, kind: EventKind, target: Target, p: Point) {
        self.pos = p;
        self.events.push(Event {
            t_ms: self.t,
            cx: p.x,
            cy: p.y,
            ix: p.x / CANVAS_SCALE,
            iy: p.y / CANVAS_SCALE,
            kind,
            target,
        });
    }

    fn tick(&mut self) -> u64 {
        let dt = self.rng.random_range(10..=20);
        self.t += dt;
        dt
    }

    fn pause(&mut self, lo: u64, hi: u64) {
        self.t += self.rng.random_range(lo..=hi);
    }

    fn hover_to(&mut self, target: Point, speed: f64) {
        loop {
            let d = target - self.pos;
            let dist = d.norm();
            let dt = self.tick();
            let step = speed * dt as f64;
            if dist <= step + APPROACH_GAP {
                return;
            }
            let p = self.pos + d * (step / dist);
            self.emit(EventKind::MouseMove, Target::Canvas, p);
        }
    }

    fn click(&mut self, p: Point, speed: f64) {
        self.hover_to(p, speed);
        self.emit(EventKind::MouseDown, Target::Canvas, p);
        self.pause(40, 120);
        self.emit(EventKind::MouseUp, Target::Canvas, p);
    }

    /// Down at the first point, a move per inner point, up at the last.
    fn drag(&mut self, pts: &[(u64, Point)]) {
        self.emit(EventKind::MouseDown, Target::Canvas, pts[0].1);
        for (k, &(dt, p)) in pts.iter().enumerate().skip(1) {
            self.t += dt;
            let kind = if k + 1 == pts.len() { EventKind::MouseUp } else { EventKind::MouseMove };
            self.emit(kind, Target::Canvas, p);
        }
    }

    fn save(&mut self, canvas: f64, speed: f64) {
        let button = Point::new(canvas + 40.0, 20.0);
        self.hover_to(button, speed);
        self.t += 1;
        self.emit(EventKind::MouseDown, Target::SaveButton, button);
        self.pause(40, 100);
        self.emit(EventKind::MouseUp, Target::SaveButton, button);
    }
}

/// Outline sampled by a tracing hand: positions every 10–20 ms at `speed`,
/// displaced along the outward normal by AR(1) noise plus a constant bias.
struct Trace {
    /// (ms since previous point, canvas position)
    points: Vec<(u64, Point)>,
    /// Arc-length parameter of each point on the boundary.
    arc: Vec<f64>,
}

struct ArcBoundary<'b> {
    poly: &'b Polygon,
    cum: Vec<f64>,
    center: Point,
}

impl<'b> ArcBoundary<'b> {
    fn new(poly: &'b Polygon) -> Self {
        let mut cum = vec![0.0];
        for (a, b) in poly.segments() {
            cum.push(cum.last().unwrap() + a.distance(b));
        }
        ArcBoundary { poly, cum, center: centroid(poly) }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Point and outward unit normal at arc length `s`.
    fn at(&self, s: f64) -> (Point, Point) {
        let s = s.rem_euclid(self.length());
        let k = self.cum.partition_point(|&c| c <= s).saturating_sub(1).min(self.poly.len() - 1);
        let a = self.poly.vertices[k];
        let b = self.poly.vertices[(k + 1) % self.poly.len()];
        let seg = b - a;
        let len = seg.norm();
        let p = a + seg * ((s - self.cum[k]) / len);
        let mut n = Point::new(-seg.y / len, seg.x / len);
        if n.dot(p - self.center) < 0.0 {
            n = n * -1.0;
        }
        (p, n)
    }
}

fn trace(boundary: &Polygon, w: &WorkerArchetype, bias: f64, rng: &mut ChaCha8Rng) -> Trace {
    let arc = ArcBoundary::new(boundary);
    let total = arc.length();
    let start = rng.random_range(0.0..total);
    let innov = (1.0 - w.jitter_rho * w.jitter_rho).sqrt() * w.jitter_sigma;
    let mut e = normal(rng, w.jitter_sigma);
    let mut s = 0.0;
    let mut out = Trace { points: Vec::new(), arc: Vec::new() };
    let mut dt = 0;
    loop {
        let (p, n) = arc.at(start + s);
        let img = p + n * (e + bias);
        out.points.push((dt, img * CANVAS_SCALE));
        out.arc.push(start + s);
        dt = rng.random_range(10..=20);
        let step = w.speed * dt as f64 / CANVAS_SCALE;
        if s + 1.5 * step >= total {
            break;
        }
        s += step;
        e = w.jitter_rho * e + normal(rng, innov);
    }
    out
}

fn split_strokes(n: usize, strokes: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut cuts: Vec<usize> = Vec::new();
    if n > 20 {
        while cuts.len() + 1 < strokes {
            let c = rng.random_range(5..n - 5);
            if !cuts.contains(&c) {
                cuts.push(c);
            }
        }
    }
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(n - 1);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

fn start_session(rec: &mut Recorder, canvas: f64) {
    let p = Point::new(rec.rng.random_range(0.0..canvas), rec.rng.random_range(0.0..canvas));
    rec.emit(EventKind::MouseMove, Target::Canvas, p);
}

/// Traces `boundary` in drag strokes and returns the vertices in image
/// coordinates.
fn draw_outline(
    rec: &mut Recorder,
    boundary: &Polygon,
    w: &WorkerArchetype,
    bias: f64,
    strokes: usize,
) -> (Vec<Point>, Trace) {
    let tr = trace(boundary, w, bias, rec.rng);
    let first = tr.points[0].1;
    rec.hover_to(first, w.speed);
    let parts = split_strokes(tr.points.len(), strokes, rec.rng);
    for (k, &(a, b)) in parts.iter().enumerate() {
        if k > 0 {
            rec.pause(80, 300);
        } else {
            rec.tick();
        }
        rec.drag(&tr.points[a..=b]);
    }
    let verts = tr.points.iter().map(|&(_, p)| p * (1.0 / CANVAS_SCALE)).collect();
    (verts, tr)
}

fn diligent_session(
    rec: &mut Recorder,
    boundary: &Polygon,
    w: &WorkerArchetype,
    canvas: f64,
    allow_corrections: bool,
) -> Vec<Point> {
    let zooms = rec.rng.random_range(0..=2);
    for _ in 0..zooms {
        rec.tick();
        let p = rec.pos;
        rec.emit(EventKind::Wheel, Target::Canvas, p);
    }
    let strokes = rec.rng.random_range(1..=3);
    let (mut verts, tr) = draw_outline(rec, boundary, w, 0.0, strokes);
    let n = verts.len();
    if allow_corrections && n > 4 {
        let arc = ArcBoundary::new(boundary);
        let mut chosen: Vec<usize> = (1..n - 1).filter(|_| rec.rng.random_bool(w.correction_rate)).collect();
        chosen.truncate(4);
        for i in chosen {
            rec.pause(150, 400);
            let grab = verts[i] * CANVAS_SCALE;
            rec.hover_to(grab, w.speed);
            rec.emit(EventKind::MouseDown, Target::Canvas, grab);
            let (p, nrm) = arc.at(tr.arc[i]);
            let fixed = (p + nrm * normal(rec.rng, 0.2)) * CANVAS_SCALE;
            let steps = rec.rng.random_range(2..=5);
            for k in 1..=steps {
                rec.tick();
                let q = grab + (fixed - grab) * (k as f64 / (steps + 1) as f64);
                rec.emit(EventKind::MouseMove, Target::Canvas, q);
            }
            rec.tick();
            rec.emit(EventKind::MouseUp, Target::Canvas, fixed);
            verts[i] = fixed * (1.0 / CANVAS_SCALE);
        }
        if rec.rng.random_bool(0.15) {
            // delete one vertex by double-clicking it
            let i = rec.rng.random_range(1..n - 1);
            let p = verts[i] * CANVAS_SCALE;
            rec.pause(150, 400);
            rec.hover_to(p, w.speed);
            for _ in 0..2 {
                rec.emit(EventKind::MouseDown, Target::Canvas, p);
                rec.t += rec.rng.random_range(30..=60);
                rec.emit(EventKind::MouseUp, Target::Canvas, p);
                rec.t += rec.rng.random_range(30..=60);
            }
            rec.emit(EventKind::DoubleClick, Target::Canvas, p);
            verts.remove(i);
        }
    }
    rec.pause(200, 600);
    rec.save(canvas, w.speed);
    verts
}

/// Simulates one worker annotating one scene. Returns the recorded session
/// and the saved contour in image coordinates.
pub fn simulate_annotation(
    scene: &SyntheticScene,
    w: &WorkerArchetype,
    worker_id: &str,
    image_id: &str,
    seed: u64,
) -> Result<(Clickstream, Polygon), SimError> {
    w.validate()?;
    let size = scene.reference.width();
    let canvas = size as f64 * CANVAS_SCALE;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, w.seed, 0xA5));
    let mut rec = Recorder { rng: &mut rng, events: Vec::new(), t: 0, pos: Point::default() };
    start_session(&mut rec, canvas);

    let verts: Vec<Point> = match w.kind {
        WorkerKind::Diligent => diligent_session(&mut rec, &scene.boundary, w, canvas, true),
        WorkerKind::WrongObject => {
            let decoy = scene.decoy_boundary.as_ref().ok_or(SimError::NoDecoy)?;
            diligent_session(&mut rec, decoy, w, canvas, true)
        }
        WorkerKind::Sloppy => {
            let bias = normal(rec.rng, 1.2);
            let strokes = rec.rng.random_range(1..=2);
            let (v, _) = draw_outline(&mut rec, &scene.boundary, w, bias, strokes);
            rec.pause(100, 300);
            rec.save(canvas, w.speed);
            v
        }
        WorkerKind::Spammer => {
            let s = size as f64;
            let c = Point::new(rec.rng.random_range(8.0..s - 8.0), rec.rng.random_range(8.0..s - 8.0));
            let k = rec.rng.random_range(4..=9);
            let mut angles: Vec<f64> = (0..k).map(|_| rec.rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            let pts: Vec<Point> = angles
                .iter()
                .map(|&a| {
                    let r = rec.rng.random_range(1.0..6.0);
                    c + Point::new(a.cos(), a.sin()) * r
                })
                .collect();
            if rec.rng.random_bool(0.5) {
                rec.hover_to(pts[0] * CANVAS_SCALE, w.speed);
                rec.tick();
                let path: Vec<(u64, Point)> =
                    pts.iter().map(|&p| (rec.rng.random_range(10..=20), p * CANVAS_SCALE)).collect();
                rec.drag(&path);
            } else {
                for &p in &pts {
                    rec.click(p * CANVAS_SCALE, w.speed);
                }
            }
            rec.pause(20, 80);
            rec.save(canvas, w.speed);
            pts
        }
        WorkerKind::BoundingBox => {
            let (x0, y0, x1, y1) = scene.reference.bounding_box().expect("reference is non-empty");
            let j = w.jitter_sigma;
            let mut corner =
                |x: usize, y: usize| Point::new(x as f64 + normal(rec.rng, j), y as f64 + normal(rec.rng, j));
            let pts = vec![corner(x0, y0), corner(x1, y0), corner(x1, y1), corner(x0, y1)];
            for &p in &pts {
                rec.pause(100, 300);
                rec.click(p * CANVAS_SCALE, w.speed);
            }
            if rec.rng.random_bool(0.5) {
                rec.pause(100, 300);
                rec.click(pts[0] * CANVAS_SCALE, w.speed);
            }
            rec.pause(100, 300);
            rec.save(canvas, w.speed);
            pts
        }
        WorkerKind::Inverted => {
            let (mut v, _) = draw_outline(&mut rec, &scene.boundary, w, 0.0, 1);
            let s = size as f64;
            let frame = [
                Point::new(1.0, 1.0),
                Point::new(s - 1.0, 1.0),
                Point::new(s - 1.0, s - 1.0),
                Point::new(1.0, s - 1.0),
            ];
            for &p in &frame {
                rec.pause(100, 300);
                rec.click(p * CANVAS_SCALE, w.speed);
            }
            rec.pause(100, 300);
            rec.click(frame[0] * CANVAS_SCALE, w.speed);
            // keyhole: close the object loop, walk the frame, return along the same bridge
            v.push(v[0]);
            v.extend(frame);
            v.push(frame[0]);
            rec.pause(100, 300);
            rec.save(canvas, w.speed);
            v
        }
    };

    let header = SessionHeader::new(worker_id, image_id, (canvas as u32, canvas as u32), (size as u32, size as u32));
    let events = std::mem::take(&mut rec.events);
    let stream = Clickstream::new(header, events).expect("simulated stream is valid");
    Ok((stream, Polygon::new(verts)))
}

/// Archetype proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeMix {
    pub weights: Vec<(WorkerKind, f64)>,
}

impl ArchetypeMix {
    pub fn new(weights: Vec<(WorkerKind, f64)>) -> Result<Self, SimError> {
        if weights.iter().any(|&(_, w)| !(w >= 0.0) || !w.is_finite()) {
            return Err(SimError::BadMix("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().map(|w| w.1).sum();
        if sum <= 0.0 {
            return Err(SimError::BadMix("weights sum to zero".into()));
        }
        Ok(ArchetypeMix { weights: weights.into_iter().map(|(k, w)| (k, w / sum)).collect() })
    }

    pub fn only(kind: WorkerKind) -> Self {
        ArchetypeMix { weights: vec![(kind, 1.0)] }
    }

    /// Splits `n` workers by largest remainder; ties favor earlier entries.
    pub fn allocate(&self, n: usize) -> Vec<WorkerKind> {
        let exact: Vec<f64> = self.weights.iter().map(|w| w.1 * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut left = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        self.weights.iter().zip(counts).flat_map(|(&(k, _), c)| std::iter::repeat_n(k, c)).collect()
    }
}

impl FromStr for ArchetypeMix {
    type Err = SimError;

    /// `diligent=0.4,sloppy=0.2,spammer=0.4`; weights are normalized.
    fn from_str(s: &str) -> Result<Self, SimError> {
        let mut weights = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, w) =
                part.split_once('=').ok_or_else(|| SimError::BadMix(format!("expected name=weight, got `{part}`")))?;
            let kind: WorkerKind = name.trim().parse()?;
            let w: f64 = w.trim().parse().map_err(|_| SimError::BadMix(format!("bad weight `{w}`")))?;
            if weights.iter().any(|&(k, _)| k == kind) {
                return Err(SimError::BadMix(format!("`{kind}` listed twice")));
            }
            weights.push((kind, w));
        }
        ArchetypeMix::new(weights)
    }
}

impl fmt::Display for ArchetypeMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.weights.iter().map(|(k, w)| format!("{k}={w}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_images: usize,
    /// Workers per crew; every image is annotated by all workers of its crew.
    pub n_workers: usize,
    pub mix: ArchetypeMix,
    pub seed: u64,
    /// Image `i` goes to crew `i mod crews`.
    pub crews: usize,
    pub size: usize,
}

impl DatasetConfig {
    pub fn new(n_images: usize, n_workers: usize, mix: ArchetypeMix, seed: u64) -> Self {
        DatasetConfig { n_images, n_workers, mix, seed, crews: 10, size: 128 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEntry {
    pub image_id: String,
    pub shape: Shape,
    pub scene: SyntheticScene,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub worker_id: String,
    pub image_id: String,
    pub archetype: WorkerKind,
    pub stream: Clickstream,
    pub polygon: Polygon,
    /// True Dice coefficient against the reference mask.
    pub dsc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub scenes: Vec<SceneEntry>,
    pub annotations: Vec<Annotation>,
}

impl Dataset {
    pub fn scene(&self, image_id: &str) -> Option<&SceneEntry> {
        self.scenes.iter().find(|s| s.image_id == image_id)
    }
}

pub fn image_id(i: usize) -> String {
    format!("img{i:04}")
}

pub fn worker_id(g: usize) -> String {
    format!("w{g:04}")
}

/// True DSC of a polygon against a reference mask.
pub fn polygon_dsc(poly: &Polygon, reference: &Mask) -> f64 {
    match rasterize(poly, reference.width(), reference.height()) {
        Ok(m) => dice(&m, reference).expect("same shape"),
        Err(_) => 0.0,
    }
}

/// Generates scenes and annotations. Each worker keeps one archetype and
/// annotates every image of its crew exactly once.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset, SimError> {
    if cfg.n_images == 0 || cfg.n_workers == 0 {
        return Ok(Dataset::default());
    }
    if cfg.size < MIN_SCENE_SIZE {
        return Err(SimError::SceneTooSmall(cfg.size));
    }
    let crews = cfg.crews.clamp(1, cfg.n_images);
    let scenes: Vec<SceneEntry> = (0..cfg.n_images)
        .into_par_iter()
        .map(|i| {
            let s = mix_seed(cfg.seed, 0x5C3E, i as u64);
            let shape = Shape::ALL[(s % 3) as usize];
            let scene = generate_scene(shape, cfg.size, s).expect("size checked");
            SceneEntry { image_id: image_id(i), shape, scene }
        })
        .collect();

    let mut workers: Vec<Vec<(usize, WorkerArchetype)>> = Vec::with_capacity(crews);
    for c in 0..crews {
        let mut kinds = cfg.mix.allocate(cfg.n_workers);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xC4E3, c as u64));
        rand::seq::SliceRandom::shuffle(kinds.as_mut_slice(), &mut rng);
        workers.push(
            kinds
                .into_iter()
                .enumerate()
                .map(|(k, kind)| {
                    let g = c * cfg.n_workers + k;
                    (g, WorkerArchetype::preset(kind, mix_seed(cfg.seed, 0x3012, g as u64)))
                })
                .collect(),
        );
    }

    let pairs: Vec<(usize, usize, WorkerArchetype)> =
        (0..cfg.n_images).flat_map(|i| workers[i % crews].iter().map(move |&(g, w)| (i, g, w))).collect();
    let annotations = pairs
        .par_iter()
        .map(|&(i, g, w)| {
            let entry = &scenes[i];
            let (wid, iid) = (worker_id(g), entry.image_id.clone());
            let (stream, polygon) =
                simulate_annotation(&entry.scene, &w, &wid, &iid, mix_seed(cfg.seed, i as u64, g as u64))?;
            let dsc = polygon_dsc(&polygon, &entry.scene.reference);
            Ok(Annotation { worker_id: wid, image_id: iid, archetype: w.kind, stream, polygon, dsc })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(Dataset { scenes, annotations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clickstream::{classify_strokes, parse_clickstream, segment_strokes, MatchTolerance};
    use crate::geometry::dice;

    #[test]
    fn circle_area_matches_analytic() {
        let scene = generate_scene(Shape::Circle, 128, 4).unwrap();
        let r = circle_radius(128);
        assert_eq!(r, 20.0);
        let area = std::f64::consts::PI * r * r;
        let count = scene.reference.count() as f64;
        assert!((count - area).abs() / area < 0.02, "{count} vs {area}");
    }

    #[test]
    fn scenes_are_deterministic_and_contrasted() {
        for shape in Shape::ALL {
            let a = generate_scene(shape, 96, 17).unwrap();
            assert_eq!(a, generate_scene(shape, 96, 17).unwrap());
            let decoy = a.decoy_reference.as_ref().unwrap();
            assert!(!a.reference.is_empty());
            assert_eq!(dice(&a.reference, decoy).unwrap(), 0.0, "{shape:?} overlaps decoy");
            let mean = |inside: bool| {
                let v: Vec<f64> = (0..96 * 96)
                    .filter(|&k| a.reference.bits()[k] == inside && !decoy.bits()[k])
                    .map(|k| a.image.pixels()[k])
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            assert!(mean(true) - mean(false) >= 50.0);
        }
        assert_eq!(generate_scene(Shape::Blob, 31, 0), Err(SimError::SceneTooSmall(31)));
    }

    #[test]
    fn rectangle_reference_is_its_raster() {
        let scene = generate_scene(Shape::Rectangle, 128, 8).unwrap();
        assert_eq!(scene.reference, rasterize(&scene.boundary, 128, 128).unwrap());
        let (x0, y0, x1, y1) = scene.reference.bounding_box().unwrap();
        assert_eq!(scene.reference.count(), (x1 - x0) * (y1 - y0));
    }

    fn run(kind: WorkerKind, scene_seed: u64, seed: u64) -> (Clickstream, Polygon, f64) {
        let scene = generate_scene(Shape::Circle, 128, scene_seed).unwrap();
        let w = WorkerArchetype::preset(kind, seed);
        let (s, p) = simulate_annotation(&scene, &w, "w", "i", seed).unwrap();
        let d = polygon_dsc(&p, &scene.reference);
        (s, p, d)
    }

    #[test]
    fn sessions_parse_and_contain_their_vertices() {
        for kind in WorkerKind::ALL {
            for seed in 0..5 {
                let (s, p, _) = run(kind, seed, seed * 31 + 7);
                let back = parse_clickstream(s.to_log().as_bytes()).unwrap();
                assert_eq!(back, s);
                for v in &p.vertices {
                    assert!(s.events().iter().any(|e| e.image_pos() == *v), "{kind} vertex {v:?} has no event");
                }
            }
        }
    }

    #[test]
    fn diligent_is_accurate_spammer_is_not() {
        let mut good: Vec<f64> = (0..100).map(|k| run(WorkerKind::Diligent, k, 1000 + k).2).collect();
        good.sort_by(f64::total_cmp);
        assert!(good[50] > 0.9, "median {}", good[50]);
        let spam_ok = (0..100).filter(|&k| run(WorkerKind::Spammer, k, 5000 + k).2 < 0.3).count();
        assert!(spam_ok >= 95);
    }

    #[test]
    fn bounding_box_matches_circle_in_square_ratio() {
        let analytic = 2.0 * std::f64::consts::PI / (std::f64::consts::PI + 4.0);
        for k in 0..20 {
            let d = run(WorkerKind::BoundingBox, k, 300 + k).2;
            assert!((d - analytic).abs() < 0.04, "{d}");
        }
    }

    #[test]
    fn wrong_object_and_inverted_miss_the_target() {
        for k in 0..10 {
            assert!(run(WorkerKind::WrongObject, k, 70 + k).2 < 0.05);
            assert!(run(WorkerKind::Inverted, k, 90 + k).2 < 0.1);
        }
        let scene =
            generate_scene_with(&SceneConfig { decoy: false, ..SceneConfig::new(Shape::Circle, 64) }, 1).unwrap();
        let w = WorkerArchetype::preset(WorkerKind::WrongObject, 1);
        assert_eq!(simulate_annotation(&scene, &w, "w", "i", 1).unwrap_err(), SimError::NoDecoy);
    }

    #[test]
    fn corrections_are_recognized() {
        let mut found = 0;
        for k in 0..30 {
            let scene = generate_scene(Shape::Blob, 128, k).unwrap();
            let w = WorkerArchetype { correction_rate: 0.05, ..WorkerArchetype::preset(WorkerKind::Diligent, k) };
            let (s, _) = simulate_annotation(&scene, &w, "w", "i", k).unwrap();
            let seg = segment_strokes(&s);
            let c = classify_strokes(&seg.strokes, &s, MatchTolerance::default());
            let moved = s.events().iter().filter(|e| e.kind == EventKind::DoubleClick).count();
            // every correction drag and the two deletion clicks are corrections
            assert!(c.corrections.len() >= 2 * moved);
            found += c.corrections.len();
            assert_eq!(seg.diagnostics.unmatched_downs + seg.diagnostics.unmatched_ups, 0);
        }
        assert!(found > 30);
        let (s, _, _) = run(WorkerKind::Sloppy, 3, 3);
        let seg = segment_strokes(&s);
        assert!(classify_strokes(&seg.strokes, &s, MatchTolerance::default()).corrections.is_empty());
    }

    #[test]
    fn mix_parsing_and_allocation() {
        let m: ArchetypeMix = "diligent=0.4,sloppy=0.2,spammer=0.25,bounding-box=0.1,inverted=0.05".parse().unwrap();
        let kinds = m.allocate(20);
        let count = |k| kinds.iter().filter(|&&x| x == k).count();
        assert_eq!(
            [
                count(WorkerKind::Diligent),
                count(WorkerKind::Sloppy),
                count(WorkerKind::Spammer),
                count(WorkerKind::BoundingBox),
                count(WorkerKind::Inverted)
            ],
            [8, 4, 5, 2, 1]
        );
        assert_eq!(m.allocate(3).len(), 3);
        assert!("diligent=x".parse::<ArchetypeMix>().is_err());
        assert!("lazy=1".parse::<ArchetypeMix>().is_err());
        assert!("diligent=0".parse::<ArchetypeMix>().is_err());
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let mut cfg = DatasetConfig::new(6, 4, "diligent=0.5,spammer=0.5".parse().unwrap(), 9);
        cfg.crews = 3;
        cfg.size = 64;
        let d = build_dataset(&cfg).unwrap();
        assert_eq!(d.annotations.len(), 24);
        assert_eq!(d, build_dataset(&cfg).unwrap());
        let mut seen = std::collections::BTreeSet::new();
        for a in &d.annotations {
            assert!(seen.insert((a.worker_id.clone(), a.image_id.clone())));
        }
        let mut kinds = std::collections::BTreeMap::new();
        for a in &d.annotations {
            assert_eq!(*kinds.entry(a.worker_id.clone()).or_insert(a.archetype), a.archetype);
        }
        cfg.n_workers = 0;
        assert!(build_dataset(&cfg).unwrap().annotations.is_empty());
    }

    #[test]
    fn fifty_fifty_mix_is_bimodal() {
        let mut cfg = DatasetConfig::new(10, 10, "diligent=0.5,spammer=0.5".parse().unwrap(), 3);
        cfg.crews = 2;
        let d = build_dataset(&cfg).unwrap();
        let med = |k: WorkerKind| {
            let mut v: Vec<f64> = d.annotations.iter().filter(|a| a.archetype == k).map(|a| a.dsc).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(med(WorkerKind::Diligent) - med(WorkerKind::Spammer) > 0.4);
    }
}
