//! Clickstream logs: the wire format, stroke segmentation and the
//! draw-vs-correction stroke classifier.
//!
//! # Wire format (version 1)
//!
//! A log is UTF-8 text with one JSON object per line. The first line is the
//! session header, every following non-blank line is one event:
//!
//! ```text
//! {"format":"clickstream","version":1,"worker_id":"w0001","image_id":"img0001","canvas_width":256,"canvas_height":256,"image_width":128,"image_height":128}
//! {"t_ms":0,"cx":10.0,"cy":12.5,"ix":5.0,"iy":6.25,"kind":"mouse-move","target":"canvas"}
//! {"t_ms":16,"cx":11.0,"cy":12.5,"ix":5.5,"iy":6.25,"kind":"mouse-down","target":"canvas"}
//! ```
//!
//! Field names are normative. `kind` is one of `mouse-down`, `mouse-up`,
//! `mouse-move`, `wheel`, `double-click`; `target` is one of `canvas`,
//! `delete-contour-button`, `zoom-button`, `save-button`. Timestamps are
//! non-negative integer milliseconds and must be non-decreasing; equal
//! timestamps keep their file order. [`Clickstream::to_log`] writes the
//! canonical form of a log.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::kdtree::{PixelPos, PositionIndex};

pub const FORMAT_NAME: &str = "clickstream";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ClickstreamError {
    #[error("empty stream")]
    EmptyStream,
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: timestamp {t_ms} is earlier than previous timestamp {previous}")]
    UnsortedTimestamps { line: usize, t_ms: u64, previous: u64 },
    #[error("line {line}: non-finite coordinate")]
    NonFiniteCoordinate { line: usize },
    #[error("unsupported format `{format}` version {version}")]
    UnsupportedFormat { format: String, version: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    MouseDown,
    MouseUp,
    MouseMove,
    Wheel,
    DoubleClick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Canvas,
    DeleteContourButton,
    ZoomButton,
    SaveButton,
}

/// One recorded mouse event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_ms: u64,
    pub cx: f64,
    pub cy: f64,
    pub ix: f64,
    pub iy: f64,
    pub kind: EventKind,
    pub target: Target,
}

impl Event {
    pub fn canvas_pos(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn image_pos(&self) -> Point {
        Point::new(self.ix, self.iy)
    }

    fn is_finite(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.ix.is_finite() && self.iy.is_finite()
    }
}

/// Session header (first line of a log).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format: String,
    pub version: u32,
    pub worker_id: String,
    pub image_id: String,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub image_width: u32,
    pub image_height: u32,
}

impl SessionHeader {
    pub fn new(
        worker_id: impl Into<String>,
        image_id: impl Into<String>,
        canvas: (u32, u32),
        image: (u32, u32),
    ) -> Self {
        Self {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            worker_id: worker_id.into(),
            image_id: image_id.into(),
            canvas_width: canvas.0,
            canvas_height: canvas.1,
            image_width: image.0,
            image_height: image.1,
        }
    }
}

/// Time-ordered events of one annotation session.
#[derive(Debug, Clone, PartialEq)]
pub struct Clickstream {
    pub header: SessionHeader,
    events: Vec<Event>,
}

impl Clickstream {
    /// Validates ordering and finiteness; events must be non-empty.
    pub fn new(header: SessionHeader, events: Vec<Event>) -> Result<Self, ClickstreamError> {
        if events.is_empty() {
            return Err(ClickstreamError::EmptyStream);
        }
        for (i, e) in events.iter().enumerate() {
            // line numbers as they would appear in the serialized log
            let line = i + 2;
            if !e.is_finite() {
                return Err(ClickstreamError::NonFiniteCoordinate { line });
            }
            if i > 0 && e.t_ms < events[i - 1].t_ms {
                return Err(ClickstreamError::UnsortedTimestamps { line, t_ms: e.t_ms, previous: events[i - 1].t_ms });
            }
        }
        Ok(Self { header, events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn worker_id(&self) -> &str {
        &self.header.worker_id
    }

    pub fn image_id(&self) -> &str {
        &self.header.image_id
    }

    /// Elapsed time between the first and last event.
    pub fn duration_ms(&self) -> u64 {
        self.events.last().unwrap().t_ms - self.events[0].t_ms
    }

    /// Parses a log in the wire format.
    pub fn parse(raw: &[u8]) -> Result<Self, ClickstreamError> {
        let text = std::str::from_utf8(raw).map_err(|e| ClickstreamError::MalformedLine {
            line: 1 + raw[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
            message: "invalid UTF-8".into(),
        })?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (hline, htext) = lines.next().ok_or(ClickstreamError::EmptyStream)?;
        let header: SessionHeader = serde_json::from_str(htext)
            .map_err(|e| ClickstreamError::MalformedLine { line: hline, message: format!("bad header: {e}") })?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(ClickstreamError::UnsupportedFormat { format: header.format, version: header.version });
        }
        let mut events = Vec::new();
        let mut prev: Option<u64> = None;
        for (line, l) in lines {
            let e: Event = serde_json::from_str(l)
                .map_err(|e| ClickstreamError::MalformedLine { line, message: e.to_string() })?;
            if !e.is_finite() {
                return Err(ClickstreamError::NonFiniteCoordinate { line });
            }
            if let Some(p) = prev {
                if e.t_ms < p {
                    return Err(ClickstreamError::UnsortedTimestamps { line, t_ms: e.t_ms, previous: p });
                }
            }
            prev = Some(e.t_ms);
            events.push(e);
        }
        if events.is_empty() {
            return Err(ClickstreamError::EmptyStream);
        }
        Ok(Self { header, events })
    }

    /// Canonical serialized form.
    pub fn to_log(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Same session with every timestamp multiplied by `k`.
    pub fn rescale_time(&self, k: u64) -> Self {
        let events = self.events.iter().map(|e| Event { t_ms: e.t_ms * k, ..*e }).collect();
        Self { header: self.header.clone(), events }
    }
}

/// Convenience wrapper mirroring [`Clickstream::parse`].
pub fn parse_clickstream(raw: &[u8]) -> Result<Clickstream, ClickstreamError> {
    Clickstream::parse(raw)
}

/// Optional kind/target filter for [`count_events`].
pub fn count_events(stream: &Clickstream, kind: Option<EventKind>, target: Option<Target>) -> usize {
    stream.events().iter().filter(|e| kind.is_none_or(|k| e.kind == k) && target.is_none_or(|t| e.target == t)).count()
}

/// Wheel events plus clicks (mouse-downs) on the zoom button.
pub fn zoom_count(stream: &Clickstream) -> usize {
    count_events(stream, Some(EventKind::Wheel), None)
        + count_events(stream, Some(EventKind::MouseDown), Some(Target::ZoomButton))
}

pub fn canvas_clicks(stream: &Clickstream) -> usize {
    count_events(stream, Some(EventKind::MouseDown), Some(Target::Canvas))
}

pub fn double_clicks(stream: &Clickstream) -> usize {
    count_events(stream, Some(EventKind::DoubleClick), Some(Target::Canvas))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrokeClass {
    Draw,
    Correction,
    Unclassified,
}

impl fmt::Display for StrokeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            StrokeClass::Draw => "draw",
            StrokeClass::Correction => "correction",
            StrokeClass::Unclassified => "unclassified",
        })
    }
}

/// Mouse-down on the canvas, the moves that follow, and the closing mouse-up.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub down: Event,
    pub up: Event,
    pub moves: Vec<Event>,
    /// Stream index of the opening mouse-down.
    pub down_index: usize,
    /// Stream index of the closing mouse-up.
    pub up_index: usize,
    /// Stream indices of `moves`.
    pub move_indices: Vec<usize>,
    pub class: StrokeClass,
}

impl Stroke {
    /// Stream indices of down, moves and up, in order.
    pub fn event_indices(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.down_index).chain(self.move_indices.iter().copied()).chain(std::iter::once(self.up_index))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StrokeDiagnostics {
    /// Mouse-downs never closed by a mouse-up (or superseded by another down).
    pub unmatched_downs: usize,
    /// Mouse-ups with no open stroke.
    pub unmatched_ups: usize,
    /// Moves inside a stroke that left the canvas area.
    pub off_canvas_moves: usize,
    /// Events after the first save-button event.
    pub after_save: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub strokes: Vec<Stroke>,
    pub diagnostics: StrokeDiagnostics,
}

/// Splits the stream into strokes. Never fails; anomalies are counted.
pub fn segment_strokes(stream: &Clickstream) -> Segmentation {
    let mut strokes = Vec::new();
    let mut diag = StrokeDiagnostics::default();
    let (cw, ch) = (stream.header.canvas_width as f64, stream.header.canvas_height as f64);
    let mut open: Option<(usize, Vec<usize>)> = None;
    let events = stream.events();
    for (i, e) in events.iter().enumerate() {
        if e.target == Target::SaveButton {
            diag.after_save = events.len() - i;
            break;
        }
        match e.kind {
            EventKind::MouseDown if e.target == Target::Canvas => {
                if open.is_some() {
                    diag.unmatched_downs += 1;
                }
                open = Some((i, Vec::new()));
            }
            EventKind::MouseMove => {
                if let Some((_, moves)) = open.as_mut() {
                    if cw > 0.0 && ch > 0.0 && (e.cx < 0.0 || e.cy < 0.0 || e.cx >= cw || e.cy >= ch) {
                        diag.off_canvas_moves += 1;
                    }
                    moves.push(i);
                }
            }
            EventKind::MouseUp => match open.take() {
                Some((down_index, move_indices)) => strokes.push(Stroke {
                    down: events[down_index],
                    up: *e,
                    moves: move_indices.iter().map(|&m| events[m]).collect(),
                    down_index,
                    up_index: i,
                    move_indices,
                    class: StrokeClass::Unclassified,
                }),
                None => diag.unmatched_ups += 1,
            },
            _ => {}
        }
    }
    if open.is_some() {
        diag.unmatched_downs += 1;
    }
    Segmentation { strokes, diagnostics: diag }
}

/// Position matching used by the stroke classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchTolerance {
    /// Maximum distance between rounded canvas positions; 0 means exact
    /// integer-pixel equality.
    pub radius: f64,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        Self { radius: 0.0 }
    }
}

pub fn quantize(p: Point) -> PixelPos {
    (p.x.round() as i64, p.y.round() as i64)
}

fn same_position(a: Point, b: Point, tol: MatchTolerance) -> bool {
    let (qa, qb) = (quantize(a), quantize(b));
    let dx = (qa.0 - qb.0) as f64;
    let dy = (qa.1 - qb.1) as f64;
    dx * dx + dy * dy <= tol.radius * tol.radius
}

/// Draws and corrections, both in chronological order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StrokeClasses {
    pub draws: Vec<Stroke>,
    pub corrections: Vec<Stroke>,
}

/// Labels each stroke as a draw or a correction.
///
/// 1. A stroke whose mouse-down lands where the most recent draw stroke
///    ended continues that drawing.
/// 2. Otherwise, if any earlier event of the stream happened at the
///    mouse-down position, the stroke grabbed existing contour: correction.
/// 3. Otherwise it starts a new contour: draw.
pub fn classify_strokes(strokes: &[Stroke], stream: &Clickstream, tol: MatchTolerance) -> StrokeClasses {
    let points: Vec<(PixelPos, usize)> =
        stream.events().iter().enumerate().map(|(i, e)| (quantize(e.canvas_pos()), i)).collect();
    let index = PositionIndex::build(&points);
    classify_with(strokes, tol, |s| index.any_before_within(quantize(s.down.canvas_pos()), tol.radius, s.down_index))
}

/// Reference classifier with a linear scan for the earlier-event lookup.
pub fn classify_strokes_linear(strokes: &[Stroke], stream: &Clickstream, tol: MatchTolerance) -> StrokeClasses {
    let events = stream.events();
    classify_with(strokes, tol, |s| {
        events[..s.down_index.min(events.len())].iter().any(|e| same_position(e.canvas_pos(), s.down.canvas_pos(), tol))
    })
}

fn classify_with(
    strokes: &[Stroke],
    tol: MatchTolerance,
    mut seen_before: impl FnMut(&Stroke) -> bool,
) -> StrokeClasses {
    let mut out = StrokeClasses::default();
    let mut last_draw_up: Option<Point> = None;
    for s in strokes {
        let mut s = s.clone();
        let continues = last_draw_up.is_some_and(|p| same_position(s.down.canvas_pos(), p, tol));
        if !continues && seen_before(&s) {
            s.class = StrokeClass::Correction;
            out.corrections.push(s);
        } else {
            s.class = StrokeClass::Draw;
            last_draw_up = Some(s.up.canvas_pos());
            out.draws.push(s);
        }
    }
    out
}
