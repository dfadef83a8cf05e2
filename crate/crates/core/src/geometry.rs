//! Contours, binary masks and the measurements taken on them.
//!
//! Pixel `(x, y)` covers `[x, x+1) × [y, y+1)` and is sampled at its center
//! `(x + 0.5, y + 0.5)`.

use std::ops::{Add, Mul, Sub};

use thiserror::Error;

use crate::clickstream::Event;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate contour: {0} vertices")]
    DegenerateContour(usize),
    #[error("non-finite vertex coordinate")]
    NonFinite,
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("mask dimensions must be positive")]
    EmptyDimensions,
    #[error("bad polygon record on line {line}: {message}")]
    PolygonFormat { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn distance(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// Closed contour in image coordinates; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Segments `(p_i, p_{i+1})` including the closing one.
    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn translate(&self, d: Point) -> Polygon {
        Polygon::new(self.vertices.iter().map(|&p| p + d).collect())
    }

    /// Serializes as one record: `x y x y ...`.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        for (i, p) in self.vertices.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(&format!("{} {}", p.x, p.y));
        }
        s
    }
}

/// Reads a polygon file: one contour per line as `x y` pairs, `#` comments.
pub fn parse_polygons(text: &str) -> Result<Vec<Polygon>, GeometryError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| GeometryError::PolygonFormat { line: i + 1, message: e.to_string() })?;
        if nums.len() % 2 != 0 {
            return Err(GeometryError::PolygonFormat { line: i + 1, message: "odd number of coordinates".into() });
        }
        let vertices: Vec<Point> = nums.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::PolygonFormat { line: i + 1, message: "non-finite coordinate".into() });
        }
        out.push(Polygon::new(vertices));
    }
    Ok(out)
}

pub fn write_polygons(polys: &[Polygon]) -> String {
    let mut s = String::new();
    for p in polys {
        s.push_str(&p.to_record());
        s.push('\n');
    }
    s
}

/// Binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "bit count must equal width*height");
        Self { width, height, bits }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &Mask) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// Tight bounding box `(x0, y0, x1, y1)` of set pixels, exclusive upper bound.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x + 1, y + 1),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                    });
                }
            }
        }
        bb
    }
}

/// Even-odd scanline fill sampled at pixel centers, clipped to the raster.
///
/// An edge counts as crossing a scanline when exactly one of its endpoints
/// lies strictly below it; a center counts as inside when an odd number of
/// crossings lie strictly to its right.
pub fn rasterize(poly: &Polygon, width: usize, height: usize) -> Result<Mask, GeometryError> {
    if poly.len() < 3 {
        return Err(GeometryError::DegenerateContour(poly.len()));
    }
    if poly.vertices.iter().any(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if width == 0 || height == 0 {
        return Err(GeometryError::EmptyDimensions);
    }
    let mut mask = Mask::new(width, height);
    let mut xs: Vec<f64> = Vec::new();
    for row in 0..height {
        let yc = row as f64 + 0.5;
        xs.clear();
        for (a, b) in poly.segments() {
            if (a.y > yc) != (b.y > yc) {
                xs.push((b.x - a.x) * (yc - a.y) / (b.y - a.y) + a.x);
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // `passed` = crossings with x <= center; inside iff (len - passed) is odd
        let mut passed = 0;
        for col in 0..width {
            let xc = col as f64 + 0.5;
            while passed < xs.len() && xs[passed] <= xc {
                passed += 1;
            }
            if (xs.len() - passed) % 2 == 1 {
                mask.set(col, row, true);
            }
        }
    }
    Ok(mask)
}

/// Dice similarity `2|U∩V| / (|U|+|V|)`; two empty masks agree perfectly.
pub fn dice(u: &Mask, v: &Mask) -> Result<f64, GeometryError> {
    u.same_shape(v)?;
    let (mut inter, mut nu, mut nv) = (0usize, 0usize, 0usize);
    for (&a, &b) in u.bits.iter().zip(&v.bits) {
        nu += a as usize;
        nv += b as usize;
        inter += (a && b) as usize;
    }
    if nu + nv == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (nu + nv) as f64)
}

/// Perimeter including the closing segment.
pub fn contour_length(poly: &Polygon) -> Result<f64, GeometryError> {
    if poly.len() < 2 {
        return Err(GeometryError::DegenerateContour(poly.len()));
    }
    Ok(poly.segments().map(|(a, b)| a.distance(b)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateSpace {
    Canvas,
    Image,
}

/// Total distance travelled between consecutive events.
pub fn path_length(events: &[Event], space: CoordinateSpace) -> f64 {
    let pos = |e: &Event| match space {
        CoordinateSpace::Canvas => e.canvas_pos(),
        CoordinateSpace::Image => e.image_pos(),
    };
    events.windows(2).map(|w| pos(&w[0]).distance(pos(&w[1]))).sum()
}

/// Normal of each segment, closing segment included: `(-(dy), dx)`.
pub fn segment_normals(poly: &Polygon) -> Result<Vec<Point>, GeometryError> {
    if poly.len() < 2 {
        return Err(GeometryError::DegenerateContour(poly.len()));
    }
    Ok(poly.segments().map(|(a, b)| Point::new(-(b.y - a.y), b.x - a.x)).collect())
}

/// Vertex normal: mean of the normals of the two segments meeting there.
pub fn vertex_normals(poly: &Polygon) -> Result<Vec<Point>, GeometryError> {
    if poly.len() < 3 {
        return Err(GeometryError::DegenerateContour(poly.len()));
    }
    let seg = segment_normals(poly)?;
    let n = seg.len();
    Ok((0..n).map(|i| seg[(i + n - 1) % n] * 0.5 + seg[i] * 0.5).collect())
}
