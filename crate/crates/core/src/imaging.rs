//! Grayscale images and Gaussian-smoothed gradient fields.
//!
//! The gradient operator is separable: along the derivative axis the image is
//! correlated with the central difference of a sampled, normalized Gaussian
//! (`w[k] = (g[k+1] - g[k-1]) / 2`), along the other axis with the Gaussian
//! itself. `g` is truncated at radius `ceil(3σ)`. The field is therefore the
//! exact central difference of the Gaussian-smoothed image on interior
//! pixels. Borders replicate edge pixels.

use thiserror::Error;

use crate::geometry::Point;

#[derive(Debug, Error, PartialEq)]
pub enum ImagingError {
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("image dimensions must be positive and match the pixel count")]
    BadDimensions,
    #[error("non-finite intensity")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImagingError::BadDimensions);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImagingError::NonFinite);
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Interleaved 8-bit RGB to luminance.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self, ImagingError> {
        if rgb.len() != width * height * 3 {
            return Err(ImagingError::BadDimensions);
        }
        let data = rgb.chunks(3).map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect();
        Self::from_vec(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    sigma: f64,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Stored gradient of pixel `(x, y)`.
    pub fn at(&self, x: usize, y: usize) -> Point {
        let i = y * self.width + x;
        Point::new(self.gx[i], self.gy[i])
    }

    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        self.at(x, y).norm()
    }
}

/// Normalized sampled Gaussian, radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let mut g: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);
    g
}

/// Weights of `I(i+k) - I(i-k)` for `k = 1..=radius+1`: `(g[k-1] - g[k+1]) / 2`,
/// i.e. the central difference of the smoothed signal.
fn derivative_half(g: &[f64]) -> Vec<f64> {
    let r = (g.len() - 1) / 2;
    let at = |k: isize| -> f64 {
        let i = k + r as isize;
        if i < 0 || i as usize >= g.len() {
            0.0
        } else {
            g[i as usize]
        }
    };
    (1..=r as isize + 1).map(|k| 0.5 * (at(k - 1) - at(k + 1))).collect()
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Symmetric smoothing along one axis.
fn smooth_line(src: &[f64], dst: &mut [f64], g: &[f64]) {
    let r = (g.len() - 1) / 2;
    let n = src.len();
    for (i, out) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &w) in g.iter().enumerate() {
            acc += w * src[clamp_idx(i as isize + j as isize - r as isize, n)];
        }
        *out = acc;
    }
}

/// Antisymmetric derivative along one axis. Pairs `I(i+k) - I(i-k)` so a
/// constant line gives exactly zero.
fn diff_line(src: &[f64], dst: &mut [f64], half: &[f64]) {
    let n = src.len();
    for (i, out) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k0, &w) in half.iter().enumerate() {
            let k = k0 as isize + 1;
            acc += w * (src[clamp_idx(i as isize + k, n)] - src[clamp_idx(i as isize - k, n)]);
        }
        *out = acc;
    }
}

fn along_rows(img: &[f64], w: usize, h: usize, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        f(&img[y * w..(y + 1) * w], &mut out[y * w..(y + 1) * w]);
    }
    out
}

fn along_cols(img: &[f64], w: usize, h: usize, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut col = vec![0.0; h];
    let mut res = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = img[y * w + x];
        }
        f(&col, &mut res);
        for y in 0..h {
            out[y * w + x] = res[y];
        }
    }
    out
}

/// Gradient of the Gaussian-smoothed image, in intensity units per pixel.
pub fn gaussian_gradient(img: &GrayImage, sigma: f64) -> Result<GradientField, ImagingError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(ImagingError::BadSigma(sigma));
    }
    let (w, h) = (img.width, img.height);
    let g = gaussian_kernel(sigma);
    let d = derivative_half(&g);
    let dx_rows = along_rows(&img.data, w, h, |s, o| diff_line(s, o, &d));
    let gx = along_cols(&dx_rows, w, h, |s, o| smooth_line(s, o, &g));
    let sm_rows = along_rows(&img.data, w, h, |s, o| smooth_line(s, o, &g));
    let gy = along_cols(&sm_rows, w, h, |s, o| diff_line(s, o, &d));
    Ok(GradientField { width: w, height: h, sigma, gx, gy })
}

/// Bilinear sample at an image point; pixel centers sit at `(x+0.5, y+0.5)`
/// and points outside the image clamp to the border.
pub fn sample_gradient(field: &GradientField, p: Point) -> Point {
    let fx = (p.x - 0.5).clamp(0.0, (field.width - 1) as f64);
    let fy = (p.y - 0.5).clamp(0.0, (field.height - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(field.width - 1);
    let y1 = (y0 + 1).min(field.height - 1);
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let lerp = |a: Point, b: Point, t: f64| if t == 0.0 { a } else { a * (1.0 - t) + b * t };
    let top = lerp(field.at(x0, y0), field.at(x1, y0), tx);
    let bottom = lerp(field.at(x0, y1), field.at(x1, y1), tx);
    lerp(top, bottom, ty)
}
