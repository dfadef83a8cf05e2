//! Netpbm reading and writing.
//!
//! Reads P2/P5 grayscale and P3/P6 color (converted to luminance
//! `0.299 R + 0.587 G + 0.114 B`), 8 or 16 bit. Samples are rescaled to
//! `[0, 255]`. Writes binary P5 with maxval 255.

use thiserror::Error;

use crate::geometry::Mask;
use crate::imaging::GrayImage;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("unsupported or missing magic number `{0}`")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated pixel data")]
    Truncated,
    #[error("bad sample `{0}`")]
    Sample(String),
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.data.len() {
            let c = self.data[self.pos];
            if c == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a str> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.data[start..self.pos]).ok()
    }

    fn number(&mut self, what: &str) -> Result<usize, PnmError> {
        let t = self.token().ok_or_else(|| PnmError::Header(format!("missing {what}")))?;
        t.parse().map_err(|_| PnmError::Header(format!("bad {what} `{t}`")))
    }
}

/// Decodes any supported Netpbm image to grayscale.
pub fn decode_gray(data: &[u8]) -> Result<GrayImage, PnmError> {
    let mut c = Cursor { data, pos: 0 };
    let magic = c.token().unwrap_or("").to_string();
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P5" => (1, true),
        "P3" => (3, false),
        "P6" => (3, true),
        _ => return Err(PnmError::BadMagic(magic)),
    };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PnmError::Header("zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(PnmError::Header(format!("maxval {maxval} out of range")));
    }
    let n = width * height * channels;
    let mut samples = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates header and raster
        c.pos += 1;
        let bytes_per = if maxval > 255 { 2 } else { 1 };
        let raster = data.get(c.pos..c.pos + n * bytes_per).ok_or(PnmError::Truncated)?;
        if bytes_per == 1 {
            samples.extend(raster.iter().map(|&b| b as f64));
        } else {
            samples.extend(raster.chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64));
        }
    } else {
        for _ in 0..n {
            let t = c.token().ok_or(PnmError::Truncated)?;
            let v: usize = t.parse().map_err(|_| PnmError::Sample(t.to_string()))?;
            samples.push(v as f64);
        }
    }
    let scale = 255.0 / maxval as f64;
    let pixels = if channels == 1 {
        samples.into_iter().map(|v| v * scale).collect()
    } else {
        samples.chunks(3).map(|rgb| (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]) * scale).collect()
    };
    Ok(GrayImage::from_vec(width, height, pixels).expect("dimensions checked"))
}

/// Encodes as binary P5, maxval 255, rounding and clamping intensities.
pub fn encode_gray(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    out
}

/// Object pixels are 255, background 0.
pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Any sample at or above half intensity counts as object.
pub fn decode_mask(data: &[u8]) -> Result<Mask, PnmError> {
    let img = decode_gray(data)?;
    Ok(Mask::from_bits(img.width(), img.height(), img.pixels().iter().map(|&v| v >= 127.5).collect()))
}
