//! Raster decoding and the hand-detection preprocessing chain.
//!
//! A raw frame goes through an HSV skin threshold, the largest connected
//! blob of skin pixels is cropped out, and the crop is converted to
//! grayscale, resized to 32×32 and scaled into `[0, 1]`.

use std::collections::VecDeque;

use thiserror::Error;

/// Side length of the square network input.
pub const INPUT_SIDE: usize = 32;
/// Number of samples in a [`GrayImage32`].
pub const INPUT_LEN: usize = INPUT_SIDE * INPUT_SIDE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImagingError {
    #[error("malformed netpbm header: {0}")]
    MalformedHeader(String),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    TruncatedPixelData { expected: usize, found: usize },
    #[error("unsupported maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("expected a {expected}-channel image, got {found} channels")]
    WrongChannelCount { expected: usize, found: usize },
    #[error("bounding box ({x},{y},{w},{h}) lies outside a {width}x{height} image")]
    BoxOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("invalid image: {0}")]
    Invalid(String),
}

/// 8-bit raster, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::Invalid(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(ImagingError::Invalid(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(ImagingError::Invalid(format!(
                "pixel buffer holds {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Image filled with a single gray level or RGB colour.
    pub fn filled(width: usize, height: usize, sample: &[u8]) -> Result<Self, ImagingError> {
        let pixels = sample
            .iter()
            .copied()
            .cycle()
            .take(width * height * sample.len())
            .collect();
        Self::new(width, height, sample.len(), pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// Samples of the pixel at column `x`, row `y`.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = (y * self.width + x) * self.channels;
        &self.pixels[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let start = (y * self.width + x) * self.channels;
        &mut self.pixels[start..start + self.channels]
    }
}

/// Normalized 32×32 single-channel network input with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage32 {
    pixels: Vec<f64>,
}

impl GrayImage32 {
    pub fn new(pixels: Vec<f64>) -> Result<Self, ImagingError> {
        if pixels.len() != INPUT_LEN {
            return Err(ImagingError::Invalid(format!(
                "expected {INPUT_LEN} samples, got {}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImagingError::Invalid(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(Self { pixels })
    }

    pub fn zeros() -> Self {
        Self {
            pixels: vec![0.0; INPUT_LEN],
        }
    }

    /// Clamps every sample into `[0, 1]`; NaN becomes 0.
    pub fn from_clamped(pixels: Vec<f64>) -> Result<Self, ImagingError> {
        let pixels = pixels
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(pixels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * INPUT_SIDE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            (0.0..=1.0).contains(&value),
            "sample {value} outside [0, 1]"
        );
        self.pixels[row * INPUT_SIDE + col] = value;
    }

    /// Quantizes back to an 8-bit single-channel raster.
    pub fn to_raster(&self) -> RasterImage {
        let pixels = self
            .pixels
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        RasterImage::new(INPUT_SIDE, INPUT_SIDE, 1, pixels).expect("32x32 gray raster")
    }
}

/// Inclusive HSV acceptance box. The hue interval wraps through 360° when
/// `h_min > h_max`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HsvThreshold {
    pub h_min: f64,
    pub h_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for HsvThreshold {
    fn default() -> Self {
        Self {
            h_min: 0.0,
            h_max: 50.0,
            s_min: 0.20,
            s_max: 1.0,
            v_min: 0.20,
            v_max: 1.0,
        }
    }
}

impl HsvThreshold {
    pub fn validate(&self) -> Result<(), ImagingError> {
        let hue_ok = |h: f64| (0.0..360.0).contains(&h);
        let unit_ok = |v: f64| (0.0..=1.0).contains(&v);
        if !hue_ok(self.h_min) || !hue_ok(self.h_max) {
            return Err(ImagingError::Invalid(
                "hue bounds must lie in [0, 360)".into(),
            ));
        }
        if ![self.s_min, self.s_max, self.v_min, self.v_max]
            .into_iter()
            .all(unit_ok)
        {
            return Err(ImagingError::Invalid(
                "saturation/value bounds must lie in [0, 1]".into(),
            ));
        }
        if self.s_min > self.s_max || self.v_min > self.v_max {
            return Err(ImagingError::Invalid(
                "saturation/value intervals are inverted".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, h: f64, s: f64, v: f64) -> bool {
        let hue_in = if self.h_min <= self.h_max {
            h >= self.h_min && h <= self.h_max
        } else {
            h >= self.h_min || h <= self.h_max
        };
        hue_in && (self.s_min..=self.s_max).contains(&s) && (self.v_min..=self.v_max).contains(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImagingError> {
        if bits.len() != width * height {
            return Err(ImagingError::Invalid(format!(
                "mask holds {} bits, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn full(image: &RasterImage) -> Self {
        Self {
            x: 0,
            y: 0,
            w: image.width,
            h: image.height,
        }
    }
}

// ---------------------------------------------------------------------------
// netpbm

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImagingError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImagingError::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImagingError::MalformedHeader(format!("{what} out of range")))
    }
}

/// Decodes a binary P5 (gray) or P6 (RGB) stream with maxval 255.
pub fn decode_netpbm(bytes: &[u8]) -> Result<RasterImage, ImagingError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(ImagingError::MalformedHeader(
                "magic must be P5 or P6".into(),
            ))
        }
    };
    let mut header = HeaderReader { bytes, pos: 2 };
    if !bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(ImagingError::MalformedHeader(
            "magic must be followed by whitespace".into(),
        ));
    }
    let width = header.number("width")? as usize;
    let height = header.number("height")? as usize;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImagingError::MalformedHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(ImagingError::UnsupportedMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        Some(_) => {
            return Err(ImagingError::MalformedHeader(
                "maxval must be followed by a single whitespace byte".into(),
            ))
        }
        None => {
            return Err(ImagingError::TruncatedPixelData {
                expected: width * height * channels,
                found: 0,
            })
        }
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImagingError::MalformedHeader("dimensions overflow".into()))?;
    let data = &bytes[header.pos..];
    if data.len() < expected {
        return Err(ImagingError::TruncatedPixelData {
            expected,
            found: data.len(),
        });
    }
    RasterImage::new(width, height, channels, data[..expected].to_vec())
}

pub fn encode_netpbm(image: &RasterImage) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let header = format!("{magic}\n{} {}\n255\n", image.width, image.height);
    let mut out = Vec::with_capacity(header.len() + image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&image.pixels);
    out
}

// ---------------------------------------------------------------------------
// colour

/// ITU-R BT.601 luma, rounded half away from zero.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
        .round()
        .clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(image: &RasterImage) -> RasterImage {
    if image.channels == 1 {
        return image.clone();
    }
    let pixels = image
        .pixels
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    RasterImage::new(image.width, image.height, 1, pixels).expect("same geometry")
}

/// Hexcone HSV: hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (rf, gf, bf) = (f64::from(r), f64::from(g), f64::from(b));
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let delta = max - min;
    let v = max / 255.0;
    let s = if max == 0.0 { 0.0 } else { delta / max };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let h = if max == rf {
        60.0 * ((gf - bf) / delta)
    } else if max == gf {
        60.0 * ((bf - rf) / delta + 2.0)
    } else {
        60.0 * ((rf - gf) / delta + 4.0)
    };
    let h = if h < 0.0 { h + 360.0 } else { h };
    (if h >= 360.0 { h - 360.0 } else { h }, s, v)
}

pub fn skin_mask(image: &RasterImage, th: &HsvThreshold) -> Result<BinaryMask, ImagingError> {
    if image.channels != 3 {
        return Err(ImagingError::WrongChannelCount {
            expected: 3,
            found: image.channels,
        });
    }
    let bits = image
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
            th.contains(h, s, v)
        })
        .collect();
    BinaryMask::new(image.width, image.height, bits)
}

/// Bounding box of the largest 4-connected component. Equal-sized
/// components resolve to the one whose first pixel comes earliest in a
/// row-major scan.
pub fn largest_component_bbox(mask: &BinaryMask) -> Result<BoundingBox, ImagingError> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut best: Option<(usize, BoundingBox)> = None;

    for seed in 0..w * h {
        if !mask.bits[seed] || visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut size = 0;
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % w, idx / w);
            size += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut visit = |n: usize| {
                if mask.bits[n] && !visited[n] {
                    visited[n] = true;
                    queue.push_back(n);
                }
            };
            if x > 0 {
                visit(idx - 1);
            }
            if x + 1 < w {
                visit(idx + 1);
            }
            if y > 0 {
                visit(idx - w);
            }
            if y + 1 < h {
                visit(idx + w);
            }
        }
        if best.is_none_or(|(n, _)| size > n) {
            let bbox = BoundingBox {
                x: x0,
                y: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            };
            best = Some((size, bbox));
        }
    }
    best.map(|(_, b)| b).ok_or(ImagingError::EmptyMask)
}

pub fn crop(image: &RasterImage, bbox: &BoundingBox) -> Result<RasterImage, ImagingError> {
    let fits = bbox.w >= 1
        && bbox.h >= 1
        && bbox.x.checked_add(bbox.w).is_some_and(|r| r <= image.width)
        && bbox
            .y
            .checked_add(bbox.h)
            .is_some_and(|b| b <= image.height);
    if !fits {
        return Err(ImagingError::BoxOutOfBounds {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h,
            width: image.width,
            height: image.height,
        });
    }
    let c = image.channels;
    let row_len = bbox.w * c;
    let mut pixels = Vec::with_capacity(bbox.h * row_len);
    for y in bbox.y..bbox.y + bbox.h {
        let start = (y * image.width + bbox.x) * c;
        pixels.extend_from_slice(&image.pixels[start..start + row_len]);
    }
    RasterImage::new(bbox.w, bbox.h, c, pixels)
}

/// Source coordinate and blend weight for one output index under the
/// half-pixel-centre mapping.
fn source_coord(dst: usize, scale: f64, src_len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, src - lo as f64)
}

pub fn resize_bilinear(
    image: &RasterImage,
    out_w: usize,
    out_h: usize,
) -> Result<RasterImage, ImagingError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImagingError::Invalid(format!(
            "target size must be positive, got {out_w}x{out_h}"
        )));
    }
    let c = image.channels;
    let sx = image.width as f64 / out_w as f64;
    let sy = image.height as f64 / out_h as f64;
    let cols: Vec<_> = (0..out_w)
        .map(|x| source_coord(x, sx, image.width))
        .collect();
    let mut pixels = Vec::with_capacity(out_w * out_h * c);
    for y in 0..out_h {
        let (y0, y1, fy) = source_coord(y, sy, image.height);
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let at = |xx: usize, yy: usize| {
                    f64::from(image.pixels[(yy * image.width + xx) * c + ch])
                };
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage::new(out_w, out_h, c, pixels)
}

/// Full detection chain: skin crop for colour frames (whole frame when no
/// skin is found), grayscale, 32×32 resize, scale to `[0, 1]`.
pub fn preprocess(image: &RasterImage, th: &HsvThreshold) -> GrayImage32 {
    let cropped;
    let region = if image.channels == 3 {
        let mask = skin_mask(image, th).expect("three channels checked");
        cropped = match largest_component_bbox(&mask) {
            Ok(bbox) => crop(image, &bbox).expect("component box lies inside the frame"),
            Err(_) => image.clone(),
        };
        &cropped
    } else {
        image
    };
    let gray = to_grayscale(region);
    let small = resize_bilinear(&gray, INPUT_SIDE, INPUT_SIDE).expect("positive target");
    let pixels = small.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    GrayImage32::new(pixels).expect("normalized 8-bit samples")
}
