//! Image normalization: bit-depth windowing, full-range rescale, and
//! bilinear resize to the model's square input.
//!
//! Raw studies arrive as 8- to 16-bit grayscale grids. They are mapped to
//! 8 bits — through the stored window when one is present, otherwise over
//! the image's own value range — and then resampled to `side x side`
//! (448 by default), with bounding boxes rescaled by the same factors.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::labelspace::{BoundingBox, ConsensusAnnotation, Finding};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("bit depth {0} outside supported range 8..=16")]
    BadBitDepth(u8),
    #[error("pixel buffer length {got} does not match {width}x{height}")]
    BadDimensions { width: usize, height: usize, got: usize },
    #[error("pixel value {value} exceeds 2^{bit_depth}-1")]
    PixelOutOfRange { value: u16, bit_depth: u8 },
    #[error("window width must be positive, got {0}")]
    InvalidWindow(f64),
    #[error("windowing parameters are absent")]
    MissingWindow,
    #[error("image side must be positive")]
    ZeroSide,
}

/// A high-bit-depth grayscale image as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub window_center: Option<f64>,
    pub window_width: Option<f64>,
    pub pixels: Vec<u16>,
}

impl RawImage {
    pub fn validate(&self) -> Result<(), ImageError> {
        if !(8..=16).contains(&self.bit_depth) {
            return Err(ImageError::BadBitDepth(self.bit_depth));
        }
        if self.width == 0 || self.height == 0 || self.pixels.len() != self.width * self.height {
            return Err(ImageError::BadDimensions {
                width: self.width,
                height: self.height,
                got: self.pixels.len(),
            });
        }
        let max = self.max_value();
        if let Some(&v) = self.pixels.iter().find(|&&v| v > max) {
            return Err(ImageError::PixelOutOfRange {
                value: v,
                bit_depth: self.bit_depth,
            });
        }
        if let Some(w) = self.window_width {
            if w <= 0.0 || !w.is_finite() {
                return Err(ImageError::InvalidWindow(w));
            }
        }
        Ok(())
    }

    /// Largest representable value at this bit depth.
    pub fn max_value(&self) -> u16 {
        if self.bit_depth == 16 {
            u16::MAX
        } else {
            (1u16 << self.bit_depth) - 1
        }
    }

    pub fn has_window(&self) -> bool {
        self.window_center.is_some() && self.window_width.is_some()
    }
}

/// 8-bit grayscale at the original resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// 8-bit square model input plus the resize factors that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub side: usize,
    pub scale_x: f64,
    pub scale_y: f64,
    pub pixels: Vec<u8>,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Maps pixel values to 8 bits through the stored window:
/// `round(255 * clamp((p - (c - w/2)) / w, 0, 1))`.
pub fn apply_windowing(img: &RawImage) -> Result<Gray8, ImageError> {
    let center = img.window_center.ok_or(ImageError::MissingWindow)?;
    let width = img.window_width.ok_or(ImageError::MissingWindow)?;
    if width <= 0.0 || !width.is_finite() {
        return Err(ImageError::InvalidWindow(width));
    }
    let lo = center - width / 2.0;
    let pixels = img
        .pixels
        .iter()
        .map(|&p| libm::round(255.0 * clamp01((p as f64 - lo) / width)) as u8)
        .collect();
    Ok(Gray8 {
        width: img.width,
        height: img.height,
        pixels,
    })
}

/// Maps pixel values to 8 bits over the image's own min/max range. A
/// constant image maps to all zeros.
pub fn full_range_normalize(img: &RawImage) -> Gray8 {
    let min = img.pixels.iter().copied().min().unwrap_or(0);
    let max = img.pixels.iter().copied().max().unwrap_or(0);
    let pixels = if max == min {
        vec![0u8; img.pixels.len()]
    } else {
        let span = (max - min) as f64;
        img.pixels
            .iter()
            .map(|&p| libm::round(255.0 * (p - min) as f64 / span) as u8)
            .collect()
    };
    Gray8 {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Windowing when parameters are stored, full-range otherwise.
pub fn normalize_to_8bit(img: &RawImage) -> Result<Gray8, ImageError> {
    img.validate()?;
    if img.has_window() {
        apply_windowing(img)
    } else {
        Ok(full_range_normalize(img))
    }
}

/// Bilinear resample to a `side x side` square. Sample points are pixel
/// centers (half-pixel convention), clamped at the edges.
pub fn resize_bilinear(img: &Gray8, side: usize) -> Result<NormalizedImage, ImageError> {
    if side == 0 {
        return Err(ImageError::ZeroSide);
    }
    let (w, h) = (img.width, img.height);
    let sx = w as f64 / side as f64;
    let sy = h as f64 / side as f64;
    let mut pixels = Vec::with_capacity(side * side);
    for dy in 0..side {
        let src_y = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = src_y as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = src_y - y0 as f64;
        for dx in 0..side {
            let src_x = ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = src_x as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = src_x - x0 as f64;
            let p = |x: usize, y: usize| img.pixels[y * w + x] as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            pixels.push(libm::round(top * (1.0 - fy) + bot * fy) as u8);
        }
    }
    Ok(NormalizedImage {
        side,
        scale_x: side as f64 / w as f64,
        scale_y: side as f64 / h as f64,
        pixels,
    })
}

impl NormalizedImage {
    /// A constant-valued square image (handy in tests).
    pub fn constant(side: usize, value: u8) -> Self {
        NormalizedImage {
            side,
            scale_x: 1.0,
            scale_y: 1.0,
            pixels: vec![value; side * side],
        }
    }
}

/// A finding dropped during rescale, with the reason recorded for the log.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedFinding {
    pub finding: Finding,
    pub reason: String,
}

/// Outcome of rescaling an annotation to the resized image frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledAnnotation {
    pub annotation: ConsensusAnnotation,
    pub dropped: Vec<DroppedFinding>,
}

/// Multiplies every box by the per-axis resize factors. Boxes whose area
/// falls below one pixel are dropped (flagged, not clamped).
pub fn rescale_annotation(
    ann: &ConsensusAnnotation,
    scale_x: f64,
    scale_y: f64,
    side: usize,
) -> RescaledAnnotation {
    let mut out = ConsensusAnnotation {
        globals: ann.globals.clone(),
        findings: Vec::new(),
    };
    let mut dropped = Vec::new();
    let s = side as f64;
    for f in &ann.findings {
        let bbox = BoundingBox {
            x_min: (f.bbox.x_min * scale_x).clamp(0.0, s),
            y_min: (f.bbox.y_min * scale_y).clamp(0.0, s),
            x_max: (f.bbox.x_max * scale_x).clamp(0.0, s),
            y_max: (f.bbox.y_max * scale_y).clamp(0.0, s),
        };
        let scaled = Finding { label: f.label, bbox };
        if bbox.validate().is_err() || bbox.area() < 1.0 {
            dropped.push(DroppedFinding {
                finding: scaled,
                reason: String::from("box area below one pixel after rescale"),
            });
        } else {
            out.findings.push(scaled);
        }
    }
    RescaledAnnotation {
        annotation: out,
        dropped,
    }
}

/// Normalizes and resizes a study image together with its annotation.
pub fn resize_study(
    image: &Gray8,
    ann: &ConsensusAnnotation,
    side: usize,
) -> Result<(NormalizedImage, RescaledAnnotation), ImageError> {
    let resized = resize_bilinear(image, side)?;
    let rescaled = rescale_annotation(ann, resized.scale_x, resized.scale_y, side);
    Ok((resized, rescaled))
}
