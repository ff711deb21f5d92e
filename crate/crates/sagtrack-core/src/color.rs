//! HSV color handling and the compactly supported color similarity kernel.
//!
//! Colors are 3-vectors `(h, s, v)` with every component in `[0, 1]` and the
//! hue treated as periodic. Similarity between two colors is the Wendland C²
//! polynomial
//!
//! ```text
//! phi(r) = (1 - r)^4 (4 r + 1)   for r in [0, 1],   0 otherwise,
//! ```
//!
//! evaluated at `r = dist_hsv(a, b) / tau`. The kernel is 1 at zero distance,
//! exactly 0 at and beyond the support radius `tau`, and C² smooth at both
//! ends, which keeps the fitting energy differentiable.

use nalgebra::Vector3;

use crate::error::{Result, SagError};

/// Configuration for the color similarity kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorSimilarityConfig {
    /// Support radius `tau` in normalized HSV distance. Similarity is exactly
    /// zero for colors farther apart than this.
    pub support_radius: f64,
}

impl Default for ColorSimilarityConfig {
    fn default() -> Self {
        Self {
            support_radius: 0.15,
        }
    }
}

impl ColorSimilarityConfig {
    pub fn new(support_radius: f64) -> Result<Self> {
        if !(support_radius > 0.0) {
            return Err(SagError::InvalidInput(format!(
                "color support radius must be positive, got {support_radius}"
            )));
        }
        Ok(Self { support_radius })
    }
}

/// Wraps a hue difference to `[-0.5, 0.5]`.
#[inline]
pub fn wrap_hue(dh: f64) -> f64 {
    let mut d = dh % 1.0;
    if d > 0.5 {
        d -= 1.0;
    } else if d < -0.5 {
        d += 1.0;
    }
    d
}

/// Euclidean distance on `(h, s, v)` with the hue difference wrapped to
/// `[-0.5, 0.5]`.
#[inline]
pub fn hsv_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dh = wrap_hue(a.x - b.x);
    let ds = a.y - b.y;
    let dv = a.z - b.z;
    (dh * dh + ds * ds + dv * dv).sqrt()
}

/// The Wendland C² kernel `(1 - r)^4 (4 r + 1)` on `[0, 1]`, zero outside.
#[inline]
pub fn wendland_c2(r: f64) -> f64 {
    if r >= 1.0 {
        return 0.0;
    }
    let t = 1.0 - r;
    let t2 = t * t;
    t2 * t2 * (4.0 * r + 1.0)
}

/// Color similarity `d(c_p, c_q)` in `[0, 1]`.
#[inline]
pub fn color_similarity(
    c_p: &Vector3<f64>,
    c_q: &Vector3<f64>,
    cfg: &ColorSimilarityConfig,
) -> f64 {
    wendland_c2(hsv_distance(c_p, c_q) / cfg.support_radius)
}

/// Converts an 8-bit RGB triple to normalized HSV.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> Vector3<f64> {
    let r = f64::from(r) / 255.0;
    let g = f64::from(g) / 255.0;
    let b = f64::from(b) / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;

    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    Vector3::new(h, s, max)
}

/// Converts normalized HSV to an 8-bit RGB triple.
pub fn hsv_to_rgb(hsv: &Vector3<f64>) -> [u8; 3] {
    let h = hsv.x.rem_euclid(1.0) * 6.0;
    let s = hsv.y.clamp(0.0, 1.0);
    let v = hsv.z.clamp(0.0, 1.0);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}
