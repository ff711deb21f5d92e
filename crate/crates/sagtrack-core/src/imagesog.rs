//! Quad-tree clustering of RGB frames into 2D isotropic Sum-of-Gaussians.
//!
//! A frame is recursively subdivided into four blocks until each block is
//! color-homogeneous (HSV variance below a threshold, hue handled
//! circularly) or a size/depth bound is hit. Every emitted leaf block
//! becomes one isotropic Gaussian centered on the block with
//! `sigma = side / 2`, matching the 1-sigma surface convention of the 3D
//! model. Blocks larger than `max_block` are always subdivided so that a
//! single huge Gaussian never stands in for a flat region.
//!
//! Pixels can be excluded via an explicit background mask and/or a
//! brightness floor (HSV value below `value_floor`); fully excluded blocks
//! emit nothing, and mixed blocks keep subdividing so that foreground
//! Gaussians stay tight.

use nalgebra::{Vector2, Vector3};

use crate::color::rgb_to_hsv;
use crate::error::{Result, SagError};
use crate::gaussian::{pair_energy, Gaussian2D};
use crate::ColorSimilarityConfig;

/// A borrowed-nothing 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: u32,
    pub height: u32,
    /// Row-major pixels.
    pub data: Vec<[u8; 3]>,
}

impl RgbFrame {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![[0, 0, 0]; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, px: [u8; 3]) {
        self.data[(y * self.width + x) as usize] = px;
    }
}

/// Quad-tree subdivision parameters.
#[derive(Debug, Clone)]
pub struct QuadTreeConfig {
    /// Maximum recursion depth (root is depth 0).
    pub max_depth: u32,
    /// Total HSV variance (hue wrapped) below which a block is a leaf.
    pub color_variance_threshold: f64,
    /// Blocks are never split below this side length.
    pub min_block: u32,
    /// Blocks larger than this side length are always split.
    pub max_block: u32,
    /// Pixels with HSV value below this are treated as background.
    pub value_floor: f64,
    /// Optional per-pixel background flags (`true` = background), row-major.
    pub background_mask: Option<Vec<bool>>,
}

impl Default for QuadTreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            color_variance_threshold: 0.02,
            min_block: 2,
            max_block: 64,
            value_floor: 0.0,
            background_mask: None,
        }
    }
}

/// One emitted leaf of the quad-tree, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafBlock {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    /// Mean HSV over the block's foreground pixels.
    pub color: Vector3<f64>,
}

/// A 2D isotropic Sum-of-Gaussians approximation of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSoG {
    pub gaussians: Vec<Gaussian2D>,
    /// Per-Gaussian self-overlap `E_qq = pi sigma_q^2`.
    pub self_overlap: Vec<f64>,
    pub source_size: (u32, u32),
}

impl ImageSoG {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            gaussians: Vec::new(),
            self_overlap: Vec::new(),
            source_size: (width, height),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Fills (or refreshes) the per-Gaussian self-overlap terms; idempotent.
pub fn precompute_self_overlap(mut sog: ImageSoG) -> Result<ImageSoG> {
    // any support radius works: the distance of a color to itself is zero
    let cfg = ColorSimilarityConfig::default();
    sog.self_overlap = sog
        .gaussians
        .iter()
        .map(|q| pair_energy(q, q, &cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(sog)
}

struct Clusterer<'a> {
    width: u32,
    hsv: Vec<Vector3<f64>>,
    background: Vec<bool>,
    cfg: &'a QuadTreeConfig,
    out: Vec<LeafBlock>,
}

struct BlockStats {
    foreground: usize,
    mean: Vector3<f64>,
    variance: f64,
    mixed: bool,
}

impl Clusterer<'_> {
    fn stats(&self, x: u32, y: u32, w: u32, h: u32) -> BlockStats {
        let mut n = 0usize;
        let mut masked = 0usize;
        let (mut sum_cos, mut sum_sin, mut sum_s, mut sum_v) = (0.0, 0.0, 0.0, 0.0);
        for yy in y..y + h {
            for xx in x..x + w {
                let idx = (yy * self.width + xx) as usize;
                if self.background[idx] {
                    masked += 1;
                    continue;
                }
                let hsv = self.hsv[idx];
                let angle = hsv.x * std::f64::consts::TAU;
                sum_cos += angle.cos();
                sum_sin += angle.sin();
                sum_s += hsv.y;
                sum_v += hsv.z;
                n += 1;
            }
        }
        if n == 0 {
            return BlockStats {
                foreground: 0,
                mean: Vector3::zeros(),
                variance: 0.0,
                mixed: masked > 0,
            };
        }
        let inv = 1.0 / n as f64;
        let mean_h = sum_sin.atan2(sum_cos).rem_euclid(std::f64::consts::TAU)
            / std::f64::consts::TAU;
        let mean_s = sum_s * inv;
        let mean_v = sum_v * inv;
        let mut var = 0.0;
        for yy in y..y + h {
            for xx in x..x + w {
                let idx = (yy * self.width + xx) as usize;
                if self.background[idx] {
                    continue;
                }
                let hsv = self.hsv[idx];
                let dh = crate::color::wrap_hue(hsv.x - mean_h);
                let ds = hsv.y - mean_s;
                let dv = hsv.z - mean_v;
                var += dh * dh + ds * ds + dv * dv;
            }
        }
        BlockStats {
            foreground: n,
            mean: Vector3::new(mean_h, mean_s, mean_v),
            variance: var * inv,
            mixed: masked > 0,
        }
    }

    fn cluster(&mut self, x: u32, y: u32, w: u32, h: u32, depth: u32) {
        let stats = self.stats(x, y, w, h);
        if stats.foreground == 0 {
            return;
        }
        let cfg = self.cfg;
        let split_w = w >= 2 * cfg.min_block;
        let split_h = h >= 2 * cfg.min_block;
        let oversize = w.max(h) > cfg.max_block;
        let wants = oversize || stats.mixed || stats.variance > cfg.color_variance_threshold;
        if wants && depth < cfg.max_depth && (split_w || split_h) {
            let w1 = if split_w { w.div_ceil(2) } else { w };
            let h1 = if split_h { h.div_ceil(2) } else { h };
            // canonical child order: top-left, top-right, bottom-left, bottom-right
            self.cluster(x, y, w1, h1, depth + 1);
            if split_w {
                self.cluster(x + w1, y, w - w1, h1, depth + 1);
            }
            if split_h {
                self.cluster(x, y + h1, w1, h - h1, depth + 1);
            }
            if split_w && split_h {
                self.cluster(x + w1, y + h1, w - w1, h - h1, depth + 1);
            }
            return;
        }
        self.out.push(LeafBlock {
            x,
            y,
            w,
            h,
            color: stats.mean,
        });
    }
}

/// Runs the quad-tree subdivision and returns the emitted leaf blocks in
/// canonical depth-first order. [`quadtree_cluster`] converts these into
/// Gaussians; the raw blocks are also useful for coverage checks and
/// visualization.
pub fn quadtree_blocks(frame: &RgbFrame, cfg: &QuadTreeConfig) -> Result<Vec<LeafBlock>> {
    if frame.width == 0 || frame.height == 0 {
        return Err(SagError::InvalidInput("zero-sized image".into()));
    }
    if frame.data.len() != (frame.width * frame.height) as usize {
        return Err(SagError::InvalidInput(format!(
            "frame buffer length {} does not match {}x{}",
            frame.data.len(),
            frame.width,
            frame.height
        )));
    }
    if cfg.max_depth < 1 || cfg.min_block < 1 {
        return Err(SagError::InvalidInput(
            "quad-tree bounds must be at least 1".into(),
        ));
    }
    if let Some(mask) = &cfg.background_mask {
        if mask.len() != frame.data.len() {
            return Err(SagError::InvalidInput(format!(
                "background mask length {} does not match frame",
                mask.len()
            )));
        }
    }
    let hsv: Vec<Vector3<f64>> = frame
        .data
        .iter()
        .map(|p| rgb_to_hsv(p[0], p[1], p[2]))
        .collect();
    let background: Vec<bool> = hsv
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.z < cfg.value_floor || cfg.background_mask.as_ref().is_some_and(|m| m[i])
        })
        .collect();
    let mut clusterer = Clusterer {
        width: frame.width,
        hsv,
        background,
        cfg,
        out: Vec::new(),
    };
    clusterer.cluster(0, 0, frame.width, frame.height, 0);
    Ok(clusterer.out)
}

/// Clusters a frame into an [`ImageSoG`] with self-overlaps precomputed.
pub fn quadtree_cluster(frame: &RgbFrame, cfg: &QuadTreeConfig) -> Result<ImageSoG> {
    let blocks = quadtree_blocks(frame, cfg)?;
    let gaussians = blocks
        .iter()
        .map(|b| {
            let sigma = 0.5 * (f64::from(b.w) * f64::from(b.h)).sqrt();
            let mean = Vector2::new(
                f64::from(b.x) + f64::from(b.w) / 2.0,
                f64::from(b.y) + f64::from(b.h) / 2.0,
            );
            Gaussian2D::isotropic(mean, sigma, b.color)
        })
        .collect::<Result<Vec<_>>>()?;
    precompute_self_overlap(ImageSoG {
        gaussians,
        self_overlap: Vec::new(),
        source_size: (frame.width, frame.height),
    })
}
