//! Grid state and geometry primitives.
//!
//! A sample is a real-valued H×W×C grid. All sampler math runs on `f64`
//! grids; nothing in this crate is latent-space.

use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GlodError, Result};

/// The evolving sample state x_t (and plain images): an H×W×C grid of reals.
pub type Grid = Array3<f64>;

pub fn check_same_shape(a: &Grid, b: &Grid) -> Result<()> {
    if a.dim() != b.dim() {
        let (eh, ew, ec) = a.dim();
        let (gh, gw, gc) = b.dim();
        return Err(GlodError::ShapeMismatch {
            expected: vec![eh, ew, ec],
            got: vec![gh, gw, gc],
        });
    }
    Ok(())
}

/// Standard normal grid draw.
pub fn randn(h: usize, w: usize, c: usize, rng: &mut impl Rng) -> Grid {
    Grid::from_shape_simple_fn((h, w, c), || rng.sample(StandardNormal))
}

pub fn all_finite(g: &Grid) -> bool {
    g.iter().all(|v| v.is_finite())
}

pub fn l2_norm(g: &Grid) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn linf_norm(g: &Grid) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Axis-aligned box in normalized [0,1] image coordinates.
///
/// `x` runs along the width axis, `y` along the height axis. Rasterization
/// uses half-open pixel coverage: pixel (r, col) is inside iff its center
/// coordinate lies in [y0, y1) × [x0, x1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BoundingBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        if !(inside(self.x0) && inside(self.x1) && inside(self.y0) && inside(self.y1)) {
            return Err(GlodError::invalid(format!(
                "box {self:?} not within the unit square"
            )));
        }
        if !(self.x0 < self.x1 && self.y0 < self.y1) {
            return Err(GlodError::invalid(format!(
                "box {self:?} must satisfy x0<x1 and y0<y1"
            )));
        }
        Ok(())
    }

    /// Whether the center of pixel (row, col) on an h×w raster falls inside.
    pub fn contains_pixel(&self, row: usize, col: usize, h: usize, w: usize) -> bool {
        let cy = (row as f64 + 0.5) / h as f64;
        let cx = (col as f64 + 0.5) / w as f64;
        cy >= self.y0 && cy < self.y1 && cx >= self.x0 && cx < self.x1
    }
}
