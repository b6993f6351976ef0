//! Pre-prediction layout stage: nudges x_t so that each target condition's
//! guidance evidence concentrates inside its bounding box.
//!
//! Toy backends have no attention maps, so the stage works on an attention
//! proxy instead: A_c = |ε̂(x,t,c) − ε̂(x,t,∅)| normalized to sum 1. The
//! energy E = Σ_c (1 − Σ_{inside box} A_c)² is non-negative and vanishes
//! when no conditional evidence sits outside the box. Its gradient is taken
//! by central finite differences on a coarse tile basis, and x_t descends
//! that gradient for a few clipped steps.

use ndarray::Zip;

use crate::composer::RegionMask;
use crate::denoiser::{Condition, Denoiser};
use crate::error::Result;
use crate::grid::{BoundingBox, Grid};
use crate::schedule::Schedule;

/// One object to steer: a condition and where its evidence should live.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutTarget {
    pub condition: Condition,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutConfig {
    pub enabled: bool,
    /// Inner gradient-descent iterations per step.
    pub iters: usize,
    /// Step size as a multiple of σ_t.
    pub eta_scale: f64,
    /// Elementwise clip on the estimated gradient.
    pub grad_clip: f64,
    /// Stage is active only for the first `active_frac` of the T..1 loop.
    pub active_frac: f64,
    /// Tile basis resolution for the finite-difference gradient.
    pub probe_grid: usize,
    /// Probe perturbation size.
    pub probe_h: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            enabled: true,
            iters: 3,
            eta_scale: 0.3,
            grad_clip: 1.0,
            active_frac: 0.4,
            probe_grid: 8,
            probe_h: 1e-2,
        }
    }
}

impl LayoutConfig {
    pub fn disabled() -> Self {
        LayoutConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn active_at(&self, t: usize, num_steps: usize) -> bool {
        ((num_steps - t) as f64) < self.active_frac * num_steps as f64
    }
}

/// Layout energy at x_t: Σ_targets (1 − in-box fraction of |ε̂_c − ε̂_∅|)².
pub fn layout_energy(
    x_t: &Grid,
    t: usize,
    targets: &[(Condition, RegionMask)],
    d: &dyn Denoiser,
) -> Result<f64> {
    let eps_uncond = d.predict(x_t, t, &Condition::Null)?;
    let mut energy = 0.0;
    for (cond, mask) in targets {
        let eps_c = d.predict(x_t, t, cond)?;
        let mut total = 0.0;
        let mut inside = 0.0;
        let (h, w, c) = x_t.dim();
        for row in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let a = (eps_c[[row, col, ch]] - eps_uncond[[row, col, ch]]).abs();
                    total += a;
                    if mask.at(row, col) != 0.0 {
                        inside += a;
                    }
                }
            }
        }
        if total > 0.0 {
            let frac = inside / total;
            energy += (1.0 - frac) * (1.0 - frac);
        }
    }
    Ok(energy)
}

/// Adjust x_t before noise prediction. Identity when disabled, when
/// `targets` is empty, or when the step lies outside the active window.
pub fn layout_control(
    x_t: &Grid,
    t: usize,
    targets: &[LayoutTarget],
    d: &dyn Denoiser,
    s: &Schedule,
    cfg: &LayoutConfig,
) -> Result<Grid> {
    for target in targets {
        target.bbox.validate()?;
    }
    if !cfg.enabled || targets.is_empty() || !cfg.active_at(t, s.num_steps) {
        return Ok(x_t.clone());
    }
    let eta = cfg.eta_scale * s.sigma[t];
    if eta == 0.0 {
        return Ok(x_t.clone());
    }
    let (h, w, _c) = x_t.dim();
    let masked: Vec<(Condition, RegionMask)> = targets
        .iter()
        .map(|tg| Ok((tg.condition.clone(), RegionMask::from_box(&tg.bbox, h, w)?)))
        .collect::<Result<_>>()?;

    // Tile partition used as the finite-difference basis.
    let tiles_y = cfg.probe_grid.min(h);
    let tiles_x = cfg.probe_grid.min(w);
    let mut x = x_t.clone();
    for _ in 0..cfg.iters {
        let grad = estimate_gradient(&x, t, &masked, d, tiles_y, tiles_x, cfg.probe_h)?;
        Zip::from(&mut x).and(&grad).for_each(|o, &g| {
            *o -= eta * g.clamp(-cfg.grad_clip, cfg.grad_clip);
        });
    }
    Ok(x)
}

fn estimate_gradient(
    x: &Grid,
    t: usize,
    targets: &[(Condition, RegionMask)],
    d: &dyn Denoiser,
    tiles_y: usize,
    tiles_x: usize,
    h_probe: f64,
) -> Result<Grid> {
    let (h, w, c) = x.dim();
    let mut grad = Grid::zeros((h, w, c));
    for ty in 0..tiles_y {
        let r0 = ty * h / tiles_y;
        let r1 = (ty + 1) * h / tiles_y;
        for tx in 0..tiles_x {
            let c0 = tx * w / tiles_x;
            let c1 = (tx + 1) * w / tiles_x;
            let mut xp = x.clone();
            let mut xm = x.clone();
            for row in r0..r1 {
                for col in c0..c1 {
                    for ch in 0..c {
                        xp[[row, col, ch]] += h_probe;
                        xm[[row, col, ch]] -= h_probe;
                    }
                }
            }
            let ep = layout_energy(&xp, t, targets, d)?;
            let em = layout_energy(&xm, t, targets, d)?;
            // directional derivative along the tile indicator
            let dd = (ep - em) / (2.0 * h_probe);
            let support = ((r1 - r0) * (c1 - c0) * c) as f64;
            let g = dd / support;
            for row in r0..r1 {
                for col in c0..c1 {
                    for ch in 0..c {
                        grad[[row, col, ch]] = g;
                    }
                }
            }
        }
    }
    Ok(grad)
}
