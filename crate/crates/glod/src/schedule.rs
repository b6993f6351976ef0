//! Noise schedules and single-step samplers.
//!
//! A [`Schedule`] carries the cumulative signal level ᾱ_t and the matching
//! σ-space noise level σ_t = sqrt((1-ᾱ_t)/ᾱ_t) for t = 0..=T, together with
//! the step rule the sampler should use. Two parameterizations are provided:
//! a linear β grid rescaled with T (DDPM-style) and a Karras ρ=7 σ grid.

use ndarray::Zip;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GlodError, Result};
use crate::grid::{check_same_shape, randn, Grid};

/// Which update rule a sampler applies per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepRule {
    /// Stochastic ancestral step; fresh Gaussian noise each step.
    Ddpm,
    /// Deterministic first-order update in σ-space.
    EulerDiscrete,
}

/// Schedule parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// β linear in t, rescaled by 1000/T so that ᾱ_T stays small for any T.
    LinearBeta,
    /// Karras grid with ρ=7, σ_min=0.02, σ_max=10.
    KarrasRho7,
}

/// Noise schedule over T steps.
///
/// Invariants: `alpha_bar` has length T+1, starts at exactly 1, is strictly
/// decreasing, and ends below 0.05; `sigma` has length T+1, starts at exactly
/// 0, and is non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub num_steps: usize,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
    pub kind: ScheduleKind,
    pub step_rule: StepRule,
}

const KARRAS_RHO: f64 = 7.0;
const KARRAS_SIGMA_MIN: f64 = 0.02;
const KARRAS_SIGMA_MAX: f64 = 10.0;

impl Schedule {
    /// Build a schedule of `num_steps` steps; default step rule is Euler.
    pub fn new(num_steps: usize, kind: ScheduleKind) -> Result<Self> {
        if num_steps < 2 {
            return Err(GlodError::invalid(format!(
                "num_steps must be >= 2, got {num_steps}"
            )));
        }
        let t_count = num_steps;
        let (alpha_bar, sigma) = match kind {
            ScheduleKind::LinearBeta => {
                // The standard 1e-4..2e-2 grid is tuned for T=1000; rescale
                // by 1000/T so the chain still ends near pure noise, capping
                // β below 1 to keep ᾱ strictly decreasing.
                let scale = 1000.0 / t_count as f64;
                let beta_lo = 1e-4 * scale;
                let beta_hi = 2e-2 * scale;
                let mut alpha_bar = Vec::with_capacity(t_count + 1);
                alpha_bar.push(1.0);
                let mut prod = 1.0f64;
                for i in 0..t_count {
                    let frac = if t_count == 1 {
                        0.0
                    } else {
                        i as f64 / (t_count - 1) as f64
                    };
                    let beta = (beta_lo + frac * (beta_hi - beta_lo)).min(0.999);
                    prod *= 1.0 - beta;
                    alpha_bar.push(prod);
                }
                let sigma = alpha_bar
                    .iter()
                    .map(|&ab| ((1.0 - ab) / ab).sqrt())
                    .collect();
                (alpha_bar, sigma)
            }
            ScheduleKind::KarrasRho7 => {
                let inv = 1.0 / KARRAS_RHO;
                let lo = KARRAS_SIGMA_MIN.powf(inv);
                let hi = KARRAS_SIGMA_MAX.powf(inv);
                let mut sigma = Vec::with_capacity(t_count + 1);
                sigma.push(0.0);
                for t in 1..=t_count {
                    let frac = (t - 1) as f64 / (t_count - 1) as f64;
                    sigma.push((lo + frac * (hi - lo)).powf(KARRAS_RHO));
                }
                let alpha_bar = sigma.iter().map(|&s| 1.0 / (1.0 + s * s)).collect();
                (alpha_bar, sigma)
            }
        };
        let s = Schedule {
            num_steps,
            alpha_bar,
            sigma,
            kind,
            step_rule: StepRule::EulerDiscrete,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_step_rule(mut self, rule: StepRule) -> Self {
        self.step_rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let t_count = self.num_steps;
        if self.alpha_bar.len() != t_count + 1 || self.sigma.len() != t_count + 1 {
            return Err(GlodError::invalid("schedule arrays must have length T+1"));
        }
        if self.alpha_bar[0] != 1.0 {
            return Err(GlodError::invalid("alpha_bar[0] must be exactly 1"));
        }
        if self.alpha_bar[t_count] >= 0.05 {
            return Err(GlodError::invalid("alpha_bar[T] must be below 0.05"));
        }
        for t in 1..=t_count {
            if !(self.alpha_bar[t] > 0.0 && self.alpha_bar[t] < self.alpha_bar[t - 1]) {
                return Err(GlodError::invalid(format!(
                    "alpha_bar must be strictly decreasing in (0,1]; broken at t={t}"
                )));
            }
            if self.sigma[t] < self.sigma[t - 1] {
                return Err(GlodError::invalid(format!(
                    "sigma must be non-decreasing; broken at t={t}"
                )));
            }
        }
        if self.sigma[0] != 0.0 {
            return Err(GlodError::invalid("sigma[0] must be exactly 0"));
        }
        Ok(())
    }

    fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.num_steps {
            return Err(GlodError::invalid(format!(
                "timestep t={t} outside [{min},{}]",
                self.num_steps
            )));
        }
        Ok(())
    }

    /// Per-step β_t = 1 - ᾱ_t/ᾱ_{t-1}.
    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]
    }
}

/// Forward noising kernel: sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·noise.
pub fn add_noise(x0: &Grid, t: usize, noise: &Grid, s: &Schedule) -> Result<Grid> {
    check_same_shape(x0, noise)?;
    s.check_t(t, 0)?;
    let ab = s.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = Grid::zeros(x0.dim());
    Zip::from(&mut out)
        .and(x0)
        .and(noise)
        .for_each(|o, &x, &n| *o = a * x + b * n);
    Ok(out)
}

/// One ancestral DDPM step x_t -> x_{t-1}.
///
/// Mean follows the standard posterior coefficients,
/// x_{t-1} = (x_t − (β_t/sqrt(1-ᾱ_t))·ε̂) / sqrt(α_t) + σ·z,
/// with σ² = β_t (no noise at t=1).
pub fn ddpm_step(
    x_t: &Grid,
    eps_hat: &Grid,
    t: usize,
    s: &Schedule,
    rng: &mut impl Rng,
) -> Result<Grid> {
    check_same_shape(x_t, eps_hat)?;
    s.check_t(t, 1)?;
    let alpha_t = s.alpha_bar[t] / s.alpha_bar[t - 1];
    let eps_scale = (1.0 - alpha_t) / (1.0 - s.alpha_bar[t]).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha_t.sqrt();
    let noise_sigma = if t > 1 { (1.0 - alpha_t).sqrt() } else { 0.0 };
    let mut out = Grid::zeros(x_t.dim());
    Zip::from(&mut out)
        .and(x_t)
        .and(eps_hat)
        .for_each(|o, &x, &e| *o = inv_sqrt_alpha * (x - eps_scale * e));
    if noise_sigma > 0.0 {
        let (h, w, c) = x_t.dim();
        let z = randn(h, w, c, rng);
        Zip::from(&mut out).and(&z).for_each(|o, &z| *o += noise_sigma * z);
    }
    Ok(out)
}

/// One deterministic Euler step in σ-space: x + (σ_{t-1} − σ_t)·ε̂.
///
/// The chain state lives at noise level σ_t as x = x0 + σ_t·ε; denoiser
/// inputs must be rescaled with [`model_input`] first.
pub fn euler_step(x_t: &Grid, eps_hat: &Grid, t: usize, s: &Schedule) -> Result<Grid> {
    check_same_shape(x_t, eps_hat)?;
    s.check_t(t, 1)?;
    let dsigma = s.sigma[t - 1] - s.sigma[t];
    let mut out = x_t.clone();
    Zip::from(&mut out).and(eps_hat).for_each(|o, &e| *o += dsigma * e);
    Ok(out)
}

/// Rescale a σ-space state to the variance-preserving input the denoiser
/// expects: x_vp = sqrt(ᾱ_t)·x_σ.
pub fn model_input(x_sigma: &Grid, t: usize, s: &Schedule) -> Grid {
    let a = s.alpha_bar[t].sqrt();
    x_sigma.mapv(|v| a * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn make_schedule_boundary_values() {
        let s = Schedule::new(1000, ScheduleKind::LinearBeta).unwrap();
        assert_eq!(s.alpha_bar[0], 1.0);
        let k = Schedule::new(10, ScheduleKind::KarrasRho7).unwrap();
        for t in 2..=10 {
            assert!(k.sigma[t] > k.sigma[t - 1]);
        }
    }

    #[test]
    fn rejects_tiny_t() {
        assert!(Schedule::new(1, ScheduleKind::LinearBeta).is_err());
        assert!(Schedule::new(0, ScheduleKind::KarrasRho7).is_err());
    }

    // Independent product oracle for the linear-beta grid at T=50.
    #[test]
    fn linear_beta_alpha_bar_matches_product_oracle() {
        let t_count = 50usize;
        let scale = 1000.0 / t_count as f64;
        let mut expected = 1.0f64;
        for i in 0..t_count {
            let frac = i as f64 / (t_count - 1) as f64;
            let beta = (1e-4 * scale + frac * (2e-2 - 1e-4) * scale).min(0.999);
            expected *= 1.0 - beta;
        }
        let s = Schedule::new(t_count, ScheduleKind::LinearBeta).unwrap();
        assert_abs_diff_eq!(s.alpha_bar[50], expected, epsilon = 1e-15);
    }

    #[test]
    fn add_noise_identities() {
        let s = Schedule::new(10, ScheduleKind::LinearBeta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x0 = randn(4, 4, 2, &mut rng);
        let n = randn(4, 4, 2, &mut rng);

        // t=0: alpha_bar[0]=1 forces x0 back out.
        let y = add_noise(&x0, 0, &n, &s).unwrap();
        for (a, b) in y.iter().zip(x0.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }

        // zero input: pure scaled noise.
        let z = Grid::zeros((4, 4, 2));
        let y = add_noise(&z, 5, &n, &s).unwrap();
        let c = (1.0 - s.alpha_bar[5]).sqrt();
        for (a, b) in y.iter().zip(n.iter()) {
            assert_abs_diff_eq!(*a, c * b, epsilon = 1e-15);
        }

        // ones grid, zero noise, t=T/2: grid of sqrt(alpha_bar[T/2]).
        let ones = Grid::from_elem((4, 4, 2), 1.0);
        let y = add_noise(&ones, 5, &z, &s).unwrap();
        for a in y.iter() {
            assert_abs_diff_eq!(*a, s.alpha_bar[5].sqrt(), epsilon = 1e-15);
        }

        let bad = Grid::zeros((3, 4, 2));
        assert!(add_noise(&bad, 1, &n, &s).is_err());
    }

    #[test]
    fn ddpm_step_zero_eps_is_pure_rescale() {
        let s = Schedule::new(10, ScheduleKind::LinearBeta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(4, 4, 1, &mut rng);
        let zero = Grid::zeros((4, 4, 1));
        // t=1 has no added noise; expect only the mean-rescaling coefficient.
        let y = ddpm_step(&x, &zero, 1, &s, &mut rng).unwrap();
        let alpha_1 = s.alpha_bar[1] / s.alpha_bar[0];
        for (a, b) in y.iter().zip(x.iter()) {
            assert_abs_diff_eq!(*a, b / alpha_1.sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn ddpm_step_deterministic_given_seed() {
        let s = Schedule::new(10, ScheduleKind::LinearBeta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(4, 4, 1, &mut rng);
        let e = randn(4, 4, 1, &mut rng);
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let y1 = ddpm_step(&x, &e, 5, &s, &mut r1).unwrap();
        let y2 = ddpm_step(&x, &e, 5, &s, &mut r2).unwrap();
        assert_eq!(y1, y2);
        assert!(ddpm_step(&x, &e, 0, &s, &mut r1).is_err());
    }

    #[test]
    fn euler_step_identities() {
        let s = Schedule::new(10, ScheduleKind::KarrasRho7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(4, 4, 1, &mut rng);
        let zero = Grid::zeros((4, 4, 1));
        let y = euler_step(&x, &zero, 5, &s).unwrap();
        assert_eq!(y, x);
        assert!(euler_step(&x, &zero, 0, &s).is_err());
    }

    #[test]
    fn schedule_invariants_sweep() {
        for t_count in 2..=64 {
            for kind in [ScheduleKind::LinearBeta, ScheduleKind::KarrasRho7] {
                let s = Schedule::new(t_count, kind).unwrap();
                s.validate().unwrap();
            }
        }
    }
}
