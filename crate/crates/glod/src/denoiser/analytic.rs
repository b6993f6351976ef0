//! Closed-form mixture denoiser.
//!
//! For data x0 ~ Σ_k w_k N(μ_k, s_k² I), the forward marginal at time t is
//! again a mixture with means sqrt(ᾱ_t)μ_k and variances v_k = ᾱ_t s_k² +
//! (1-ᾱ_t). The exact posterior expectation of the forward noise is
//!
//!   ε̂(x) = Σ_k r_k(x) · sqrt(1-ᾱ_t) (x - sqrt(ᾱ_t)μ_k) / v_k,
//!
//! with responsibilities r_k over the condition's component subset, so that
//! -ε̂/sqrt(1-ᾱ_t) equals the score of the marginal density. Responsibilities
//! are computed in log-space with max-subtraction.

use ndarray::Zip;

use crate::error::Result;
use crate::grid::Grid;
use crate::schedule::Schedule;

use super::{Condition, Denoiser, MixtureSpec};

#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    spec: MixtureSpec,
    schedule: Schedule,
}

impl AnalyticDenoiser {
    pub fn new(spec: MixtureSpec, schedule: Schedule) -> Self {
        AnalyticDenoiser { spec, schedule }
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Log-responsibilities of the given component subset at x_t
    /// (normalized over that subset).
    pub fn log_responsibilities(&self, x_t: &Grid, t: usize, subset: &[usize]) -> Vec<f64> {
        let ab = self.schedule.alpha_bar[t];
        let dim = x_t.len() as f64;
        let mut logs: Vec<f64> = subset
            .iter()
            .map(|&k| {
                let comp = &self.spec.components[k];
                let v = ab * comp.var + (1.0 - ab);
                let sq: f64 = Zip::from(x_t)
                    .and(&comp.mean)
                    .fold(0.0, |acc, &x, &m| {
                        let d = x - ab.sqrt() * m;
                        acc + d * d
                    });
                comp.weight.ln() - 0.5 * dim * v.ln() - 0.5 * sq / v
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for l in &mut logs {
            *l -= lse;
        }
        logs
    }

    /// Log of the conditional marginal density at x_t (up to the 2π constant
    /// shared by all components); used by finite-difference score checks.
    pub fn log_marginal(&self, x_t: &Grid, t: usize, c: &Condition) -> Result<f64> {
        let subset = self.spec.subset(c)?;
        let ab = self.schedule.alpha_bar[t];
        let dim = x_t.len() as f64;
        let wsum: f64 = subset.iter().map(|&k| self.spec.components[k].weight).sum();
        let logs: Vec<f64> = subset
            .iter()
            .map(|&k| {
                let comp = &self.spec.components[k];
                let v = ab * comp.var + (1.0 - ab);
                let sq: f64 = Zip::from(x_t)
                    .and(&comp.mean)
                    .fold(0.0, |acc, &x, &m| {
                        let d = x - ab.sqrt() * m;
                        acc + d * d
                    });
                (comp.weight / wsum).ln() - 0.5 * dim * v.ln() - 0.5 * sq / v
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
    }
}

impl Denoiser for AnalyticDenoiser {
    fn predict(&self, x_t: &Grid, t: usize, c: &Condition) -> Result<Grid> {
        if x_t.dim() != self.spec.shape() {
            let (h, w, ch) = self.spec.shape();
            let (gh, gw, gc) = x_t.dim();
            return Err(crate::error::GlodError::ShapeMismatch {
                expected: vec![h, w, ch],
                got: vec![gh, gw, gc],
            });
        }
        let subset = self.spec.subset(c)?;
        let ab = self.schedule.alpha_bar[t];
        let sqrt_ab = ab.sqrt();
        let sqrt_om = (1.0 - ab).sqrt();
        let log_r = self.log_responsibilities(x_t, t, subset);
        let mut out = Grid::zeros(x_t.dim());
        for (&k, &lr) in subset.iter().zip(log_r.iter()) {
            let comp = &self.spec.components[k];
            let v = ab * comp.var + (1.0 - ab);
            let coef = lr.exp() * sqrt_om / v;
            Zip::from(&mut out)
                .and(x_t)
                .and(&comp.mean)
                .for_each(|o, &x, &m| *o += coef * (x - sqrt_ab * m));
        }
        Ok(out)
    }

    fn conditions(&self) -> Vec<Condition> {
        self.spec.condition_map.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::MixtureComponent;
    use crate::grid::randn;
    use crate::schedule::ScheduleKind;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn single_gaussian(mu: f64, s: f64) -> MixtureSpec {
        let mean = Grid::from_elem((3, 3, 1), mu);
        MixtureSpec::new(
            vec![MixtureComponent {
                weight: 1.0,
                mean,
                var: s * s,
            }],
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn two_blob_spec() -> MixtureSpec {
        let mut m1 = Grid::zeros((3, 3, 1));
        m1[[0, 0, 0]] = 1.0;
        let mut m2 = Grid::zeros((3, 3, 1));
        m2[[2, 2, 0]] = 1.0;
        let mut map = BTreeMap::new();
        map.insert(Condition::token(1, vec![1]), vec![0]);
        map.insert(Condition::token(1, vec![2]), vec![1]);
        map.insert(Condition::token(9, vec![]), vec![0, 1]);
        MixtureSpec::new(
            vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: m1,
                    var: 0.04,
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: m2,
                    var: 0.04,
                },
            ],
            map,
        )
        .unwrap()
    }

    // Score-consistency oracle: ε̂ must equal -sqrt(1-ᾱ)·∇log p, with the
    // gradient taken by central finite differences on the log marginal.
    fn check_score_consistency(d: &AnalyticDenoiser, x: &Grid, t: usize, c: &Condition, tol: f64) {
        let eps = d.predict(x, t, c).unwrap();
        let sqrt_om = (1.0 - d.schedule().alpha_bar[t]).sqrt();
        let h = 1e-5;
        let scale = eps.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let grad =
                (d.log_marginal(&xp, t, c).unwrap() - d.log_marginal(&xm, t, c).unwrap()) / (2.0 * h);
            let expect = -sqrt_om * grad;
            let got = eps.as_slice().unwrap()[idx];
            assert!(
                (got - expect).abs() <= tol * scale.max(1.0),
                "idx {idx}: got {got}, expected {expect}"
            );
        }
    }

    #[test]
    fn single_component_matches_posterior_noise_expectation() {
        let s = Schedule::new(20, ScheduleKind::LinearBeta).unwrap();
        let spec = single_gaussian(0.7, 0.5);
        let d = AnalyticDenoiser::new(spec, s.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in [1, 5, 10, 20] {
            let x = randn(3, 3, 1, &mut rng);
            let eps = d.predict(&x, t, &Condition::Null).unwrap();
            let ab = s.alpha_bar[t];
            let v = ab * 0.25 + (1.0 - ab);
            for (e, xv) in eps.iter().zip(x.iter()) {
                // E[ε|x] = sqrt(1-ᾱ)(x - sqrt(ᾱ)μ)/v for a single component.
                let expect = (1.0 - ab).sqrt() * (xv - ab.sqrt() * 0.7) / v;
                assert_abs_diff_eq!(*e, expect, epsilon = 1e-12);
            }
            check_score_consistency(&d, &x, t, &Condition::Null, 1e-6);
        }
    }

    #[test]
    fn zero_residual_at_scaled_mean() {
        let s = Schedule::new(20, ScheduleKind::LinearBeta).unwrap();
        let spec = single_gaussian(0.7, 0.5);
        let d = AnalyticDenoiser::new(spec, s.clone());
        let x = Grid::from_elem((3, 3, 1), s.alpha_bar[7].sqrt() * 0.7);
        let eps = d.predict(&x, 7, &Condition::Null).unwrap();
        for e in eps.iter() {
            assert_abs_diff_eq!(*e, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn condition_matching_null_subset_is_identical() {
        let s = Schedule::new(20, ScheduleKind::LinearBeta).unwrap();
        let d = AnalyticDenoiser::new(two_blob_spec(), s);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(3, 3, 1, &mut rng);
        let a = d.predict(&x, 5, &Condition::Null).unwrap();
        let b = d.predict(&x, 5, &Condition::token(9, vec![])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_condition_errors() {
        let s = Schedule::new(20, ScheduleKind::LinearBeta).unwrap();
        let d = AnalyticDenoiser::new(two_blob_spec(), s);
        let x = Grid::zeros((3, 3, 1));
        assert!(d.predict(&x, 5, &Condition::token(42, vec![])).is_err());
    }

    #[test]
    fn mixture_score_consistency_random_points() {
        let s = Schedule::new(20, ScheduleKind::KarrasRho7).unwrap();
        let d = AnalyticDenoiser::new(two_blob_spec(), s);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for i in 0..30 {
            let t = 1 + (i * 7) % 20;
            let x = randn(3, 3, 1, &mut rng);
            check_score_consistency(&d, &x, t, &Condition::Null, 1e-5);
            check_score_consistency(&d, &x, t, &Condition::token(1, vec![1]), 1e-5);
        }
    }

    #[test]
    fn predict_is_pure_and_shape_preserving() {
        let s = Schedule::new(10, ScheduleKind::LinearBeta).unwrap();
        let d = AnalyticDenoiser::new(two_blob_spec(), s);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(3, 3, 1, &mut rng);
        let x_copy = x.clone();
        let e = d.predict(&x, 3, &Condition::Null).unwrap();
        assert_eq!(x, x_copy);
        assert_eq!(e.dim(), x.dim());
    }

    // Forward-then-perfect-denoise: x̂0 from ε̂ equals the closed-form
    // posterior mean of x0 given x_t.
    #[test]
    fn forward_then_denoise_recovers_posterior_mean() {
        let s = Schedule::new(20, ScheduleKind::LinearBeta).unwrap();
        let spec = single_gaussian(0.3, 0.6);
        let d = AnalyticDenoiser::new(spec, s.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = randn(3, 3, 1, &mut rng).mapv(|v| 0.3 + 0.6 * v);
        let n = randn(3, 3, 1, &mut rng);
        for t in [1, 7, 14, 20] {
            let xt = add_noise(&x0, t, &n, &s).unwrap();
            let eps = d.predict(&xt, t, &Condition::Null).unwrap();
            let ab = s.alpha_bar[t];
            let v = ab * 0.36 + (1.0 - ab);
            for (i, x) in xt.iter().enumerate() {
                let x0_hat = (x - (1.0 - ab).sqrt() * eps.as_slice().unwrap()[i]) / ab.sqrt();
                // closed-form posterior mean of x0 given x_t
                let post = 0.3 + (ab.sqrt() * 0.36 / v) * (x - ab.sqrt() * 0.3);
                assert_abs_diff_eq!(x0_hat, post, epsilon = 1e-9);
            }
        }
    }

    use crate::schedule::add_noise;
}
