//! Pluggable denoiser backends providing ε̂(x_t, t | c).
//!
//! Two backends ship: [`AnalyticDenoiser`], whose predictions are exact
//! posterior noise expectations under a Gaussian-mixture data distribution
//! (the ground-truth oracle for all composition math), and
//! [`toy::ToyDenoiser`], a small trained MLP.

mod analytic;
pub mod toy;
pub mod weights_io;

pub use analytic::AnalyticDenoiser;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GlodError, Result};
use crate::grid::Grid;

/// What a denoiser is conditioned on.
///
/// Tokens are structured identifiers, not text: a category id plus attribute
/// ids. The null condition is the unique unconditional slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Null,
    Token { category: u16, attrs: Vec<u16> },
}

impl Condition {
    pub fn token(category: u16, attrs: impl Into<Vec<u16>>) -> Self {
        Condition::Token {
            category,
            attrs: attrs.into(),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Condition::Null)
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::Null => write!(f, "null"),
            Condition::Token { category, attrs } => write!(f, "tok{category}:{attrs:?}"),
        }
    }
}

/// One Gaussian mixture component: an isotropic Gaussian around a mean grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Grid,
    /// Per-component scalar variance s².
    pub var: f64,
}

/// A Gaussian-mixture data distribution plus a map from conditions to the
/// component subsets they select. Stand-in for a pre-trained model at desk
/// scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub condition_map: BTreeMap<Condition, Vec<usize>>,
}

impl MixtureSpec {
    pub fn new(
        components: Vec<MixtureComponent>,
        mut condition_map: BTreeMap<Condition, Vec<usize>>,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(GlodError::invalid("mixture needs at least one component"));
        }
        let dim = components[0].mean.dim();
        let mut total = 0.0;
        for c in &components {
            if c.mean.dim() != dim {
                return Err(GlodError::invalid("component mean shapes must agree"));
            }
            if !(c.weight > 0.0) || !(c.var > 0.0) {
                return Err(GlodError::invalid("component weight and variance must be > 0"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(GlodError::invalid(format!(
                "component weights must sum to 1, got {total}"
            )));
        }
        // Null always selects every component.
        condition_map.insert(Condition::Null, (0..components.len()).collect());
        for (cond, subset) in &condition_map {
            if subset.is_empty() {
                return Err(GlodError::invalid(format!("empty subset for {cond}")));
            }
            if subset.iter().any(|&i| i >= components.len()) {
                return Err(GlodError::invalid(format!(
                    "subset for {cond} references a missing component"
                )));
            }
        }
        Ok(MixtureSpec {
            components,
            condition_map,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.components[0].mean.dim()
    }

    pub fn subset(&self, c: &Condition) -> Result<&[usize]> {
        self.condition_map
            .get(c)
            .map(|v| v.as_slice())
            .ok_or_else(|| GlodError::UnknownCondition(c.to_string()))
    }
}

/// A noise-prediction backend. `predict` must be pure and shape-preserving.
pub trait Denoiser {
    fn predict(&self, x_t: &Grid, t: usize, c: &Condition) -> Result<Grid>;

    /// Conditions this backend knows, Null included.
    fn conditions(&self) -> Vec<Condition>;
}
