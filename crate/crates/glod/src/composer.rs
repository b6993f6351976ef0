//! Layered noise composition: global guidance, masked local guidance, and
//! base-noise assignment.
//!
//! A [`LayerStack`] mirrors the layer picture: layer 0 holds only the
//! unconditional slot, higher layers hold conditioned entries. Entries
//! without a mask are global and are always guided away from the
//! unconditional noise; entries with a mask are local and are guided away
//! from their base entry's noise, zeroed outside the mask.

use std::collections::HashMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::denoiser::Condition;
use crate::error::{GlodError, Result};
use crate::grid::{check_same_shape, BoundingBox, Grid};

/// Binary H×W mask, broadcast over channels. Values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    values: Array2<f64>,
}

impl RegionMask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(GlodError::invalid("mask values must be exactly 0 or 1"));
        }
        Ok(RegionMask { values })
    }

    /// Rasterize a normalized bounding box with half-open pixel coverage.
    pub fn from_box(b: &BoundingBox, h: usize, w: usize) -> Result<Self> {
        b.validate()?;
        let values = Array2::from_shape_fn((h, w), |(r, c)| {
            if b.contains_pixel(r, c, h, w) {
                1.0
            } else {
                0.0
            }
        });
        Ok(RegionMask { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    pub fn coverage(&self) -> f64 {
        self.values.sum() / self.values.len() as f64
    }

    /// Pixel-wise union.
    pub fn union(&self, other: &RegionMask) -> RegionMask {
        let mut v = self.values.clone();
        Zip::from(&mut v)
            .and(&other.values)
            .for_each(|a, &b| *a = a.max(b));
        RegionMask { values: v }
    }

    fn check_matches(&self, g: &Grid) -> Result<()> {
        let (h, w, _) = g.dim();
        if self.dim() != (h, w) {
            return Err(GlodError::ShapeMismatch {
                expected: vec![self.dim().0, self.dim().1],
                got: vec![h, w],
            });
        }
        Ok(())
    }
}

/// Reference to the entry a local entry is guided away from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseRef {
    /// The unconditional slot in layer 0.
    Uncond,
    /// An entry in a strictly lower layer.
    Entry { layer: usize, index: usize },
}

/// Identifies an entry within a stack as (layer, index).
pub type EntryId = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEntry {
    pub condition: Condition,
    pub weight: f64,
    pub mask: Option<RegionMask>,
    pub base: BaseRef,
}

/// Customary classifier-free scale for this model family; every entry can
/// override it.
pub const DEFAULT_GUIDANCE_WEIGHT: f64 = 7.5;

impl LayerEntry {
    pub fn global(condition: Condition, weight: f64) -> Self {
        LayerEntry {
            condition,
            weight,
            mask: None,
            base: BaseRef::Uncond,
        }
    }

    pub fn local(condition: Condition, weight: f64, mask: RegionMask, base: BaseRef) -> Self {
        LayerEntry {
            condition,
            weight,
            mask: Some(mask),
            base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layer {
    pub entries: Vec<LayerEntry>,
}

/// Ordered layers; layer 0 always holds exactly the null condition.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl Default for LayerStack {
    fn default() -> Self {
        Self::new()
    }
}

impl LayerStack {
    pub fn new() -> Self {
        LayerStack {
            layers: vec![Layer {
                entries: vec![LayerEntry {
                    condition: Condition::Null,
                    weight: 0.0,
                    mask: None,
                    base: BaseRef::Uncond,
                }],
            }],
        }
    }

    pub fn push_layer(&mut self, layer: Layer) -> usize {
        self.layers.push(layer);
        self.layers.len() - 1
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Entries above layer 0, in stack order.
    pub fn entries(&self) -> impl Iterator<Item = (EntryId, &LayerEntry)> {
        self.layers
            .iter()
            .enumerate()
            .skip(1)
            .flat_map(|(li, l)| l.entries.iter().enumerate().map(move |(ei, e)| ((li, ei), e)))
    }

    pub fn conditions(&self) -> Vec<Condition> {
        let mut out: Vec<Condition> = self.entries().map(|(_, e)| e.condition.clone()).collect();
        out.push(Condition::Null);
        out.sort();
        out.dedup();
        out
    }

    pub fn has_locals(&self) -> bool {
        self.entries().any(|(_, e)| e.mask.is_some())
    }

    /// Copy of the stack with every masked entry removed.
    pub fn without_locals(&self) -> LayerStack {
        let mut layers = self.layers.clone();
        for l in layers.iter_mut().skip(1) {
            l.entries.retain(|e| e.mask.is_none());
        }
        LayerStack { layers }
    }

    /// Union of all local masks, if any local entries exist.
    pub fn local_mask_union(&self) -> Option<RegionMask> {
        let mut acc: Option<RegionMask> = None;
        for (_, e) in self.entries() {
            if let Some(m) = &e.mask {
                acc = Some(match acc {
                    None => m.clone(),
                    Some(a) => a.union(m),
                });
            }
        }
        acc
    }

    pub fn validate(&self) -> Result<()> {
        let l0 = &self.layers[0];
        if l0.entries.len() != 1 || !l0.entries[0].condition.is_null() {
            return Err(GlodError::invalid(
                "layer 0 must hold exactly the null condition",
            ));
        }
        for ((li, ei), e) in self.entries() {
            if e.condition.is_null() {
                return Err(GlodError::invalid(format!(
                    "entry ({li},{ei}): null condition only lives in layer 0"
                )));
            }
            match (&e.mask, e.base) {
                (None, BaseRef::Uncond) => {}
                (None, BaseRef::Entry { .. }) => {
                    return Err(GlodError::invalid(format!(
                        "entry ({li},{ei}): global entries take the unconditional base"
                    )));
                }
                (Some(_), BaseRef::Uncond) => {}
                (Some(_), BaseRef::Entry { layer, index }) => {
                    if layer >= li {
                        return Err(GlodError::invalid(format!(
                            "entry ({li},{ei}): base_ref must point strictly downward"
                        )));
                    }
                    if layer >= self.layers.len() || index >= self.layers[layer].entries.len() {
                        return Err(GlodError::invalid(format!(
                            "entry ({li},{ei}): base_ref ({layer},{index}) does not exist"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Conditions of entries whose masks overlap pairwise; surfaced as a
    /// scene-validation warning.
    pub fn overlapping_locals(&self) -> Vec<(Condition, Condition)> {
        let locals: Vec<(&Condition, &RegionMask)> = self
            .entries()
            .filter_map(|(_, e)| e.mask.as_ref().map(|m| (&e.condition, m)))
            .collect();
        let mut out = Vec::new();
        for i in 0..locals.len() {
            for j in i + 1..locals.len() {
                let (ma, mb) = (locals[i].1, locals[j].1);
                if ma.dim() == mb.dim() {
                    let overlap = Zip::from(ma.values())
                        .and(mb.values())
                        .fold(0.0, |acc, &a, &b| acc + a * b);
                    if overlap > 0.0 {
                        out.push((locals[i].0.clone(), locals[j].0.clone()));
                    }
                }
            }
        }
        out
    }
}

/// Image-wide guidance toward a condition: eps_cond − eps_uncond.
pub fn global_guidance(eps_cond: &Grid, eps_uncond: &Grid) -> Result<Grid> {
    check_same_shape(eps_cond, eps_uncond)?;
    Ok(eps_cond - eps_uncond)
}

/// Masked guidance away from a base noise: mask ⊙ (eps_local − eps_base).
/// Exactly zero outside the mask.
pub fn local_guidance(eps_local: &Grid, eps_base: &Grid, mask: &RegionMask) -> Result<Grid> {
    check_same_shape(eps_local, eps_base)?;
    mask.check_matches(eps_local)?;
    let mut out = Grid::zeros(eps_local.dim());
    let (h, w, c) = eps_local.dim();
    for row in 0..h {
        for col in 0..w {
            let m = mask.at(row, col);
            if m != 0.0 {
                for ch in 0..c {
                    out[[row, col, ch]] =
                        m * (eps_local[[row, col, ch]] - eps_base[[row, col, ch]]);
                }
            }
        }
    }
    Ok(out)
}

/// Resolve each entry's base noise: locals take their base_ref entry's
/// prediction, globals the unconditional one.
pub fn assign_base<'a>(
    stack: &LayerStack,
    predictions: &'a HashMap<Condition, Grid>,
) -> Result<HashMap<EntryId, &'a Grid>> {
    let fetch = |c: &Condition| -> Result<&'a Grid> {
        predictions
            .get(c)
            .ok_or_else(|| GlodError::IncompletePredictions(format!("no prediction for {c}")))
    };
    let uncond = fetch(&Condition::Null)?;
    let mut out = HashMap::new();
    for (id, e) in stack.entries() {
        // Validate the entry's own prediction exists regardless of role.
        fetch(&e.condition)?;
        let base = match e.base {
            BaseRef::Uncond => uncond,
            BaseRef::Entry { layer, index } => {
                let base_entry = &stack.layers()[layer].entries[index];
                fetch(&base_entry.condition)?
            }
        };
        out.insert(id, base);
    }
    Ok(out)
}

/// Compose the full guided noise:
/// eps_uncond + Σ_global w·(ε_c − eps_uncond) + Σ_local w·M⊙(ε_c − ε_b).
///
/// Entries are accumulated in a canonical order (sorted within each layer by
/// condition, then weight bits) so that permuting entries cannot change the
/// floating-point result.
pub fn compose(
    stack: &LayerStack,
    predictions: &HashMap<Condition, Grid>,
    eps_uncond: &Grid,
) -> Result<Grid> {
    let bases = assign_base(stack, predictions)?;
    let mut ids: Vec<(EntryId, &LayerEntry)> = stack.entries().collect();
    ids.sort_by(|(ia, a), (ib, b)| {
        ia.0.cmp(&ib.0)
            .then_with(|| a.condition.cmp(&b.condition))
            .then_with(|| a.weight.to_bits().cmp(&b.weight.to_bits()))
            .then_with(|| a.mask.is_some().cmp(&b.mask.is_some()))
            .then_with(|| ia.1.cmp(&ib.1))
    });
    let mut acc = eps_uncond.clone();
    for (id, e) in ids {
        let pred = &predictions[&e.condition];
        let w = e.weight;
        match &e.mask {
            None => {
                Zip::from(&mut acc)
                    .and(pred)
                    .and(eps_uncond)
                    .for_each(|o, &p, &u| *o += w * (p - u));
            }
            Some(mask) => {
                mask.check_matches(pred)?;
                let base = bases[&id];
                let (h, wd, c) = pred.dim();
                for row in 0..h {
                    for col in 0..wd {
                        let m = mask.at(row, col);
                        if m != 0.0 {
                            for ch in 0..c {
                                acc[[row, col, ch]] +=
                                    w * m * (pred[[row, col, ch]] - base[[row, col, ch]]);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(acc)
}
