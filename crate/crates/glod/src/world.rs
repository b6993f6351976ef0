//! Built-in mixture worlds.
//!
//! These stand in for a pre-trained model: scenes are mixtures of "subject
//! blob in the left box, object blob in the right box" components, one
//! component per attribute pairing, plus an empty-background distractor.
//! Condition tokens select component subsets:
//!
//! - a global token (per interaction id) selects every non-empty scene,
//! - a local token (entity id + attribute) selects every scene in which
//!   that attribute appears on either role,
//! - a merged full token selects both the correctly-bound scene and the
//!   attribute-swapped one — merged prompts are ambiguous to the toy model,
//!   which is exactly the failure mode layered guidance is for.

use std::collections::BTreeMap;

use crate::denoiser::{Condition, MixtureComponent, MixtureSpec};
use crate::error::Result;
use crate::grid::{BoundingBox, Grid};

pub const CAT_GLOBAL: u16 = 1;
pub const CAT_FULL: u16 = 900;

pub fn global_token(interaction: u16) -> Condition {
    Condition::token(CAT_GLOBAL, vec![interaction])
}

pub fn local_token(entity: u16, attr: u16) -> Condition {
    Condition::token(entity, vec![attr])
}

pub fn full_token(subject: u16, subject_attr: u16, object: u16, object_attr: u16, interaction: u16) -> Condition {
    Condition::token(CAT_FULL, vec![subject, subject_attr, object, object_attr, interaction])
}

/// Fixed layout: subject on the left, object on the right.
pub fn subject_box() -> BoundingBox {
    BoundingBox {
        x0: 0.0,
        y0: 0.25,
        x1: 0.5,
        y1: 0.75,
    }
}

pub fn object_box() -> BoundingBox {
    BoundingBox {
        x0: 0.5,
        y0: 0.25,
        x1: 1.0,
        y1: 0.75,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub subjects: Vec<u16>,
    pub objects: Vec<u16>,
    pub attributes: Vec<u16>,
    pub interactions: Vec<u16>,
    pub background: f64,
    pub amplitude: f64,
    pub component_std: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            height: 8,
            width: 8,
            channels: 3,
            subjects: vec![100, 101],
            objects: vec![200, 201],
            attributes: vec![1, 2, 3],
            interactions: vec![300, 301],
            background: 0.1,
            amplitude: 0.8,
            component_std: 0.1,
        }
    }
}

impl WorldSpec {
    fn channel_of(&self, attr: u16) -> usize {
        (attr as usize).saturating_sub(1) % self.channels
    }

    fn scene_mean(&self, subject_attr: u16, object_attr: u16) -> Grid {
        let mut g = Grid::from_elem((self.height, self.width, self.channels), self.background);
        for (bx, attr) in [(subject_box(), subject_attr), (object_box(), object_attr)] {
            let ch = self.channel_of(attr);
            for r in 0..self.height {
                for c in 0..self.width {
                    if bx.contains_pixel(r, c, self.height, self.width) {
                        g[[r, c, ch]] += self.amplitude;
                    }
                }
            }
        }
        g
    }
}

/// Build the attribute world: one component per (subject attr, object attr)
/// pair plus an empty background, with the condition vocabulary for every
/// entity/attribute/interaction in the spec.
pub fn build_attribute_world(ws: &WorldSpec) -> Result<MixtureSpec> {
    let a = ws.attributes.len();
    let n_comp = a * a + 1;
    let weight = 1.0 / n_comp as f64;
    let var = ws.component_std * ws.component_std;
    let mut components = Vec::with_capacity(n_comp);
    let comp_idx = |i: usize, j: usize| i * a + j;
    for &sa in &ws.attributes {
        for &oa in &ws.attributes {
            components.push(MixtureComponent {
                weight,
                mean: ws.scene_mean(sa, oa),
                var,
            });
        }
    }
    // empty-background distractor, selected only by the null condition
    components.push(MixtureComponent {
        weight,
        mean: Grid::from_elem((ws.height, ws.width, ws.channels), ws.background),
        var,
    });

    let scenes: Vec<usize> = (0..a * a).collect();
    let mut map: BTreeMap<Condition, Vec<usize>> = BTreeMap::new();
    for &inter in &ws.interactions {
        map.insert(global_token(inter), scenes.clone());
    }
    let attr_pos = |attr: u16| ws.attributes.iter().position(|&x| x == attr).unwrap();
    for &entity in ws.subjects.iter().chain(ws.objects.iter()) {
        for &attr in &ws.attributes {
            let p = attr_pos(attr);
            let mut subset: Vec<usize> = (0..a * a)
                .filter(|&k| k / a == p || k % a == p)
                .collect();
            subset.sort_unstable();
            map.insert(local_token(entity, attr), subset);
        }
    }
    for &s in &ws.subjects {
        for &o in &ws.objects {
            for &sa in &ws.attributes {
                for &oa in &ws.attributes {
                    for &inter in &ws.interactions {
                        let mut subset = vec![
                            comp_idx(attr_pos(sa), attr_pos(oa)),
                            comp_idx(attr_pos(oa), attr_pos(sa)),
                        ];
                        subset.sort_unstable();
                        subset.dedup();
                        map.insert(full_token(s, sa, o, oa, inter), subset);
                    }
                }
            }
        }
    }
    MixtureSpec::new(components, map)
}

/// Two-component world for layout experiments: one blob either on the left
/// or on the right, with a token for each side.
pub fn build_two_blob_world(
    height: usize,
    width: usize,
) -> Result<(MixtureSpec, Condition, Condition)> {
    let left = Condition::token(10, vec![1]);
    let right = Condition::token(10, vec![2]);
    let mut mean_l = Grid::from_elem((height, width, 1), 0.0);
    let mut mean_r = Grid::from_elem((height, width, 1), 0.0);
    for r in 0..height {
        for c in 0..width {
            if subject_box().contains_pixel(r, c, height, width) {
                mean_l[[r, c, 0]] = 1.0;
            }
            if object_box().contains_pixel(r, c, height, width) {
                mean_r[[r, c, 0]] = 1.0;
            }
        }
    }
    let mut map = BTreeMap::new();
    map.insert(left.clone(), vec![0]);
    map.insert(right.clone(), vec![1]);
    let spec = MixtureSpec::new(
        vec![
            MixtureComponent {
                weight: 0.5,
                mean: mean_l,
                var: 0.01,
            },
            MixtureComponent {
                weight: 0.5,
                mean: mean_r,
                var: 0.01,
            },
        ],
        map,
    )?;
    Ok((spec, left, right))
}

/// Blob world for layout experiments: a blob sits on the left or the right
/// (or nowhere), and the single blob token is agnostic about the side — only
/// layout control decides where it lands.
pub fn build_blob_world(height: usize, width: usize) -> Result<(MixtureSpec, Condition)> {
    let blob = Condition::token(10, vec![1]);
    let mut mean_l = Grid::from_elem((height, width, 1), 0.0);
    let mut mean_r = Grid::from_elem((height, width, 1), 0.0);
    for r in 0..height {
        for c in 0..width {
            if subject_box().contains_pixel(r, c, height, width) {
                mean_l[[r, c, 0]] = 1.0;
            }
            if object_box().contains_pixel(r, c, height, width) {
                mean_r[[r, c, 0]] = 1.0;
            }
        }
    }
    let mut map = BTreeMap::new();
    map.insert(blob.clone(), vec![0, 1]);
    let spec = MixtureSpec::new(
        vec![
            MixtureComponent {
                weight: 0.45,
                mean: mean_l,
                var: 0.01,
            },
            MixtureComponent {
                weight: 0.45,
                mean: mean_r,
                var: 0.01,
            },
            MixtureComponent {
                weight: 0.10,
                mean: Grid::from_elem((height, width, 1), 0.0),
                var: 0.01,
            },
        ],
        map,
    )?;
    Ok((spec, blob))
}
