//! Scene descriptions, the template test-set generator, and the alignment /
//! infection metric suite.
//!
//! A scene is the full generation request: global conditions, local
//! conditions with bounding boxes and base references, layout targets, seed.
//! Scenes serialize as versioned JSON ("glod-scene/1").

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composer::{BaseRef, Layer, LayerEntry, LayerStack, RegionMask};
use crate::denoiser::{Condition, MixtureSpec};
use crate::error::{GlodError, Result};
use crate::grid::{BoundingBox, Grid};
use crate::layout::{LayoutConfig, LayoutTarget};
use crate::sampler::{SamplerConfig, TraceConfig};
use crate::schedule::{Schedule, ScheduleKind, StepRule};
use crate::world;

pub const SCENE_FORMAT: &str = "glod-scene/1";

/// How region pixels are extracted for scoring; recorded next to every CSV.
pub const REGION_EXTRACTION_RULE: &str =
    "pixel included iff its center lies in the half-open box [y0,y1)x[x0,x1)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGlobal {
    pub condition: Condition,
    pub weight: f64,
}

/// What a local entry's guidance is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", content = "index")]
pub enum SceneBaseRef {
    Uncond,
    Global(usize),
    /// An earlier local in this scene (local-of-local layering).
    Local(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLocal {
    pub condition: Condition,
    pub weight: f64,
    pub bbox: BoundingBox,
    pub base: SceneBaseRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayoutTarget {
    pub condition: Condition,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub seed: u64,
    pub num_steps: usize,
    pub schedule: ScheduleKind,
    pub step_rule: StepRule,
    pub globals: Vec<SceneGlobal>,
    pub locals: Vec<SceneLocal>,
    pub layout: Vec<SceneLayoutTarget>,
    pub layout_enabled: bool,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.format != SCENE_FORMAT {
            return Err(GlodError::Parse(format!(
                "unsupported scene format {:?}, expected {SCENE_FORMAT:?}",
                self.format
            )));
        }
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(GlodError::invalid("scene dimensions must be positive"));
        }
        if self.num_steps < 2 {
            return Err(GlodError::invalid("num_steps must be >= 2"));
        }
        for l in &self.locals {
            l.bbox.validate()?;
        }
        for t in &self.layout {
            t.bbox.validate()?;
        }
        for (i, l) in self.locals.iter().enumerate() {
            match l.base {
                SceneBaseRef::Uncond => {}
                SceneBaseRef::Global(g) => {
                    if g >= self.globals.len() {
                        return Err(GlodError::invalid(format!(
                            "local {i} references missing global {g}"
                        )));
                    }
                }
                SceneBaseRef::Local(j) => {
                    if j >= i {
                        return Err(GlodError::invalid(format!(
                            "local {i} must reference an earlier local, got {j}"
                        )));
                    }
                }
            }
        }
        // building the stack re-checks the structural invariants
        self.to_stack()?.validate()
    }

    /// Warnings that do not block a run (currently: overlapping local masks).
    pub fn warnings(&self) -> Vec<String> {
        match self.to_stack() {
            Ok(stack) => stack
                .overlapping_locals()
                .into_iter()
                .map(|(a, b)| format!("local masks for {a} and {b} overlap; their guidance sums"))
                .collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Lower the scene into a layer stack. Globals form layer 1; each local
    /// lands one layer above its base.
    pub fn to_stack(&self) -> Result<LayerStack> {
        let mut stack = LayerStack::new();
        let global_layer = stack.push_layer(Layer {
            entries: self
                .globals
                .iter()
                .map(|g| LayerEntry::global(g.condition.clone(), g.weight))
                .collect(),
        });
        // layer depth per local: base local's depth + 1
        let mut depth = vec![0usize; self.locals.len()];
        for (i, l) in self.locals.iter().enumerate() {
            depth[i] = match l.base {
                SceneBaseRef::Uncond | SceneBaseRef::Global(_) => global_layer + 1,
                SceneBaseRef::Local(j) => {
                    if j >= i {
                        return Err(GlodError::invalid("local base must point backward"));
                    }
                    depth[j] + 1
                }
            };
        }
        let max_depth = depth.iter().copied().max().unwrap_or(global_layer);
        let mut placed: Vec<(usize, usize)> = vec![(0, 0); self.locals.len()];
        for layer_no in (global_layer + 1)..=max_depth {
            let mut entries = Vec::new();
            for (i, l) in self.locals.iter().enumerate() {
                if depth[i] != layer_no {
                    continue;
                }
                let mask = RegionMask::from_box(&l.bbox, self.height, self.width)?;
                let base = match l.base {
                    SceneBaseRef::Uncond => BaseRef::Uncond,
                    SceneBaseRef::Global(g) => BaseRef::Entry {
                        layer: global_layer,
                        index: g,
                    },
                    SceneBaseRef::Local(j) => {
                        let (bl, bi) = placed[j];
                        BaseRef::Entry {
                            layer: bl,
                            index: bi,
                        }
                    }
                };
                placed[i] = (layer_no, entries.len());
                entries.push(LayerEntry::local(l.condition.clone(), l.weight, mask, base));
            }
            stack.push_layer(Layer { entries });
        }
        Ok(stack)
    }

    pub fn layout_targets(&self) -> Vec<LayoutTarget> {
        self.layout
            .iter()
            .map(|t| LayoutTarget {
                condition: t.condition.clone(),
                bbox: t.bbox,
            })
            .collect()
    }

    pub fn to_sampler_config(&self, seed: u64, trace: TraceConfig) -> Result<SamplerConfig> {
        let schedule = Schedule::new(self.num_steps, self.schedule)?.with_step_rule(self.step_rule);
        let mut cfg = SamplerConfig::new(
            schedule,
            self.to_stack()?,
            self.height,
            self.width,
            self.channels,
            seed,
        );
        cfg.layout_targets = self.layout_targets();
        cfg.layout = if self.layout_enabled {
            LayoutConfig::default()
        } else {
            LayoutConfig::disabled()
        };
        cfg.trace = trace;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Scene> {
        let scene: Scene =
            serde_json::from_str(text).map_err(|e| GlodError::Parse(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Scene> {
        Scene::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One template-generated evaluation case: the merged-prompt scene and its
/// global + locals decomposition, over a fixed layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: usize,
    pub full: Scene,
    pub decomposed: Scene,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
}

/// Token pools the generator crosses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub subjects: Vec<u16>,
    pub objects: Vec<u16>,
    pub attributes: Vec<u16>,
    pub interactions: Vec<u16>,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub num_steps: usize,
    pub global_weight: f64,
    pub local_weight: f64,
    pub layout_enabled: bool,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        let ws = world::WorldSpec::default();
        TemplateSpec {
            subjects: ws.subjects,
            objects: ws.objects,
            attributes: ws.attributes,
            interactions: ws.interactions,
            width: ws.width,
            height: ws.height,
            channels: ws.channels,
            num_steps: 30,
            global_weight: 2.0,
            local_weight: 7.5,
            layout_enabled: true,
        }
    }
}

impl TemplateSpec {
    pub fn world_spec(&self) -> world::WorldSpec {
        world::WorldSpec {
            height: self.height,
            width: self.width,
            channels: self.channels,
            subjects: self.subjects.clone(),
            objects: self.objects.clone(),
            attributes: self.attributes.clone(),
            interactions: self.interactions.clone(),
            ..world::WorldSpec::default()
        }
    }
}

fn scene_shell(t: &TemplateSpec, seed: u64) -> Scene {
    Scene {
        format: SCENE_FORMAT.to_string(),
        width: t.width,
        height: t.height,
        channels: t.channels,
        seed,
        num_steps: t.num_steps,
        schedule: ScheduleKind::KarrasRho7,
        step_rule: StepRule::EulerDiscrete,
        globals: Vec::new(),
        locals: Vec::new(),
        layout: Vec::new(),
        layout_enabled: t.layout_enabled,
    }
}

/// Draw `n` cases deterministically from the template cross-product, with
/// the fixed subject-left / object-right layout.
pub fn generate_testset(template: &TemplateSpec, n: usize, seed: u64) -> Result<Vec<TestCase>> {
    for (name, pool) in [
        ("subjects", template.subjects.len()),
        ("objects", template.objects.len()),
        ("attributes", template.attributes.len()),
        ("interactions", template.interactions.len()),
    ] {
        if pool == 0 {
            return Err(GlodError::invalid(format!("empty token pool: {name}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |pool: &[u16], rng: &mut ChaCha8Rng| pool[rng.random_range(0..pool.len())];
    let sbox = world::subject_box();
    let obox = world::object_box();
    let mut cases = Vec::with_capacity(n);
    for id in 0..n {
        let subject = pick(&template.subjects, &mut rng);
        let object = pick(&template.objects, &mut rng);
        let subject_attr = pick(&template.attributes, &mut rng);
        let object_attr = pick(&template.attributes, &mut rng);
        let interaction = pick(&template.interactions, &mut rng);
        let case_seed: u64 = rng.random();

        let mut full = scene_shell(template, case_seed);
        let merged = world::full_token(subject, subject_attr, object, object_attr, interaction);
        full.globals.push(SceneGlobal {
            condition: merged.clone(),
            weight: template.global_weight,
        });
        full.layout = vec![
            SceneLayoutTarget {
                condition: merged.clone(),
                bbox: sbox,
            },
            SceneLayoutTarget {
                condition: merged,
                bbox: obox,
            },
        ];

        let mut decomposed = scene_shell(template, case_seed);
        let subj_local = world::local_token(subject, subject_attr);
        let obj_local = world::local_token(object, object_attr);
        decomposed.globals.push(SceneGlobal {
            condition: world::global_token(interaction),
            weight: template.global_weight,
        });
        decomposed.locals = vec![
            SceneLocal {
                condition: subj_local.clone(),
                weight: template.local_weight,
                bbox: sbox,
                base: SceneBaseRef::Global(0),
            },
            SceneLocal {
                condition: obj_local.clone(),
                weight: template.local_weight,
                bbox: obox,
                base: SceneBaseRef::Global(0),
            },
        ];
        decomposed.layout = vec![
            SceneLayoutTarget {
                condition: subj_local,
                bbox: sbox,
            },
            SceneLayoutTarget {
                condition: obj_local,
                bbox: obox,
            },
        ];

        cases.push(TestCase {
            id,
            full,
            decomposed,
            subject_box: sbox,
            object_box: obox,
        });
    }
    Ok(cases)
}

/// Region-level similarity, bounded to [0,100]; higher is better aligned.
pub trait SimilarityOracle {
    fn score(&self, img: &Grid, region: &BoundingBox, c: &Condition) -> Result<f64>;
}

/// Exact oracle for mixture worlds: posterior responsibility of the
/// condition's components given the region's pixels, rescaled to [0,100].
#[derive(Debug, Clone)]
pub struct MixtureOracle {
    spec: MixtureSpec,
}

impl MixtureOracle {
    pub fn new(spec: MixtureSpec) -> Self {
        MixtureOracle { spec }
    }
}

impl SimilarityOracle for MixtureOracle {
    fn score(&self, img: &Grid, region: &BoundingBox, c: &Condition) -> Result<f64> {
        region.validate()?;
        let subset = self.spec.subset(c)?;
        let (h, w, ch) = img.dim();
        let (sh, sw, sc) = self.spec.shape();
        if (h, w, ch) != (sh, sw, sc) {
            return Err(GlodError::ShapeMismatch {
                expected: vec![sh, sw, sc],
                got: vec![h, w, ch],
            });
        }
        let pixels: Vec<(usize, usize)> = (0..h)
            .flat_map(|r| (0..w).map(move |col| (r, col)))
            .filter(|&(r, col)| region.contains_pixel(r, col, h, w))
            .collect();
        if pixels.is_empty() {
            return Err(GlodError::invalid(format!(
                "degenerate crop: {region:?} covers no pixel centers on {h}x{w}"
            )));
        }
        // log responsibilities over all components, restricted to the crop
        let mut logs: Vec<f64> = self
            .spec
            .components
            .iter()
            .map(|comp| {
                let mut sq = 0.0;
                for &(r, col) in &pixels {
                    for k in 0..ch {
                        let d = img[[r, col, k]] - comp.mean[[r, col, k]];
                        sq += d * d;
                    }
                }
                let dim = (pixels.len() * ch) as f64;
                comp.weight.ln() - 0.5 * dim * comp.var.ln() - 0.5 * sq / comp.var
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for l in &mut logs {
            *l -= lse;
        }
        let mass: f64 = subset.iter().map(|&k| logs[k].exp()).sum();
        Ok((100.0 * mass).clamp(0.0, 100.0))
    }
}

/// Global, subject, object, and overall alignment scores for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentScores {
    pub s_g: f64,
    pub s_ls: f64,
    pub s_lo: f64,
    pub s_gl: f64,
}

fn full_image_box() -> BoundingBox {
    BoundingBox {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    }
}

pub fn alignment_scores(
    img: &Grid,
    case: &TestCase,
    oracle: &dyn SimilarityOracle,
) -> Result<AlignmentScores> {
    let global = case
        .decomposed
        .globals
        .first()
        .ok_or_else(|| GlodError::invalid("case has no global condition"))?;
    let (subj, obj) = case_locals(case)?;
    let s_g = oracle.score(img, &full_image_box(), &global.condition)?;
    let s_ls = oracle.score(img, &case.subject_box, &subj.condition)?;
    let s_lo = oracle.score(img, &case.object_box, &obj.condition)?;
    Ok(AlignmentScores {
        s_g,
        s_ls,
        s_lo,
        s_gl: (s_g + s_ls + s_lo) / 3.0,
    })
}

/// Cross-talk score: how much each region resembles the *other* object's
/// condition; lower is better.
pub fn infection_score(
    img: &Grid,
    case: &TestCase,
    oracle: &dyn SimilarityOracle,
) -> Result<f64> {
    let (subj, obj) = case_locals(case)?;
    let a = oracle.score(img, &case.subject_box, &obj.condition)?;
    let b = oracle.score(img, &case.object_box, &subj.condition)?;
    Ok((a + b) / 2.0)
}

fn case_locals(case: &TestCase) -> Result<(&SceneLocal, &SceneLocal)> {
    let mut subj = None;
    let mut obj = None;
    for l in &case.decomposed.locals {
        if l.bbox == case.subject_box {
            subj = Some(l);
        } else if l.bbox == case.object_box {
            obj = Some(l);
        }
    }
    match (subj, obj) {
        (Some(s), Some(o)) => Ok((s, o)),
        _ => Err(GlodError::invalid(
            "case locals do not cover subject and object boxes",
        )),
    }
}

/// One metrics row; columns follow the documented CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub case_id: usize,
    #[serde(rename = "S_g")]
    pub s_g: f64,
    #[serde(rename = "S_ls")]
    pub s_ls: f64,
    #[serde(rename = "S_lo")]
    pub s_lo: f64,
    #[serde(rename = "S_gl")]
    pub s_gl: f64,
    #[serde(rename = "S_i")]
    pub s_i: f64,
    pub method: String,
    pub seed: u64,
}

/// Write scores as CSV plus a sidecar JSON recording the region rule.
pub fn write_scores_csv(rows: &[ScoreRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    let meta = serde_json::json!({
        "region_extraction_rule": REGION_EXTRACTION_RULE,
        "columns": ["case_id", "S_g", "S_ls", "S_lo", "S_gl", "S_i", "method", "seed"],
    });
    let meta_path = path.with_extension("meta.json");
    std::fs::write(meta_path, serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(())
}

fn csv_err(e: csv::Error) -> GlodError {
    GlodError::Parse(e.to_string())
}

impl From<csv::Error> for GlodError {
    fn from(e: csv::Error) -> Self {
        csv_err(e)
    }
}
