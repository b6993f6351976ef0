//! Command-line front end: run scenes, generate test sets, score outputs,
//! train the toy backend.
//!
//! Exit codes: 0 success, 2 bad input (parse/validation), 3 numeric
//! divergence mid-chain. All artifacts land under the `--out` directory and
//! are written atomically (temp file + rename). `GLOD_THREADS` caps the
//! worker pool used to run seeds in parallel.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoiser::toy::{train_toy, ToyDenoiser, TrainConfig};
use crate::denoiser::weights_io;
use crate::denoiser::{AnalyticDenoiser, Condition, Denoiser, MixtureSpec};
use crate::error::{GlodError, Result};
use crate::grid::Grid;
use crate::layout::LayoutConfig;
use crate::sampler::{baseline_sample, glod_sample, SamplerConfig, Trace, TraceConfig};
use crate::scene::{
    alignment_scores, generate_testset, infection_score, write_scores_csv, MixtureOracle, Scene,
    ScoreRow, TemplateSpec, TestCase,
};
use crate::schedule::{Schedule, ScheduleKind};
use crate::world;

const IMAGE_MAXVAL: u32 = 65535;

#[derive(Parser)]
#[command(name = "glod", version, about = "Layered global-local diffusion sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Full layered sampling: globals + masked locals + layout stage.
    Glod,
    /// Classifier-free guidance on the first global condition only.
    BaselineCfg,
    /// Globals with the layout stage forced on; no local guidance.
    LayoutOnly,
    /// The scene with every local entry dropped.
    LocalsRemoved,
}

impl Method {
    fn label(self) -> &'static str {
        match self {
            Method::Glod => "glod",
            Method::BaselineCfg => "baseline-cfg",
            Method::LayoutOnly => "layout-only",
            Method::LocalsRemoved => "locals-removed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Full,
    Decomposed,
}

impl Variant {
    fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Decomposed => "decomposed",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample one scene file (or every scene in a directory).
    Sample {
        /// Scene JSON file, or a directory of scene files.
        #[arg(long)]
        scene: PathBuf,
        /// Backend: "attribute", "two-blob", or a GLODDN1 weights file.
        #[arg(long, default_value = "attribute")]
        backend: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Glod)]
        method: Method,
        /// Comma-separated seed list; overrides the scene's own seed.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Also write a per-step trace JSON next to each image.
        #[arg(long)]
        trace: bool,
    },
    /// Generate a template test set: full + decomposed scene per case.
    Testset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Denoising steps per generated scene.
        #[arg(long, default_value_t = 30)]
        steps: usize,
        /// Generate scenes with the layout stage disabled.
        #[arg(long)]
        no_layout: bool,
    },
    /// Score sampled images against a test set; writes a CSV.
    Score {
        /// Test-set directory (from `glod testset`).
        #[arg(long)]
        cases: PathBuf,
        /// Directory of images (from `glod sample` over the test set).
        #[arg(long)]
        images: PathBuf,
        /// Backend used as similarity oracle; must be a mixture.
        #[arg(long, default_value = "attribute")]
        backend: String,
        #[arg(long)]
        out: PathBuf,
        /// Method label recorded in the CSV rows.
        #[arg(long, default_value = "glod")]
        method: String,
        /// Which scene variant's images to score.
        #[arg(long, value_enum, default_value_t = Variant::Decomposed)]
        variant: Variant,
        /// Seeds the images were sampled with.
        #[arg(long, default_value = "0")]
        seeds: String,
    },
    /// Train the toy MLP on samples drawn from the attribute world.
    Train {
        /// Output weights file (GLODDN1).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training images drawn from the mixture.
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Schedule length the network is trained against.
        #[arg(long, default_value_t = 20)]
        num_steps: usize,
    },
    /// Run one layered scene end to end and dump image + trace + scene.
    ComposeDemo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                GlodError::NumericDivergence { .. } => 3,
                _ => 2,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Sample {
            scene,
            backend,
            out,
            method,
            seeds,
            trace,
        } => cmd_sample(&scene, &backend, &out, method, &parse_seeds(&seeds)?, trace),
        Command::Testset {
            out,
            n,
            seed,
            steps,
            no_layout,
        } => cmd_testset(&out, n, seed, steps, no_layout),
        Command::Score {
            cases,
            images,
            backend,
            out,
            method,
            variant,
            seeds,
        } => cmd_score(&cases, &images, &backend, &out, &method, variant, &parse_seeds(&seeds)?),
        Command::Train {
            out,
            steps,
            seed,
            samples,
            num_steps,
        } => cmd_train(&out, steps, seed, samples, num_steps),
        Command::ComposeDemo { out, seed } => cmd_compose_demo(&out, seed),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| GlodError::Parse(format!("bad seed {s:?}")))
        })
        .collect()
}

fn worker_count(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var("GLOD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(hw);
    cap.max(1).min(jobs.max(1))
}

/// Run closures over jobs on a bounded worker pool; preserves result order.
fn run_pool<J, F>(jobs: Vec<J>, f: F) -> Result<()>
where
    J: Send + Sync,
    F: Fn(&J) -> Result<()> + Sync,
{
    let workers = worker_count(jobs.len());
    if workers <= 1 {
        for j in &jobs {
            f(j)?;
        }
        return Ok(());
    }
    let chunk = jobs.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for part in jobs.chunks(chunk) {
            let f = &f;
            handles.push(scope.spawn(move || -> Result<()> {
                for j in part {
                    f(j)?;
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().expect("worker panicked")?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// backends

enum Backend {
    Mixture(MixtureSpec),
    Toy(ToyDenoiser),
}

impl Backend {
    fn resolve(spec: &str) -> Result<Backend> {
        match spec {
            "attribute" => Ok(Backend::Mixture(world::build_attribute_world(
                &world::WorldSpec::default(),
            )?)),
            "two-blob" => {
                let (spec, _, _) = world::build_two_blob_world(8, 8)?;
                Ok(Backend::Mixture(spec))
            }
            path => {
                let p = Path::new(path);
                weights_io::load_mixture(p).map(Backend::Mixture).or_else(|_| {
                    weights_io::load_toy(p).map(Backend::Toy).map_err(|e| {
                        GlodError::Parse(format!("cannot load backend {path:?}: {e}"))
                    })
                })
            }
        }
    }

    fn denoiser(&self, schedule: &Schedule) -> Box<dyn Denoiser + Send + Sync> {
        match self {
            Backend::Mixture(spec) => {
                Box::new(AnalyticDenoiser::new(spec.clone(), schedule.clone()))
            }
            Backend::Toy(net) => Box::new(net.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// image IO: plain PGM (P2) for one channel, plain PPM (P3) for three

pub fn write_image(img: &Grid, path: &Path) -> Result<()> {
    let (h, w, c) = img.dim();
    let magic = match c {
        1 => "P2",
        3 => "P3",
        other => {
            return Err(GlodError::invalid(format!(
                "image output supports 1 or 3 channels, got {other}"
            )))
        }
    };
    let mut text = String::new();
    let _ = writeln!(text, "{magic}");
    let _ = writeln!(text, "# value = pixel / {IMAGE_MAXVAL}");
    let _ = writeln!(text, "{w} {h}");
    let _ = writeln!(text, "{IMAGE_MAXVAL}");
    for r in 0..h {
        let mut row = String::new();
        for col in 0..w {
            for ch in 0..c {
                let v = img[[r, col, ch]].clamp(0.0, 1.0);
                let px = (v * IMAGE_MAXVAL as f64).round() as u32;
                if !row.is_empty() {
                    row.push(' ');
                }
                let _ = write!(row, "{px}");
            }
        }
        let _ = writeln!(text, "{row}");
    }
    atomic_write(path, text.as_bytes())
}

pub fn read_image(path: &Path) -> Result<Grid> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace());
    let magic = tokens
        .next()
        .ok_or_else(|| GlodError::Parse("empty image file".into()))?;
    let channels = match magic {
        "P2" => 1,
        "P3" => 3,
        other => return Err(GlodError::Parse(format!("unsupported image magic {other:?}"))),
    };
    let mut next_num = |what: &str| -> Result<u64> {
        tokens
            .next()
            .ok_or_else(|| GlodError::Parse(format!("truncated image: missing {what}")))?
            .parse::<u64>()
            .map_err(|_| GlodError::Parse(format!("bad {what} in image")))
    };
    let w = next_num("width")? as usize;
    let h = next_num("height")? as usize;
    let maxval = next_num("maxval")? as f64;
    if w == 0 || h == 0 || maxval <= 0.0 {
        return Err(GlodError::Parse("degenerate image header".into()));
    }
    let mut img = Grid::zeros((h, w, channels));
    for r in 0..h {
        for col in 0..w {
            for ch in 0..channels {
                img[[r, col, ch]] = next_num("pixel")? as f64 / maxval;
            }
        }
    }
    Ok(img)
}

static TMP_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// Write via a temp file in the destination directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let n = TMP_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let tmp_name = format!(
        ".{}.{}.{n}.tmp",
        path.file_name().and_then(|f| f.to_str()).unwrap_or("out"),
        std::process::id()
    );
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => PathBuf::from(&tmp_name),
    };
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sample

fn scene_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter(|p| {
                // skip non-scene metadata written next to test sets
                !p.file_name()
                    .and_then(|f| f.to_str())
                    .is_some_and(|f| f == "cases.json" || f == "template.json")
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(GlodError::invalid(format!("no scene files in {path:?}")));
        }
        Ok(files)
    } else if path.exists() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(GlodError::Parse(format!("scene path {path:?} does not exist")))
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .to_string()
}

/// Run one (scene, seed, method) job; returns the final image and trace.
fn run_method(
    scene: &Scene,
    seed: u64,
    method: Method,
    backend: &Backend,
    trace: bool,
) -> Result<(Grid, Trace)> {
    let trace_cfg = if trace {
        TraceConfig::every(1)
    } else {
        TraceConfig::default()
    };
    let mut cfg: SamplerConfig = scene.to_sampler_config(seed, trace_cfg)?;
    let d = backend.denoiser(&cfg.schedule);
    match method {
        Method::Glod => glod_sample(&cfg, d.as_ref()),
        Method::BaselineCfg => {
            let g = scene.globals.first().ok_or_else(|| {
                GlodError::invalid("baseline-cfg needs at least one global condition")
            })?;
            cfg.layout = LayoutConfig::disabled();
            cfg.layout_targets.clear();
            baseline_sample(&cfg, &g.condition, g.weight, d.as_ref())
        }
        Method::LayoutOnly => {
            cfg.stack = cfg.stack.without_locals();
            cfg.layout = LayoutConfig::default();
            glod_sample(&cfg, d.as_ref())
        }
        Method::LocalsRemoved => {
            cfg.stack = cfg.stack.without_locals();
            glod_sample(&cfg, d.as_ref())
        }
    }
}

fn image_extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

fn cmd_sample(
    scene_path: &Path,
    backend_spec: &str,
    out: &Path,
    method: Method,
    seeds: &[u64],
    trace: bool,
) -> Result<()> {
    let files = scene_files(scene_path)?;
    let backend = Backend::resolve(backend_spec)?;
    std::fs::create_dir_all(out)?;

    let mut scenes = Vec::new();
    for f in &files {
        let scene = Scene::load(f)?;
        for warning in scene.warnings() {
            eprintln!("warning: {}: {warning}", stem_of(f));
        }
        scenes.push((stem_of(f), scene));
    }

    let jobs: Vec<(usize, u64)> = (0..scenes.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    run_pool(jobs, |&(i, seed)| {
        let (stem, scene) = &scenes[i];
        let (img, tr) = run_method(scene, seed, method, &backend, trace)?;
        let ext = image_extension(scene.channels);
        write_image(&img, &out.join(format!("{stem}_seed{seed}.{ext}")))?;
        if trace {
            let text = serde_json::to_string_pretty(&tr).expect("trace serializes");
            atomic_write(&out.join(format!("{stem}_seed{seed}.trace.json")), text.as_bytes())?;
        }
        Ok(())
    })?;

    // audit trail: flags override scene values override built-in defaults
    let manifest = serde_json::json!({
        "command": "sample",
        "scenes": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
        "backend": backend_spec,
        "method": method.label(),
        "seeds": seeds,
        "trace": trace,
        "config_precedence": ["flags", "scene file", "built-in defaults"],
    });
    atomic_write(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap().as_bytes(),
    )?;
    for f in &files {
        let copy = out.join(format!("{}.scene.json", stem_of(f)));
        atomic_write(&copy, &std::fs::read(f)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// testset

fn cmd_testset(out: &Path, n: usize, seed: u64, steps: usize, no_layout: bool) -> Result<()> {
    let template = TemplateSpec {
        num_steps: steps,
        layout_enabled: !no_layout,
        ..TemplateSpec::default()
    };
    let cases = generate_testset(&template, n, seed)?;
    std::fs::create_dir_all(out)?;
    for case in &cases {
        atomic_write(
            &out.join(format!("case_{:04}.full.json", case.id)),
            case.full.to_json().as_bytes(),
        )?;
        atomic_write(
            &out.join(format!("case_{:04}.decomposed.json", case.id)),
            case.decomposed.to_json().as_bytes(),
        )?;
    }
    atomic_write(
        &out.join("cases.json"),
        serde_json::to_string_pretty(&cases).unwrap().as_bytes(),
    )?;
    atomic_write(
        &out.join("template.json"),
        serde_json::to_string_pretty(&template).unwrap().as_bytes(),
    )?;
    println!("wrote {} cases to {}", cases.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// score

fn cmd_score(
    cases_dir: &Path,
    images: &Path,
    backend_spec: &str,
    out: &Path,
    method: &str,
    variant: Variant,
    seeds: &[u64],
) -> Result<()> {
    let cases: Vec<TestCase> =
        serde_json::from_str(&std::fs::read_to_string(cases_dir.join("cases.json"))?)
            .map_err(|e| GlodError::Parse(format!("cases.json: {e}")))?;
    let spec = match Backend::resolve(backend_spec)? {
        Backend::Mixture(spec) => spec,
        Backend::Toy(_) => {
            return Err(GlodError::invalid(
                "scoring needs a mixture backend as similarity oracle",
            ))
        }
    };
    let oracle = MixtureOracle::new(spec);
    let mut rows = Vec::new();
    for case in &cases {
        let scene = match variant {
            Variant::Full => &case.full,
            Variant::Decomposed => &case.decomposed,
        };
        let ext = image_extension(scene.channels);
        for &seed in seeds {
            let name = format!("case_{:04}.{}_seed{seed}.{ext}", case.id, variant.label());
            let img = read_image(&images.join(&name))?;
            let a = alignment_scores(&img, case, &oracle)?;
            let s_i = infection_score(&img, case, &oracle)?;
            rows.push(ScoreRow {
                case_id: case.id,
                s_g: a.s_g,
                s_ls: a.s_ls,
                s_lo: a.s_lo,
                s_gl: a.s_gl,
                s_i,
                method: method.to_string(),
                seed,
            });
        }
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_scores_csv(&rows, out)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

/// Draw (image, condition) pairs from the attribute world, labeling each
/// sample with a random token that selects its component.
fn training_dataset(
    spec: &MixtureSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Grid, Condition)> {
    let labels: BTreeMap<usize, Vec<&Condition>> = {
        let mut m: BTreeMap<usize, Vec<&Condition>> = BTreeMap::new();
        for (cond, subset) in &spec.condition_map {
            if cond.is_null() {
                continue;
            }
            for &k in subset {
                m.entry(k).or_default().push(cond);
            }
        }
        m
    };
    let (h, w, c) = spec.shape();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        // mixture draw by weight
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = spec.components.len() - 1;
        for (i, comp) in spec.components.iter().enumerate() {
            acc += comp.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        let comp = &spec.components[k];
        let std = comp.var.sqrt();
        let noise = crate::grid::randn(h, w, c, rng);
        let img = &comp.mean + &noise.mapv(|v| std * v);
        let cond = match labels.get(&k) {
            Some(cands) => (*cands[rng.random_range(0..cands.len())]).clone(),
            None => Condition::Null,
        };
        data.push((img, cond));
    }
    data
}

fn cmd_train(out: &Path, steps: usize, seed: u64, samples: usize, num_steps: usize) -> Result<()> {
    let spec = world::build_attribute_world(&world::WorldSpec::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = training_dataset(&spec, samples, &mut rng);
    let schedule = Schedule::new(num_steps, ScheduleKind::LinearBeta)?;
    let cfg = TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    };
    let (net, report) = train_toy(&data, &schedule, &cfg)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    weights_io::save_toy(&net, out)?;
    println!(
        "trained {steps} steps on {samples} samples: held-out mse {:.5} -> {:.5}",
        report.initial_mse, report.final_mse
    );
    println!("weights written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// compose-demo

fn cmd_compose_demo(out: &Path, seed: u64) -> Result<()> {
    let template = TemplateSpec::default();
    let case = generate_testset(&template, 1, seed)?
        .into_iter()
        .next()
        .expect("one case requested");
    let backend = Backend::resolve("attribute")?;
    std::fs::create_dir_all(out)?;

    let mut scene = case.decomposed.clone();
    scene.seed = seed;
    atomic_write(&out.join("scene.json"), scene.to_json().as_bytes())?;
    let (img, trace) = run_method(&scene, seed, Method::Glod, &backend, true)?;
    let ext = image_extension(scene.channels);
    write_image(&img, &out.join(format!("demo.{ext}")))?;
    atomic_write(
        &out.join("demo.trace.json"),
        serde_json::to_string_pretty(&trace).unwrap().as_bytes(),
    )?;

    if let (Some(first), Some(last)) = (trace.entries.first(), trace.entries.last()) {
        println!(
            "global guidance norm {:.4} -> {:.4}, local {:.4} -> {:.4} over {} steps",
            first.global_guidance_norm,
            last.global_guidance_norm,
            first.local_guidance_norm,
            last.local_guidance_norm,
            trace.entries.len()
        );
    }
    println!("artifacts written to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_parse() {
        assert_eq!(parse_seeds("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(parse_seeds("1,x").is_err());
    }

    #[test]
    fn image_roundtrip_quantized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = crate::grid::randn(5, 4, 3, &mut rng).mapv(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.dim(), img.dim());
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / IMAGE_MAXVAL as f64 + 1e-12);
        }
    }

    #[test]
    fn gray_images_use_pgm() {
        let img = Grid::from_elem((2, 2, 1), 0.25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        write_image(&img, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("P2"));
        assert_eq!(read_image(&path).unwrap(), Grid::from_elem((2, 2, 1), 16384.0 / 65535.0));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        // no stray temp files left behind
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
