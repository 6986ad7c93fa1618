//! Subcommand flags, resolved settings and implementations.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use plenoctree::bench::{bench_octree, bench_reference};
use plenoctree::codec::{self, Precision, DEFAULT_LEVEL};
use plenoctree::convert::{convert as convert_field, ConversionConfig};
use plenoctree::optim::{finetune as run_finetune, psnr, FinetuneConfig, LossNorm, StopReason};
use plenoctree::renderer::{render_all, render_image};
use plenoctree::scenes::{make_camera_rig, make_oracle, AnalyticScene, ImageDataset, RigConfig, Sampling, Split, DEFAULT_FOV_X, DEFAULT_VIEWS, REFERENCE_SAMPLES};
use plenoctree::{Camera, PlenOctree, RenderConfig};

use crate::exit::Failure;
use crate::settings::{announce, with_extension, GlobalSettings};

/// File name of the scene description written next to a generated dataset.
pub const SCENE_FILE: &str = "scene.json";

type Outcome = Result<(), Failure>;

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    value.as_deref().ok_or_else(|| Failure::config(format!("missing --{flag}")))
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoredPrecision {
    F32,
    F16,
}

impl From<StoredPrecision> for Precision {
    fn from(p: StoredPrecision) -> Self {
        match p {
            StoredPrecision::F32 => Precision::F32,
            StoredPrecision::F16 => Precision::F16,
        }
    }
}

/// Writes `.plocz` when the extension asks for it, raw `.ploc` otherwise.
fn save_tree(tree: &PlenOctree, path: &Path, precision: StoredPrecision) -> Outcome {
    if path.extension().is_some_and(|e| e == "plocz") {
        codec::save_compressed(tree, path, DEFAULT_LEVEL)?;
    } else {
        codec::save_raw(tree, path, precision.into())?;
    }
    log::info!("wrote {} ({} leaves)", path.display(), tree.leaf_count());
    Ok(())
}

fn load_scene(name: &str, file: Option<&Path>) -> Result<AnalyticScene, Failure> {
    match file {
        Some(path) => Ok(AnalyticScene::load(path)?),
        None => Ok(name.parse()?),
    }
}

fn rig(views: usize, res: usize, radius: f64, phase: f64) -> Result<Vec<Camera>, Failure> {
    Ok(make_camera_rig(&RigConfig { phase, ..RigConfig::new(views, radius, res) })?)
}

fn render_config(gamma: f64, background: [f64; 3]) -> Result<RenderConfig, Failure> {
    let cfg = RenderConfig { background, ..RenderConfig::white().with_gamma(gamma) };
    cfg.validate()?;
    Ok(cfg)
}

// gen

#[derive(Args, Debug, Serialize)]
pub struct GenFlags {
    /// sh_sphere, voxel_blocks, specular_shell or empty.
    #[arg(long)]
    scene: Option<String>,
    /// JSON scene description; overrides --scene.
    #[arg(long)]
    scene_file: Option<PathBuf>,
    /// Training views.
    #[arg(long)]
    views: Option<usize>,
    /// Extra held-out views from an offset rig.
    #[arg(long)]
    test_views: Option<usize>,
    /// Image width and height in pixels.
    #[arg(long)]
    res: Option<usize>,
    /// Camera distance from the origin.
    #[arg(long)]
    radius: Option<f64>,
    /// Horizontal field of view in radians.
    #[arg(long)]
    fov_x: Option<f64>,
    /// Samples per ray; 0 integrates piecewise-constant scenes exactly.
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSettings {
    scene: String,
    scene_file: Option<PathBuf>,
    views: usize,
    test_views: usize,
    res: usize,
    radius: f64,
    fov_x: f64,
    samples: usize,
    out: Option<PathBuf>,
}

impl Default for GenSettings {
    fn default() -> Self {
        Self {
            scene: "sh_sphere".into(),
            scene_file: None,
            views: DEFAULT_VIEWS,
            test_views: 0,
            res: 256,
            radius: 4.0,
            fov_x: DEFAULT_FOV_X,
            samples: REFERENCE_SAMPLES,
            out: None,
        }
    }
}

pub fn gen(global: &GlobalSettings, s: GenSettings) -> Outcome {
    announce("gen", global, &s);
    let out = require(&s.out, "out")?;
    let scene = load_scene(&s.scene, s.scene_file.as_deref())?;
    let field = make_oracle(&scene)?;
    let base = RigConfig { fov_x: s.fov_x, ..RigConfig::new(s.views, s.radius, s.res) };
    let mut cameras: Vec<(Camera, Split)> = make_camera_rig(&base)?.into_iter().map(|c| (c, Split::Train)).collect();
    if s.test_views > 0 {
        let test = make_camera_rig(&RigConfig { views: s.test_views, phase: 0.5, ..base.clone() })?;
        cameras.extend(test.into_iter().map(|c| (c, Split::Test)));
    }
    let sampling = if s.samples == 0 { Sampling::Exact } else { Sampling::Uniform(s.samples) };
    let cfg = RenderConfig::white().with_gamma(0.0);
    let dataset = ImageDataset::render(&field, &cameras, &cfg, sampling)?;
    dataset.save(out)?;
    scene.save(&out.join(SCENE_FILE))?;
    log::info!("wrote {} frames of {} to {}", dataset.frames.len(), scene.name(), out.display());
    Ok(())
}

// convert

#[derive(Args, Debug, Serialize)]
pub struct ConvertFlags {
    /// Scene name, used when neither --scene-file nor --dataset is given.
    #[arg(long)]
    scene: Option<String>,
    /// Scene description JSON, such as a dataset's `scene.json`.
    #[arg(long)]
    scene_file: Option<PathBuf>,
    /// Dataset directory; its scene description and training cameras are used.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Rig used for visibility filtering when no dataset is given.
    #[arg(long)]
    views: Option<usize>,
    /// Image width and height in pixels.
    #[arg(long)]
    res: Option<usize>,
    /// Distance of rig cameras from the origin.
    #[arg(long)]
    radius: Option<f64>,
    /// Edge of the evaluation grid.
    #[arg(long)]
    grid: Option<usize>,
    /// Density threshold of the automatic bounding box.
    #[arg(long)]
    tau_a: Option<f64>,
    /// Visibility-weight threshold.
    #[arg(long)]
    tau_w: Option<f64>,
    /// Random field samples averaged per kept voxel.
    #[arg(long)]
    samples_per_voxel: Option<usize>,
    /// Edge of the grid used to fit the bounding box.
    #[arg(long)]
    coarse_grid: Option<usize>,
    /// Fit the bounding box to the occupied region.
    #[arg(long)]
    auto_bbox: Option<bool>,
    /// f32 or f16 leaf values in raw output.
    #[arg(long)]
    precision: Option<String>,
    /// Output tree (`.ploc`, or `.plocz` for the compressed form).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertSettings {
    scene: String,
    scene_file: Option<PathBuf>,
    dataset: Option<PathBuf>,
    views: usize,
    res: usize,
    radius: f64,
    grid: usize,
    tau_a: f64,
    tau_w: f64,
    samples_per_voxel: usize,
    coarse_grid: usize,
    auto_bbox: bool,
    precision: StoredPrecision,
    out: Option<PathBuf>,
}

impl Default for ConvertSettings {
    fn default() -> Self {
        let c = ConversionConfig::default();
        Self {
            scene: "sh_sphere".into(),
            scene_file: None,
            dataset: None,
            views: DEFAULT_VIEWS,
            res: 256,
            radius: 4.0,
            grid: c.grid,
            tau_a: c.tau_a,
            tau_w: c.tau_w,
            samples_per_voxel: c.samples_per_voxel,
            coarse_grid: c.coarse_grid,
            auto_bbox: c.auto_bbox,
            precision: StoredPrecision::F32,
            out: None,
        }
    }
}

pub fn convert(global: &GlobalSettings, s: ConvertSettings) -> Outcome {
    announce("convert", global, &s);
    let out = require(&s.out, "out")?;
    let cfg = ConversionConfig {
        grid: s.grid,
        tau_a: s.tau_a,
        tau_w: s.tau_w,
        samples_per_voxel: s.samples_per_voxel,
        coarse_grid: s.coarse_grid,
        auto_bbox: s.auto_bbox,
        seed: global.seed,
    };
    cfg.validate()?;
    let (scene, cameras) = match &s.dataset {
        Some(dir) => {
            let file = s.scene_file.clone().unwrap_or_else(|| dir.join(SCENE_FILE));
            let ds = ImageDataset::load(dir)?;
            (AnalyticScene::load(&file)?, ds.split(Split::Train).map(|f| f.camera.clone()).collect())
        }
        None => (load_scene(&s.scene, s.scene_file.as_deref())?, rig(s.views, s.res, s.radius, 0.0)?),
    };
    let field = make_oracle(&scene)?;
    let (tree, stats) = convert_field(&field, &cameras, &cfg)?;
    log::info!("evaluated {}, occupied {}, kept {}, leaves {}", stats.evaluated, stats.occupied, stats.kept, stats.leaves);
    save_tree(&tree, out, s.precision)?;
    print_json(&stats);
    Ok(())
}

// render

#[derive(Args, Debug, Serialize)]
pub struct RenderFlags {
    /// Input tree (`.ploc` or `.plocz`).
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Render every camera of this dataset and report PSNR against its images.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of rig cameras.
    #[arg(long)]
    views: Option<usize>,
    /// Image width and height in pixels.
    #[arg(long)]
    res: Option<usize>,
    /// Distance of rig cameras from the origin.
    #[arg(long)]
    radius: Option<f64>,
    /// Azimuth offset of the rig in radians.
    #[arg(long)]
    phase: Option<f64>,
    /// Early-termination transmittance threshold.
    #[arg(long)]
    gamma: Option<f64>,
    /// Background color as three comma-separated values in [0, 1].
    #[arg(long, value_delimiter = ',', num_args = 3)]
    background: Option<Vec<f64>>,
    /// Also write alpha PNGs and raw f32 depth maps.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    aux: Option<bool>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    tree: Option<PathBuf>,
    dataset: Option<PathBuf>,
    views: usize,
    res: usize,
    radius: f64,
    phase: f64,
    gamma: f64,
    background: [f64; 3],
    aux: bool,
    out: Option<PathBuf>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tree: None,
            dataset: None,
            views: 1,
            res: 800,
            radius: 4.0,
            phase: 0.0,
            gamma: plenoctree::renderer::DEFAULT_GAMMA,
            background: [1.0; 3],
            aux: false,
            out: None,
        }
    }
}

#[derive(Serialize)]
struct FrameScore {
    frame: usize,
    split: Split,
    psnr: f64,
}

pub fn render(global: &GlobalSettings, s: RenderSettings) -> Outcome {
    announce("render", global, &s);
    let out = require(&s.out, "out")?;
    let tree = codec::load(require(&s.tree, "tree")?)?;
    let cfg = render_config(s.gamma, s.background)?;
    let dataset = s.dataset.as_deref().map(ImageDataset::load).transpose()?;
    let cameras = match &dataset {
        Some(ds) => ds.frames.iter().map(|f| f.camera.clone()).collect(),
        None => rig(s.views, s.res, s.radius, s.phase)?,
    };
    create_dir(out)?;
    let mut scores = Vec::new();
    for (i, cam) in cameras.iter().enumerate() {
        let color = if s.aux {
            let (color, alpha, depth) = render_all(&tree, cam, &cfg)?;
            alpha.save_png(&out.join(format!("{i:04}_alpha.png")))?;
            depth.save_raw_f32(&out.join(format!("{i:04}_depth.f32")))?;
            color
        } else {
            render_image(&tree, cam, &cfg)?
        };
        color.save_png(&out.join(format!("{i:04}.png")))?;
        if let Some(ds) = &dataset {
            let frame = &ds.frames[i];
            scores.push(FrameScore { frame: i, split: frame.split, psnr: psnr(&color, &frame.image)? });
        }
    }
    log::info!("rendered {} frames to {}", cameras.len(), out.display());
    if !scores.is_empty() {
        let mean = scores.iter().map(|f| f.psnr).sum::<f64>() / scores.len() as f64;
        print_json(&serde_json::json!({ "mean_psnr": mean, "frames": scores }));
    }
    Ok(())
}

// finetune

#[derive(Args, Debug, Serialize)]
pub struct FinetuneFlags {
    /// Input tree (`.ploc` or `.plocz`).
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Dataset directory holding `manifest.json` and `images/`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output tree holding the best validation snapshot.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Line-delimited JSON training log; defaults to the output with `.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// SGD learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Rays per SGD step.
    #[arg(long)]
    batch: Option<usize>,
    /// Share of training pixels held out when the dataset has no val frames.
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
    /// sum or mean.
    #[arg(long)]
    loss: Option<String>,
    /// Transmittance below which rays stop compositing.
    #[arg(long)]
    gamma: Option<f64>,
    /// Value precision of raw output trees: f32 or f16.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    tree: Option<PathBuf>,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    log: Option<PathBuf>,
    lr: f64,
    epochs: usize,
    batch: usize,
    val_fraction: f64,
    patience: usize,
    loss: LossNorm,
    gamma: f64,
    precision: StoredPrecision,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        let c = FinetuneConfig::default();
        Self {
            tree: None,
            dataset: None,
            out: None,
            log: None,
            lr: c.lr,
            epochs: c.epochs,
            batch: c.batch,
            val_fraction: c.val_fraction,
            patience: c.patience,
            loss: c.loss,
            gamma: plenoctree::renderer::DEFAULT_GAMMA,
            precision: StoredPrecision::F32,
        }
    }
}

pub fn finetune(global: &GlobalSettings, s: FinetuneSettings) -> Outcome {
    announce("finetune", global, &s);
    let out = require(&s.out, "out")?;
    let tree = codec::load(require(&s.tree, "tree")?)?;
    let dataset = ImageDataset::load(require(&s.dataset, "dataset")?)?;
    let cfg = FinetuneConfig {
        lr: s.lr,
        epochs: s.epochs,
        batch: s.batch,
        val_fraction: s.val_fraction,
        patience: s.patience,
        loss: s.loss,
        seed: global.seed,
    };
    let render = render_config(s.gamma, dataset.background)?;
    let outcome = run_finetune(&tree, &dataset, &render, &cfg)?;
    save_tree(&outcome.tree, out, s.precision)?;
    let log_path = s.log.clone().unwrap_or_else(|| with_extension(out, "jsonl"));
    write_file(&log_path, outcome.log_lines().as_bytes())?;
    let best = &outcome.log[outcome.best_epoch];
    print_json(&serde_json::json!({
        "initial_val_psnr": outcome.log[0].val_psnr,
        "best_val_psnr": best.val_psnr,
        "best_epoch": outcome.best_epoch,
        "stop": outcome.stop,
    }));
    match outcome.stop {
        StopReason::Diverged { epoch } => Err(Failure::numeric(format!(
            "training diverged at epoch {epoch}; kept the epoch {} snapshot in {}",
            outcome.best_epoch,
            out.display()
        ))),
        _ => Ok(()),
    }
}

// compress / decompress

#[derive(Args, Debug, Serialize)]
pub struct CompressFlags {
    /// Input tree.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output `.plocz` file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Deflate level, 0 to 9.
    #[arg(long)]
    level: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressSettings {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    level: u32,
}

impl Default for CompressSettings {
    fn default() -> Self {
        Self { input: None, out: None, level: DEFAULT_LEVEL }
    }
}

fn file_size(path: &Path) -> u64 {
    fs::metadata(path).map(|m| m.len()).unwrap_or(0)
}

pub fn compress(global: &GlobalSettings, s: CompressSettings) -> Outcome {
    announce("compress", global, &s);
    let input = require(&s.input, "input")?;
    let out = require(&s.out, "out")?;
    let tree = codec::load(input)?;
    codec::save_compressed(&tree, out, s.level)?;
    let (a, b) = (file_size(input), file_size(out));
    print_json(&serde_json::json!({ "input_bytes": a, "output_bytes": b, "ratio": a as f64 / b.max(1) as f64 }));
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct DecompressFlags {
    /// Input `.plocz` file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output raw `.ploc` tree.
    #[arg(long)]
    out: Option<PathBuf>,
    /// f32 or f16 leaf values.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompressSettings {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    precision: StoredPrecision,
}

impl Default for DecompressSettings {
    fn default() -> Self {
        Self { input: None, out: None, precision: StoredPrecision::F32 }
    }
}

pub fn decompress(global: &GlobalSettings, s: DecompressSettings) -> Outcome {
    announce("decompress", global, &s);
    let tree = codec::load(require(&s.input, "input")?)?;
    let out = require(&s.out, "out")?;
    codec::save_raw(&tree, out, s.precision.into())?;
    log::info!("wrote {} ({} leaves)", out.display(), tree.leaf_count());
    Ok(())
}

// bench

#[derive(Args, Debug, Serialize)]
pub struct BenchFlags {
    /// Input tree (`.ploc` or `.plocz`).
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Scene name for the brute-force comparison.
    #[arg(long)]
    scene: Option<String>,
    /// Scene description for the brute-force comparison.
    #[arg(long)]
    scene_file: Option<PathBuf>,
    /// Number of rig cameras.
    #[arg(long)]
    views: Option<usize>,
    /// Image width and height in pixels.
    #[arg(long)]
    res: Option<usize>,
    /// Distance of rig cameras from the origin.
    #[arg(long)]
    radius: Option<f64>,
    /// Azimuth offset of the rig, in radians.
    #[arg(long)]
    phase: Option<f64>,
    /// Timed repetitions after one warmup pass.
    #[arg(long)]
    reps: Option<usize>,
    /// Transmittance below which rays stop compositing.
    #[arg(long)]
    gamma: Option<f64>,
    /// Samples per ray of the brute-force marcher.
    #[arg(long)]
    samples: Option<usize>,
    /// Also write the report to this JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    tree: Option<PathBuf>,
    scene: Option<String>,
    scene_file: Option<PathBuf>,
    views: usize,
    res: usize,
    radius: f64,
    phase: f64,
    reps: usize,
    gamma: f64,
    samples: usize,
    out: Option<PathBuf>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            tree: None,
            scene: None,
            scene_file: None,
            views: 3,
            res: 800,
            radius: 4.0,
            phase: 0.5,
            reps: 3,
            gamma: plenoctree::renderer::DEFAULT_GAMMA,
            samples: REFERENCE_SAMPLES,
            out: None,
        }
    }
}

pub fn bench(global: &GlobalSettings, s: BenchSettings) -> Outcome {
    announce("bench", global, &s);
    let tree = codec::load(require(&s.tree, "tree")?)?;
    let cameras = rig(s.views, s.res, s.radius, s.phase)?;
    let cfg = render_config(s.gamma, [1.0; 3])?;
    let octree = bench_octree(&tree, &cameras, &cfg, s.reps)?;
    let scene = match (&s.scene_file, &s.scene) {
        (Some(path), _) => Some(AnalyticScene::load(path)?),
        (None, Some(name)) => Some(name.parse::<AnalyticScene>()?),
        (None, None) => None,
    };
    let reference = match scene {
        Some(scene) => {
            let field = make_oracle(&scene)?;
            // Brute force composites every sample.
            Some(bench_reference(&field, &cameras, &cfg.clone().with_gamma(0.0), s.samples, s.reps)?)
        }
        None => None,
    };
    let speedup = reference.as_ref().map(|r| octree.fps / r.fps);
    let report = serde_json::json!({
        "threads": rayon::current_num_threads(),
        "octree": octree,
        "reference": reference,
        "speedup": speedup,
    });
    if let Some(path) = &s.out {
        write_file(path, serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    }
    print_json(&report);
    Ok(())
}

// export-web

#[derive(Args, Debug, Serialize)]
pub struct ExportWebFlags {
    /// Input tree (`.ploc` or `.plocz`).
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Output directory of the bundle.
    #[arg(long)]
    out: Option<PathBuf>,
    /// DEFLATE level, 0 to 9.
    #[arg(long)]
    level: Option<u32>,
    /// Size of the reference render.
    #[arg(long)]
    res: Option<usize>,
    /// Distance of the initial camera.
    #[arg(long)]
    radius: Option<f64>,
    /// Transmittance below which rays stop compositing.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportWebSettings {
    tree: Option<PathBuf>,
    out: Option<PathBuf>,
    level: u32,
    res: usize,
    radius: f64,
    gamma: f64,
}

impl Default for ExportWebSettings {
    fn default() -> Self {
        Self { tree: None, out: None, level: DEFAULT_LEVEL, res: 800, radius: 4.0, gamma: plenoctree::renderer::DEFAULT_GAMMA }
    }
}

/// Name of the tree inside an exported bundle.
pub const WEB_TREE: &str = "scene.plocz";
/// Name of the bundle manifest.
pub const WEB_MANIFEST: &str = "manifest.json";
/// Reference render of the decompressed tree from the manifest camera.
pub const WEB_REFERENCE: &str = "reference.png";

pub fn export_web(global: &GlobalSettings, s: ExportWebSettings) -> Outcome {
    announce("export-web", global, &s);
    let out = require(&s.out, "out")?;
    let tree = codec::load(require(&s.tree, "tree")?)?;
    create_dir(out)?;
    let packed = codec::compress(&tree, s.level)?;
    write_file(&out.join(WEB_TREE), &packed)?;
    let shown = codec::decompress(&packed).map_err(plenoctree::Error::from)?;
    let camera = rig(1, s.res, s.radius, 0.0)?.remove(0);
    let cfg = render_config(s.gamma, [1.0; 3])?;
    render_image(&shown, &camera, &cfg)?.save_png(&out.join(WEB_REFERENCE))?;
    let manifest = serde_json::json!({
        "version": 1,
        "tree": WEB_TREE,
        "tree_bytes": packed.len(),
        "leaves": shown.leaf_count(),
        "nodes": shown.node_count(),
        "depth": shown.depth,
        "bbox": { "min": shown.bbox.min.to_array(), "max": shown.bbox.max.to_array() },
        "basis": shown.basis,
        "render": cfg,
        "camera": camera,
        "reference_image": WEB_REFERENCE,
    });
    write_file(&out.join(WEB_MANIFEST), serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())?;
    log::info!("wrote web bundle to {}", out.display());
    Ok(())
}
