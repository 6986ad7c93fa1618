//! Analytic radiance fields, camera rigs, reference renders and on-disk
//! image datasets.
//!
//! Scenes are exactly evaluable, so they serve both as conversion input and
//! as ground truth: [`render_reference`] marches a field directly, either with
//! uniform samples or, for piecewise-constant fields, segment by segment.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{sh_basis_size, SphericalBasis};
use crate::convert::RadianceField;
use crate::error::{Error, Result};
use crate::math::{logit, Vec3};
use crate::octree::{BoundingBox, LeafValues, Ray, Segment};
use crate::renderer::{map_pixels, render_segments, Camera, Image, RayOutput, RenderConfig};

/// Samples per ray of the brute-force reference marcher.
pub const REFERENCE_SAMPLES: usize = 192;

/// Default number of views in a camera rig.
pub const DEFAULT_VIEWS: usize = 100;

/// Horizontal field of view of generated cameras, in radians.
pub const DEFAULT_FOV_X: f64 = 0.6911112070083618;

/// Parametric analytic scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scene", rename_all = "snake_case")]
pub enum AnalyticScene {
    /// Solid sphere at the origin. Colors are SH expansions that are
    /// constant on each of `patches^3` axis-aligned tiles.
    ShSphere { radius: f64, density: f64, degree: u32, patches: u32, seed: u64 },
    /// Random blocks on a `blocks^3` lattice over the cube of edge `extent`;
    /// block faces lie on the planes of a `grid^3` voxelization.
    VoxelBlocks { grid: u32, blocks: u32, extent: f64, fill: f64, density: [f64; 2], degree: u32, seed: u64 },
    /// Spherical shell whose color has a view-dependent lobe along `+z`
    /// built from the odd bands 1 and 3.
    SpecularShell { inner_radius: f64, outer_radius: f64, density: f64, base: [f64; 3], amplitude: f64 },
    /// No density anywhere inside a cube of edge `extent`.
    Empty { extent: f64 },
}

impl AnalyticScene {
    pub fn sh_sphere() -> Self {
        AnalyticScene::ShSphere { radius: 1.0, density: 50.0, degree: 2, patches: 4, seed: 7 }
    }

    pub fn voxel_blocks(grid: u32) -> Self {
        AnalyticScene::VoxelBlocks { grid, blocks: 8, extent: 2.0, fill: 0.12, density: [2.0, 20.0], degree: 1, seed: 3 }
    }

    pub fn specular_shell() -> Self {
        AnalyticScene::SpecularShell { inner_radius: 0.8, outer_radius: 1.0, density: 30.0, base: [0.6, 0.5, 0.4], amplitude: 2.0 }
    }

    pub fn empty() -> Self {
        AnalyticScene::Empty { extent: 2.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticScene::ShSphere { .. } => "sh_sphere",
            AnalyticScene::VoxelBlocks { .. } => "voxel_blocks",
            AnalyticScene::SpecularShell { .. } => "specular_shell",
            AnalyticScene::Empty { .. } => "empty",
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), what: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("scene serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl FromStr for AnalyticScene {
    type Err = Error;

    /// Default parameters for a scene name.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sh_sphere" => Ok(Self::sh_sphere()),
            "voxel_blocks" => Ok(Self::voxel_blocks(128)),
            "specular_shell" => Ok(Self::specular_shell()),
            "empty" => Ok(Self::empty()),
            other => Err(Error::InvalidArgument(format!("unknown scene {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Sphere { radius: f64, density: f64, patches: u32 },
    Blocks { blocks: u32, extent: f64 },
    Shell { inner: f64, outer: f64, density: f64 },
    Empty,
}

/// Evaluable field of an [`AnalyticScene`].
#[derive(Clone, Debug)]
pub struct AnalyticField {
    pub scene: AnalyticScene,
    basis: SphericalBasis,
    bounds: BoundingBox,
    shape: Shape,
    /// Per-region densities (blocks only) and coefficient vectors.
    densities: Vec<f64>,
    coeffs: Vec<f64>,
}

/// Random coefficients whose higher bands shrink as `1 / (l + 1)`.
fn random_coeffs(rng: &mut ChaCha8Rng, degree: u32, out: &mut Vec<f64>) {
    for l in 0..=degree {
        let scale = if l == 0 { 4.0 } else { 1.5 / (l as f64 + 1.0) };
        for _ in 0..(2 * l + 1) * 3 {
            out.push(rng.random_range(-scale..scale));
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

/// Builds the field of a scene.
pub fn make_oracle(scene: &AnalyticScene) -> Result<AnalyticField> {
    let mut densities = Vec::new();
    let mut coeffs = Vec::new();
    let (basis, bounds, shape) = match *scene {
        AnalyticScene::ShSphere { radius, density, degree, patches, seed } => {
            positive("radius", radius)?;
            positive("density", density)?;
            if patches == 0 {
                return Err(Error::InvalidArgument("patches must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..patches.pow(3) {
                random_coeffs(&mut rng, degree, &mut coeffs);
            }
            let bounds = BoundingBox::cube(Vec3::ZERO, 2.0 * radius)?;
            (SphericalBasis::sh(degree)?, bounds, Shape::Sphere { radius, density, patches })
        }
        AnalyticScene::VoxelBlocks { grid, blocks, extent, fill, density, degree, seed } => {
            positive("extent", extent)?;
            if blocks == 0 || grid == 0 || grid % blocks != 0 {
                return Err(Error::InvalidArgument(format!("{blocks} blocks do not align with a {grid}-cell grid")));
            }
            if !(0.0..=1.0).contains(&fill) || !(density[0] > 0.0 && density[1] >= density[0]) {
                return Err(Error::InvalidArgument("need fill in [0, 1] and 0 < density range".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..blocks.pow(3) {
                let solid = rng.random_bool(fill);
                let d = rng.random_range(density[0]..=density[1]);
                densities.push(if solid { d } else { 0.0 });
                random_coeffs(&mut rng, degree, &mut coeffs);
            }
            let bounds = BoundingBox::cube(Vec3::ZERO, extent)?;
            (SphericalBasis::sh(degree)?, bounds, Shape::Blocks { blocks, extent })
        }
        AnalyticScene::SpecularShell { inner_radius, outer_radius, density, base, amplitude } => {
            positive("outer radius", outer_radius)?;
            positive("density", density)?;
            if !(inner_radius >= 0.0 && inner_radius < outer_radius) {
                return Err(Error::InvalidArgument("need 0 <= inner radius < outer radius".into()));
            }
            if base.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
                return Err(Error::InvalidArgument("base color must lie in (0, 1)".into()));
            }
            coeffs = vec![0.0; 3 * sh_basis_size(3)];
            let y00 = 0.28209479177387814;
            for ch in 0..3 {
                coeffs[ch] = logit(base[ch]) / y00;
                // (l, m) = (1, 0) and (3, 0) sit at basis indices 2 and 12.
                coeffs[3 * 2 + ch] = amplitude;
                coeffs[3 * 12 + ch] = 0.5 * amplitude;
            }
            let bounds = BoundingBox::cube(Vec3::ZERO, 2.0 * outer_radius)?;
            (SphericalBasis::Sh { degree: 3 }, bounds, Shape::Shell { inner: inner_radius, outer: outer_radius, density })
        }
        AnalyticScene::Empty { extent } => {
            positive("extent", extent)?;
            (SphericalBasis::Sh { degree: 0 }, BoundingBox::cube(Vec3::ZERO, extent)?, Shape::Empty)
        }
    };
    Ok(AnalyticField { scene: scene.clone(), basis, bounds, shape, densities, coeffs })
}

impl AnalyticField {
    fn region(&self, x: Vec3) -> Option<(f64, usize)> {
        match self.shape {
            Shape::Sphere { radius, density, patches } => {
                if x.norm() >= radius {
                    return None;
                }
                let mut id = 0;
                for a in (0..3).rev() {
                    let u = ((x[a] + radius) / (2.0 * radius) * patches as f64).floor() as i64;
                    id = id * patches as usize + u.clamp(0, patches as i64 - 1) as usize;
                }
                Some((density, id))
            }
            Shape::Blocks { blocks, extent } => {
                let half = 0.5 * extent;
                let mut id = 0;
                for a in (0..3).rev() {
                    if !(x[a] >= -half && x[a] < half) {
                        return None;
                    }
                    let u = ((x[a] + half) / extent * blocks as f64).floor() as usize;
                    id = id * blocks as usize + u.min(blocks as usize - 1);
                }
                let d = self.densities[id];
                (d > 0.0).then_some((d, id))
            }
            Shape::Shell { inner, outer, density } => {
                let r = x.norm();
                (r >= inner && r < outer).then_some((density, 0))
            }
            Shape::Empty => None,
        }
    }

    /// Coefficients used at `x` (the background region has all zeros).
    pub fn coeffs_at(&self, x: Vec3) -> Vec<f64> {
        let len = self.basis.coeff_len();
        match self.region(x) {
            Some((_, id)) => self.coeffs[id * len..(id + 1) * len].to_vec(),
            None => vec![0.0; len],
        }
    }
}

impl RadianceField for AnalyticField {
    fn basis(&self) -> &SphericalBasis {
        &self.basis
    }

    fn bounds(&self) -> BoundingBox {
        self.bounds
    }

    fn density(&self, x: Vec3) -> Result<f64> {
        Ok(self.region(x).map_or(0.0, |(d, _)| d))
    }

    fn sample(&self, x: Vec3, coeffs: &mut [f64]) -> Result<f64> {
        let len = self.basis.coeff_len();
        match self.region(x) {
            Some((d, id)) => {
                coeffs.copy_from_slice(&self.coeffs[id * len..(id + 1) * len]);
                Ok(d)
            }
            None => {
                coeffs.fill(0.0);
                Ok(0.0)
            }
        }
    }

    fn breakpoints(&self, ray: &Ray) -> Option<Vec<f64>> {
        let Shape::Blocks { blocks, extent } = self.shape else { return None };
        let (t0, t1) = self.bounds.intersect(ray)?;
        let mut ts = vec![t0, t1];
        let o = ray.origin;
        let d = ray.dir.vec();
        for a in 0..3 {
            if d[a] == 0.0 {
                continue;
            }
            for k in 1..blocks {
                let p = -0.5 * extent + extent * k as f64 / blocks as f64;
                let t = (p - o[a]) / d[a];
                if t > t0 && t < t1 {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        Some(ts)
    }
}

/// How [`render_reference`] integrates along rays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Midpoints of `n` equal steps across the field bounds.
    Uniform(usize),
    /// One segment per constant piece; needs [`RadianceField::breakpoints`].
    Exact,
}

/// Per-worker buffers of the reference marcher.
pub struct MarchScratch {
    values: LeafValues<f64>,
    segments: Vec<Segment>,
    coeffs: Vec<f64>,
    basis_values: Vec<f64>,
}

impl MarchScratch {
    pub fn new(basis: &SphericalBasis) -> Self {
        Self {
            values: LeafValues::new(basis.coeff_len()),
            segments: Vec::new(),
            coeffs: vec![0.0; basis.coeff_len()],
            basis_values: vec![0.0; basis.size()],
        }
    }
}

/// Renders one ray through the field with the octree quadrature.
pub fn reference_ray<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &RenderConfig,
    sampling: Sampling,
    scratch: &mut MarchScratch,
    ray_id: usize,
) -> Result<RayOutput> {
    let MarchScratch { values, segments, coeffs, basis_values } = scratch;
    values.density.clear();
    values.coeffs.clear();
    segments.clear();
    field.basis().eval_into(ray.dir, basis_values);
    let mut push = |t0: f64, t1: f64| -> Result<()> {
        let density = field.sample(ray.at(0.5 * (t0 + t1)), coeffs)?;
        let leaf = values.push(density, coeffs);
        segments.push(Segment { t_enter: t0, t_exit: t1, leaf });
        Ok(())
    };
    match sampling {
        Sampling::Uniform(n) => {
            if n == 0 {
                return Err(Error::InvalidArgument("need at least one sample per ray".into()));
            }
            if let Some((a, b)) = field.bounds().intersect(ray) {
                let step = (b - a) / n as f64;
                for i in 0..n {
                    push(a + step * i as f64, a + step * (i + 1) as f64)?;
                }
            }
        }
        Sampling::Exact => {
            let ts = field
                .breakpoints(ray)
                .ok_or_else(|| Error::InvalidArgument("field is not piecewise constant along rays".into()));
            match ts {
                Ok(ts) => {
                    for w in ts.windows(2) {
                        push(w[0], w[1])?;
                    }
                }
                // A ray that misses the bounds has no pieces at all.
                Err(e) if field.bounds().intersect(ray).is_some() => return Err(e),
                Err(_) => {}
            }
        }
    }
    render_segments(segments, values, basis_values, cfg, ray_id)
}

/// Brute-force image of a field.
pub fn render_reference<F: RadianceField + ?Sized>(field: &F, cam: &Camera, cfg: &RenderConfig, sampling: Sampling) -> Result<Image> {
    map_pixels(
        cam,
        3,
        cfg,
        || MarchScratch::new(field.basis()),
        |scratch, id, ray, out| {
            let r = reference_ray(field, ray, cfg, sampling, scratch, id)?;
            for c in 0..3 {
                out[c] = r.color[c] as f32;
            }
            Ok(())
        },
    )
}

/// Camera rig parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub views: usize,
    pub radius: f64,
    pub target: Vec3,
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    /// Azimuth offset in radians; distinct phases give disjoint rigs.
    pub phase: f64,
}

impl RigConfig {
    pub fn new(views: usize, radius: f64, resolution: usize) -> Self {
        Self { views, radius, target: Vec3::ZERO, width: resolution, height: resolution, fov_x: DEFAULT_FOV_X, phase: 0.0 }
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov_x).tan()
    }
}

/// Cameras on a Fibonacci lattice over the upper (`+z`) hemisphere, all
/// looking at the target; the first sits at the pole.
pub fn make_camera_rig(cfg: &RigConfig) -> Result<Vec<Camera>> {
    if cfg.views == 0 {
        return Err(Error::InvalidArgument("a rig needs at least one view".into()));
    }
    positive("rig radius", cfg.radius)?;
    if !(cfg.fov_x > 0.0 && cfg.fov_x < std::f64::consts::PI) {
        return Err(Error::InvalidArgument(format!("field of view {} outside (0, pi)", cfg.fov_x)));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..cfg.views)
        .map(|i| {
            let z = 1.0 - i as f64 / cfg.views as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = cfg.phase + golden * i as f64;
            let eye = cfg.target + Vec3::new(r * phi.cos(), r * phi.sin(), z) * cfg.radius;
            Camera::look_at(eye, cfg.target, Vec3::Z, cfg.focal(), cfg.width, cfg.height)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub camera: Camera,
    pub image: Image,
    pub split: Split,
}

/// Posed RGB images sharing one resolution and focal length.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub background: [f64; 3],
    pub frames: Vec<Frame>,
}

pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    width: usize,
    height: usize,
    focal_px: f64,
    frames: Vec<ManifestFrame>,
    background: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFrame {
    file: String,
    transform: Vec<f64>,
    split: Split,
}

impl ImageDataset {
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.frames.iter().enumerate() {
            if f.image.width != self.width || f.image.height != self.height || f.image.channels != 3 {
                return Err(Error::InvalidArgument(format!("frame {i} is not a {}x{} RGB image", self.width, self.height)));
            }
            if f.camera.width != self.width || f.camera.height != self.height {
                return Err(Error::InvalidArgument(format!("camera of frame {i} has the wrong resolution")));
            }
            f.camera.validate()?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    /// Renders `cameras` with the reference marcher.
    pub fn render<F: RadianceField + ?Sized>(
        field: &F,
        cameras: &[(Camera, Split)],
        cfg: &RenderConfig,
        sampling: Sampling,
    ) -> Result<Self> {
        let first = cameras.first().ok_or_else(|| Error::InvalidArgument("no cameras".into()))?;
        let frames = cameras
            .iter()
            .map(|(camera, split)| {
                let image = render_reference(field, camera, cfg, sampling)?;
                Ok(Frame { camera: camera.clone(), image, split: *split })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = ImageDataset {
            width: first.0.width,
            height: first.0.height,
            focal: first.0.focal,
            background: cfg.background,
            frames,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes `manifest.json` and `images/####.png` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let names: Vec<String> = (0..self.frames.len()).map(|i| format!("images/{i:04}.png")).collect();
        self.frames.par_iter().zip(&names).try_for_each(|(f, name)| f.image.save_png(&dir.join(name)))?;
        let manifest = Manifest {
            version: DATASET_VERSION,
            width: self.width,
            height: self.height,
            focal_px: self.focal,
            frames: self
                .frames
                .iter()
                .zip(names)
                .map(|(f, file)| ManifestFrame { file, transform: f.camera.c2w.iter().flatten().copied().collect(), split: f.split })
                .collect(),
            background: self.background,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let format_err = |what: String| Error::Format { path: path.clone(), what };
        let m: Manifest = serde_json::from_str(&text).map_err(|e| format_err(e.to_string()))?;
        if m.version != DATASET_VERSION {
            return Err(format_err(format!("unsupported manifest version {}", m.version)));
        }
        let frames = m
            .frames
            .par_iter()
            .map(|f| {
                let file: PathBuf = dir.join(&f.file);
                if f.transform.len() != 16 {
                    return Err(format_err(format!("{}: transform needs 16 numbers", f.file)));
                }
                let mut c2w = [[0.0; 4]; 4];
                for (i, v) in f.transform.iter().enumerate() {
                    c2w[i / 4][i % 4] = *v;
                }
                let camera = Camera::new(c2w, m.focal_px, m.width, m.height)?;
                let img = image::open(&file)
                    .map_err(|e| match e {
                        image::ImageError::IoError(io) => Error::io(&file, io),
                        other => Error::Format { path: file.clone(), what: other.to_string() },
                    })?
                    .into_rgb8();
                if img.width() as usize != m.width || img.height() as usize != m.height {
                    return Err(Error::Format { path: file.clone(), what: format!("expected {}x{}", m.width, m.height) });
                }
                let image = Image::from_u8(m.width, m.height, 3, img.as_raw())?;
                Ok(Frame { camera, image, split: f.split })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = ImageDataset { width: m.width, height: m.height, focal: m.focal_px, background: m.background, frames };
        ds.validate()?;
        Ok(ds)
    }
}
