//! Forward volume rendering of segment sequences, plus whole-image renders
//! (color, alpha, expected depth) from pinhole cameras.
//!
//! Per ray the color is `sum_i w_i c_i + T_stop c_bg`, with
//! `w_i = T_i (1 - exp(-sigma_i delta_i))` and `T_i = exp(-sum_{j<i} sigma_j delta_j)`.
//! Compositing stops before the first segment whose incoming transmittance is
//! below `gamma`; the remaining weight is dropped, not renormalized.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Direction, SphericalBasis};
use crate::error::{Error, Result};
use crate::math::{sigmoid, Vec3};
use crate::octree::{LeafStore, PlenOctree, Ray, Segment, SegmentSequence};

/// Default early-termination threshold on transmittance.
pub const DEFAULT_GAMMA: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Background color `c_N`.
    pub background: [f64; 3],
    /// Stop once transmittance drops below this value; `0` disables.
    pub gamma: f64,
    /// Safety cap on composited segments per ray.
    pub max_segments: usize,
    pub near: f64,
    /// Far bound of every camera ray; also the depth reported for background.
    pub far: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self::white()
    }
}

impl RenderConfig {
    pub fn white() -> Self {
        Self { background: [1.0; 3], gamma: DEFAULT_GAMMA, max_segments: 1 << 16, near: 0.0, far: 1e3 }
    }

    pub fn black() -> Self {
        Self { background: [0.0; 3], ..Self::white() }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("background outside [0, 1]".into()));
        }
        if !(self.near >= 0.0 && self.far > self.near) {
            return Err(Error::InvalidArgument("need 0 <= near < far".into()));
        }
        Ok(())
    }
}

/// Result of compositing one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayOutput {
    pub color: [f64; 3],
    /// Transmittance at termination (`T_N` without early stop).
    pub transmittance: f64,
    /// `sum_i w_i` over composited segments.
    pub weight_sum: f64,
    /// `sum_i w_i * midpoint_i` over composited segments.
    pub weighted_depth: f64,
    /// Number of segments composited before stopping.
    pub used: usize,
}

impl RayOutput {
    pub fn alpha(&self) -> f64 {
        1.0 - self.transmittance
    }

    /// Expected depth with the leftover transmittance placed at `far`.
    pub fn depth(&self, far: f64) -> f64 {
        self.weighted_depth + self.transmittance * far
    }
}

/// Front-to-back compositing state of one ray.
pub struct Compositor<'a, S: ?Sized> {
    leaves: &'a S,
    basis_values: &'a [f64],
    cfg: &'a RenderConfig,
    ray_id: usize,
    out: RayOutput,
}

impl<'a, S: LeafStore + ?Sized> Compositor<'a, S> {
    pub fn new(leaves: &'a S, basis_values: &'a [f64], cfg: &'a RenderConfig, ray_id: usize) -> Self {
        let out = RayOutput { color: [0.0; 3], transmittance: 1.0, weight_sum: 0.0, weighted_depth: 0.0, used: 0 };
        Self { leaves, basis_values, cfg, ray_id, out }
    }

    /// Whether compositing has stopped; further segments would be ignored.
    #[inline]
    pub fn done(&self) -> bool {
        self.out.used >= self.cfg.max_segments || self.out.transmittance < self.cfg.gamma
    }

    /// Adds the next segment; returns `Ok(false)` once compositing has stopped.
    #[inline]
    pub fn push(&mut self, seg: &Segment) -> Result<bool> {
        if self.done() {
            return Ok(false);
        }
        let raw = self.leaves.raw_density(seg.leaf);
        if !raw.is_finite() {
            return Err(Error::RayNumeric { ray: self.ray_id, what: format!("density of leaf {}", seg.leaf) });
        }
        let sigma = raw.max(0.0);
        let att = (-sigma * seg.delta()).exp();
        let w = self.out.transmittance * (1.0 - att);
        if w > 0.0 {
            let z = self.leaves.logits(seg.leaf, self.basis_values);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::RayNumeric { ray: self.ray_id, what: format!("coefficients of leaf {}", seg.leaf) });
            }
            for c in 0..3 {
                self.out.color[c] += w * sigmoid(z[c]);
            }
        }
        self.out.weight_sum += w;
        self.out.weighted_depth += w * seg.midpoint();
        self.out.transmittance *= att;
        self.out.used += 1;
        Ok(true)
    }

    /// Adds the background seen through the remaining transmittance.
    pub fn finish(mut self) -> RayOutput {
        for c in 0..3 {
            self.out.color[c] += self.out.transmittance * self.cfg.background[c];
        }
        self.out
    }
}

/// Composites `segments` with per-ray basis values `basis_values`.
pub fn render_segments<S: LeafStore + ?Sized>(
    segments: &[Segment],
    leaves: &S,
    basis_values: &[f64],
    cfg: &RenderConfig,
    ray_id: usize,
) -> Result<RayOutput> {
    let mut comp = Compositor::new(leaves, basis_values, cfg, ray_id);
    for seg in segments {
        if !comp.push(seg)? {
            break;
        }
    }
    Ok(comp.finish())
}

/// Traverses and composites one ray of `tree`, stopping the traversal as soon
/// as compositing stops.
pub fn trace_ray(tree: &PlenOctree, ray: &Ray, basis_values: &[f64], cfg: &RenderConfig, ray_id: usize) -> Result<RayOutput> {
    let mut comp = Compositor::new(&tree.leaves, basis_values, cfg, ray_id);
    let mut status = Ok(());
    tree.traverse(ray, |seg| match comp.push(&seg) {
        Ok(more) => more && !comp.done(),
        Err(e) => {
            status = Err(e);
            false
        }
    });
    status.map(|_| comp.finish())
}

/// Renders one ray's segments given its direction.
pub fn render_ray<S: LeafStore + ?Sized>(
    segments: &SegmentSequence,
    leaves: &S,
    basis: &SphericalBasis,
    dir: Direction,
    cfg: &RenderConfig,
) -> Result<RayOutput> {
    let y = basis.eval(dir);
    render_segments(&segments.segments, leaves, &y, cfg, 0)
}

/// Pinhole camera, OpenGL convention: looks down `-z`, `+y` up in camera space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Row-major 4x4 camera-to-world transform.
    pub c2w: [[f64; 4]; 4],
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(c2w: [[f64; 4]; 4], focal: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { c2w, focal, cx: width as f64 / 2.0, cy: height as f64 / 2.0, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::InvalidArgument(format!("focal length {} must be positive", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be nonzero".into()));
        }
        if self.c2w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera pose".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.c2w[k][i] * self.c2w[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::InvalidArgument("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let back = (eye - target).normalized();
        let mut right = up.cross(back);
        if right.norm() < 1e-9 {
            // `up` parallel to the view axis
            right = if back.x.abs() < 0.9 { Vec3::X.cross(back) } else { Vec3::Y.cross(back) };
        }
        let right = right.normalized();
        let true_up = back.cross(right);
        let c2w = [
            [right.x, true_up.x, back.x, eye.x],
            [right.y, true_up.y, back.y, eye.y],
            [right.z, true_up.z, back.z, eye.z],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Self::new(c2w, focal, width, height)
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.c2w[0][3], self.c2w[1][3], self.c2w[2][3])
    }

    /// Optical axis (`-z` of the camera frame) in world space.
    pub fn forward(&self) -> Vec3 {
        -Vec3::new(self.c2w[0][2], self.c2w[1][2], self.c2w[2][2])
    }

    fn rotate(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.c2w[0][0] * v.x + self.c2w[0][1] * v.y + self.c2w[0][2] * v.z,
            self.c2w[1][0] * v.x + self.c2w[1][1] * v.y + self.c2w[1][2] * v.z,
            self.c2w[2][0] * v.x + self.c2w[2][1] * v.y + self.c2w[2][2] * v.z,
        )
    }

    /// Ray through the center of pixel `(x, y)`; `y` grows downwards.
    pub fn pixel_ray(&self, x: usize, y: usize, near: f64, far: f64) -> Ray {
        self.ray_at(x as f64 + 0.5, y as f64 + 0.5, near, far)
    }

    /// Ray through continuous image coordinates `(u, v)`.
    pub fn ray_at(&self, u: f64, v: f64, near: f64, far: f64) -> Ray {
        let d_cam = Vec3::new((u - self.cx) / self.focal, -(v - self.cy) / self.focal, -1.0);
        let dir = Direction::new_unchecked(self.rotate(d_cam).normalized());
        Ray { origin: self.position(), dir, t_near: near, t_far: far }
    }

    /// Projects a world point to image coordinates, if in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let rel = p - self.position();
        let x = Vec3::new(self.c2w[0][0], self.c2w[1][0], self.c2w[2][0]).dot(rel);
        let y = Vec3::new(self.c2w[0][1], self.c2w[1][1], self.c2w[2][1]).dot(rel);
        let z = Vec3::new(self.c2w[0][2], self.c2w[1][2], self.c2w[2][2]).dot(rel);
        (z < 0.0).then(|| (self.cx + self.focal * x / -z, self.cy - self.focal * y / -z))
    }
}

/// Row-major image with `channels` interleaved f32 values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// 8-bit quantization `round(clamp(v, 0, 1) * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * channels {
            return Err(Error::LengthMismatch { expected: width * height * channels, actual: bytes.len() });
        }
        Ok(Self { width, height, channels, data: bytes.iter().map(|&b| b as f32 / 255.0).collect() })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::InvalidArgument(format!("cannot write {c}-channel PNG"))),
        };
        image::save_buffer(path, &self.to_u8(), self.width as u32, self.height as u32, color).map_err(|e| {
            Error::Format { path: path.to_path_buf(), what: e.to_string() }
        })
    }

    /// Writes the raw little-endian f32 samples, `height x width x channels`.
    pub fn save_raw_f32(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for v in &self.data {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Segments of `ray` up to the point where compositing with `cfg` stops.
/// Compositing them gives the same output as compositing the full sequence.
pub fn extract_until_opaque(tree: &PlenOctree, ray: &Ray, cfg: &RenderConfig, out: &mut Vec<Segment>) {
    out.clear();
    // Colors do not affect where compositing stops; empty basis values keep
    // the color evaluation trivial.
    let densities = DensityOnly(&tree.leaves);
    let mut comp = Compositor::new(&densities, &[], cfg, 0);
    tree.traverse(ray, |seg| {
        out.push(seg);
        matches!(comp.push(&seg), Ok(true)) && !comp.done()
    });
}

struct DensityOnly<'a, S>(&'a S);

impl<S: LeafStore> LeafStore for DensityOnly<'_, S> {
    #[inline]
    fn raw_density(&self, leaf: u32) -> f64 {
        self.0.raw_density(leaf)
    }

    #[inline]
    fn logits(&self, _: u32, _: &[f64]) -> [f64; 3] {
        [0.0; 3]
    }
}

/// Renders every pixel of `cam` in parallel rows; `init` builds per-worker
/// scratch state handed to `f(scratch, pixel_index, ray, out)`.
pub(crate) fn map_pixels<S, I, F>(cam: &Camera, channels: usize, cfg: &RenderConfig, init: I, f: F) -> Result<Image>
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &Ray, &mut [f32]) -> Result<()> + Sync + Send,
{
    cam.validate()?;
    cfg.validate()?;
    let mut img = Image::new(cam.width, cam.height, channels);
    let row_len = cam.width * channels;
    img.data.par_chunks_mut(row_len).enumerate().try_for_each_init(init, |scratch, (y, row)| {
        for x in 0..cam.width {
            let ray = cam.pixel_ray(x, y, cfg.near, cfg.far);
            f(scratch, y * cam.width + x, &ray, &mut row[x * channels..(x + 1) * channels])
                .map_err(|e| Error::Pixel { x, y, source: Box::new(e) })?;
        }
        Ok::<(), Error>(())
    })?;
    Ok(img)
}

fn trace(tree: &PlenOctree, cam: &Camera, cfg: &RenderConfig, channels: usize, write: impl Fn(&RayOutput, &mut [f32]) + Sync + Send) -> Result<Image> {
    let basis_len = tree.basis.size();
    map_pixels(
        cam,
        channels,
        cfg,
        || vec![0.0; basis_len],
        |y, id, ray, out| {
            tree.basis.eval_into(ray.dir, y);
            let r = trace_ray(tree, ray, y, cfg, id)?;
            write(&r, out);
            Ok(())
        },
    )
}

/// Renders the tree through every pixel center.
pub fn render_image(tree: &PlenOctree, cam: &Camera, cfg: &RenderConfig) -> Result<Image> {
    trace(tree, cam, cfg, 3, |r, out| {
        for c in 0..3 {
            out[c] = r.color[c] as f32;
        }
    })
}

/// Accumulated opacity `1 - T` per pixel.
pub fn render_alpha(tree: &PlenOctree, cam: &Camera, cfg: &RenderConfig) -> Result<Image> {
    trace(tree, cam, cfg, 1, |r, out| out[0] = r.alpha() as f32)
}

/// Expected segment-midpoint depth; leftover transmittance sits at `cfg.far`.
pub fn render_depth(tree: &PlenOctree, cam: &Camera, cfg: &RenderConfig) -> Result<Image> {
    let far = cfg.far;
    trace(tree, cam, cfg, 1, move |r, out| out[0] = r.depth(far) as f32)
}

/// Color, alpha and depth from one traversal per pixel.
pub fn render_all(tree: &PlenOctree, cam: &Camera, cfg: &RenderConfig) -> Result<(Image, Image, Image)> {
    let far = cfg.far;
    let packed = trace(tree, cam, cfg, 5, move |r, out| {
        for c in 0..3 {
            out[c] = r.color[c] as f32;
        }
        out[3] = r.alpha() as f32;
        out[4] = r.depth(far) as f32;
    })?;
    let split = |range: std::ops::Range<usize>| Image {
        width: packed.width,
        height: packed.height,
        channels: range.len(),
        data: packed.data.chunks_exact(5).flat_map(|p| p[range.clone()].to_vec()).collect(),
    };
    Ok((split(0..3), split(3..4), split(4..5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::{BoundingBox, LeafValues};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(parts: &[(f64, f64, u32)]) -> Vec<Segment> {
        parts.iter().map(|&(a, b, leaf)| Segment { t_enter: a, t_exit: b, leaf }).collect()
    }

    fn basis0() -> (SphericalBasis, Vec<f64>) {
        let b = SphericalBasis::Sh { degree: 0 };
        let y = b.eval(Direction::new(Vec3::Z).unwrap());
        (b, y)
    }

    /// Coefficients whose degree-0 color is exactly `rgb` (up to logit precision).
    fn coeffs_for(rgb: [f64; 3]) -> Vec<f64> {
        let y0 = 0.28209479177387814;
        rgb.iter().map(|&c| crate::math::logit(c) / y0).collect()
    }

    #[test]
    fn empty_sequence_is_background() {
        let (_, y) = basis0();
        let leaves = LeafValues::<f64>::new(3);
        let cfg = RenderConfig::white();
        let r = render_segments(&[], &leaves, &y, &cfg, 0).unwrap();
        assert_eq!(r.color, [1.0; 3]);
        assert_eq!(r.transmittance, 1.0);
    }

    #[test]
    fn half_absorbing_segment() {
        let (_, y) = basis0();
        let mut leaves = LeafValues::<f64>::new(3);
        // Red saturates to 1 - 1e-12, green and blue to ~0.
        leaves.push(2.0f64.ln(), &[60.0 / 0.28209479177387814, -60.0 / 0.28209479177387814, -60.0 / 0.28209479177387814]);
        let cfg = RenderConfig::black().with_gamma(0.0);
        let r = render_segments(&seq(&[(0.0, 1.0, 0)]), &leaves, &y, &cfg, 0).unwrap();
        assert!((r.color[0] - 0.5).abs() < 1e-12);
        assert!(r.color[1].abs() < 1e-12 && r.color[2].abs() < 1e-12);
        assert!((r.transmittance - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nan_density_reports_ray() {
        let (_, y) = basis0();
        let mut leaves = LeafValues::<f64>::new(3);
        leaves.push(f64::NAN, &[0.0; 3]);
        let err = render_segments(&seq(&[(0.0, 1.0, 0)]), &leaves, &y, &RenderConfig::white(), 42).unwrap_err();
        assert!(matches!(err, Error::RayNumeric { ray: 42, .. }));
    }

    #[test]
    fn negative_raw_density_is_transparent() {
        let (_, y) = basis0();
        let mut leaves = LeafValues::<f64>::new(3);
        leaves.push(-3.0, &coeffs_for([0.2, 0.3, 0.4]));
        let r = render_segments(&seq(&[(0.0, 1.0, 0)]), &leaves, &y, &RenderConfig::black(), 0).unwrap();
        assert_eq!(r.transmittance, 1.0);
        assert_eq!(r.color, [0.0; 3]);
    }

    fn random_ray(rng: &mut ChaCha8Rng, leaves: &mut LeafValues<f64>) -> Vec<Segment> {
        let n = rng.random_range(1..40);
        let mut t = rng.random_range(0.0..1.0);
        let mut out = Vec::new();
        for _ in 0..n {
            t += rng.random_range(0.0..0.3);
            let d = rng.random_range(0.01..0.5);
            let id = leaves.push(rng.random_range(-1.0..8.0), &[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            out.push(Segment { t_enter: t, t_exit: t + d, leaf: id });
            t += d;
        }
        out
    }

    #[test]
    fn weights_telescope_and_splitting_is_invariant() {
        let (_, y) = basis0();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = RenderConfig::white().with_gamma(0.0);
        for _ in 0..500 {
            let mut leaves = LeafValues::<f64>::new(3);
            let segs = random_ray(&mut rng, &mut leaves);
            let r = render_segments(&segs, &leaves, &y, &cfg, 0).unwrap();
            assert!((r.transmittance + r.weight_sum - 1.0).abs() < 1e-6);

            let i = rng.random_range(0..segs.len());
            let s = segs[i];
            let cut = s.t_enter + rng.random_range(0.1..0.9) * s.delta();
            let mut split = segs.clone();
            split.splice(i..=i, [Segment { t_exit: cut, ..s }, Segment { t_enter: cut, ..s }]);
            let r2 = render_segments(&split, &leaves, &y, &cfg, 0).unwrap();
            for c in 0..3 {
                assert!((r.color[c] - r2.color[c]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn increasing_density_never_raises_transmittance() {
        let (_, y) = basis0();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = RenderConfig::white().with_gamma(0.0);
        for _ in 0..200 {
            let mut leaves = LeafValues::<f64>::new(3);
            let segs = random_ray(&mut rng, &mut leaves);
            let before = render_segments(&segs, &leaves, &y, &cfg, 0).unwrap().transmittance;
            let leaf = segs[rng.random_range(0..segs.len())].leaf as usize;
            leaves.density[leaf] += rng.random_range(0.0..5.0);
            let after = render_segments(&segs, &leaves, &y, &cfg, 0).unwrap().transmittance;
            assert!(after <= before);
        }
    }

    #[test]
    fn early_stop_error_bounded_by_gamma() {
        let (_, y) = basis0();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let mut leaves = LeafValues::<f64>::new(3);
            let segs = random_ray(&mut rng, &mut leaves);
            let full = render_segments(&segs, &leaves, &y, &RenderConfig::white().with_gamma(0.0), 0).unwrap();
            let cut = render_segments(&segs, &leaves, &y, &RenderConfig::white().with_gamma(0.01), 0).unwrap();
            for c in 0..3 {
                assert!((full.color[c] - cut.color[c]).abs() <= 0.01);
            }
        }
    }

    #[test]
    fn camera_look_at_centers_target() {
        let cam = Camera::look_at(Vec3::new(3.0, 1.0, 2.0), Vec3::new(0.1, 0.2, 0.3), Vec3::Z, 100.0, 64, 48).unwrap();
        let (u, v) = cam.project(Vec3::new(0.1, 0.2, 0.3)).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 24.0).abs() < 1e-9);
        let r = cam.ray_at(u, v, 0.0, 10.0);
        assert!((r.dir.vec().dot(cam.forward()) - 1.0).abs() < 1e-12);
        assert!(Camera::new([[2.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0; 4]], 10.0, 4, 4).is_err());
        assert!(Camera::look_at(Vec3::Z * 3.0, Vec3::ZERO, Vec3::Z, 10.0, 4, 4).is_ok());
    }

    #[test]
    fn empty_tree_renders_background_everywhere() {
        let bbox = BoundingBox::cube(Vec3::ZERO, 2.0).unwrap();
        let tree = PlenOctree::empty(bbox, 3, SphericalBasis::Sh { degree: 1 }).unwrap();
        let cam = Camera::look_at(Vec3::new(0.0, -4.0, 1.0), Vec3::ZERO, Vec3::Z, 20.0, 16, 12).unwrap();
        let cfg = RenderConfig { background: [0.2, 0.4, 0.6], ..RenderConfig::white() };
        let img = render_image(&tree, &cam, &cfg).unwrap();
        for p in img.data.chunks(3) {
            assert_eq!(p, [0.2f32, 0.4, 0.6]);
        }
        assert!(render_alpha(&tree, &cam, &cfg).unwrap().data.iter().all(|&a| a == 0.0));
        assert!(render_depth(&tree, &cam, &cfg).unwrap().data.iter().all(|&d| d == cfg.far as f32));
    }

    #[test]
    fn quantization_rounds() {
        assert_eq!(quantize_u8(-0.5), 0);
        assert_eq!(quantize_u8(1.5), 255);
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(1.0 / 255.0 * 3.4), 3);
    }
}
