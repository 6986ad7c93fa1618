//! Render timing for octrees and for brute-force field marching.
//!
//! Each measurement renders every camera once to warm up, then `repetitions`
//! more times; the reported time per frame is the median over repetitions.

use std::time::Instant;

use serde::Serialize;

use crate::convert::RadianceField;
use crate::error::{Error, Result};
use crate::octree::PlenOctree;
use crate::renderer::{map_pixels, render_image, render_segments, Camera, RenderConfig};
use crate::scenes::{render_reference, Sampling};

/// Number of power-of-two buckets in the segment histogram.
pub const HISTOGRAM_BUCKETS: usize = 17;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub pixels_per_frame: usize,
    /// Median seconds per frame.
    pub seconds_per_frame: f64,
    pub fps: f64,
    pub rays_per_second: f64,
    /// Bucket `0` counts rays with no composited segment; bucket `b > 0`
    /// counts `[2^(b-1), 2^b)` segments.
    pub segments_histogram: Vec<u64>,
    pub mean_segments: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_frames(cams: &[Camera], repetitions: usize, mut render: impl FnMut(&Camera) -> Result<()>) -> Result<f64> {
    if cams.is_empty() || repetitions == 0 {
        return Err(Error::InvalidArgument("benchmark needs cameras and at least one repetition".into()));
    }
    for cam in cams {
        render(cam)?;
    }
    let mut per_frame = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for cam in cams {
            render(cam)?;
        }
        per_frame.push(start.elapsed().as_secs_f64() / cams.len() as f64);
    }
    Ok(median(per_frame))
}

fn report(cams: &[Camera], seconds_per_frame: f64, (histogram, total): (Vec<u64>, u64)) -> BenchReport {
    let pixels = cams.iter().map(|c| c.width * c.height).sum::<usize>() / cams.len();
    let rays: u64 = histogram.iter().sum();
    BenchReport {
        frames: cams.len(),
        pixels_per_frame: pixels,
        seconds_per_frame,
        fps: 1.0 / seconds_per_frame,
        rays_per_second: pixels as f64 / seconds_per_frame,
        mean_segments: if rays == 0 { 0.0 } else { total as f64 / rays as f64 },
        segments_histogram: histogram,
    }
}

fn bucket(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        ((usize::BITS - n.leading_zeros()) as usize).min(HISTOGRAM_BUCKETS - 1)
    }
}

/// Histogram and total of composited segments per ray over all cameras.
pub fn segment_histogram(tree: &PlenOctree, cams: &[Camera], cfg: &RenderConfig) -> Result<(Vec<u64>, u64)> {
    let mut hist = vec![0u64; HISTOGRAM_BUCKETS];
    let mut total = 0u64;
    let basis_len = tree.basis.size();
    for cam in cams {
        let img = map_pixels(
            cam,
            1,
            cfg,
            || (Vec::new(), vec![0.0; basis_len]),
            |(segments, y), id, ray, out| {
                crate::renderer::extract_until_opaque(tree, ray, cfg, segments);
                tree.basis.eval_into(ray.dir, y);
                out[0] = render_segments(segments, &tree.leaves, y, cfg, id)?.used as f32;
                Ok(())
            },
        )?;
        for &n in &img.data {
            hist[bucket(n as usize)] += 1;
            total += n as u64;
        }
    }
    Ok((hist, total))
}

/// Times full-frame octree renders.
pub fn bench_octree(tree: &PlenOctree, cams: &[Camera], cfg: &RenderConfig, repetitions: usize) -> Result<BenchReport> {
    let spf = time_frames(cams, repetitions, |cam| render_image(tree, cam, cfg).map(|_| ()))?;
    Ok(report(cams, spf, segment_histogram(tree, cams, cfg)?))
}

/// Times brute-force marching of a field with `samples` evaluations per ray.
pub fn bench_reference<F: RadianceField + ?Sized>(
    field: &F,
    cams: &[Camera],
    cfg: &RenderConfig,
    samples: usize,
    repetitions: usize,
) -> Result<BenchReport> {
    let spf = time_frames(cams, repetitions, |cam| render_reference(field, cam, cfg, Sampling::Uniform(samples)).map(|_| ()))?;
    let rays = cams.iter().map(|c| (c.width * c.height) as u64).sum();
    let mut hist = vec![0u64; HISTOGRAM_BUCKETS];
    hist[bucket(samples)] = rays;
    Ok(report(cams, spf, (hist, rays * samples as u64)))
}
