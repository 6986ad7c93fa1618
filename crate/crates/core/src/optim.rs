//! Fine-tuning of leaf values on posed images with plain SGD, plus PSNR.
//!
//! Each batch renders its rays in parallel, backpropagates the squared RGB
//! error through [`crate::autodiff::backward_ray`], and applies one update.
//! Rays are split into fixed chunks whose gradients are summed in ray order
//! and then merged in chunk order, so results do not depend on the thread
//! count. The tree topology is never changed.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward_ray, RayGradient};
use crate::error::{Error, Result};
use crate::octree::{LeafValues, PlenOctree, Scalar};
use crate::renderer::{extract_until_opaque, render_segments, Image, RenderConfig};
use crate::scenes::{ImageDataset, Split};

/// Rays per deterministic reduction chunk.
const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    /// `sum over batch and channels of squared error`.
    Sum,
    /// The sum divided by `3 * batch`.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Rays per SGD step.
    pub batch: usize,
    /// Share of training pixels held out for validation when the dataset has
    /// no frames tagged `val`.
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub loss: LossNorm,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { lr: 1e7, epochs: 80, batch: 4096, val_fraction: 0.1, patience: 3, loss: LossNorm::Sum, seed: 0 }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// `0` is the evaluation before any update.
    pub epoch: usize,
    /// Mean squared error per channel over the epoch's training rays.
    pub train_loss: f64,
    pub val_psnr: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    Diverged { epoch: usize },
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Snapshot with the best validation PSNR.
    pub tree: PlenOctree,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

impl FinetuneOutcome {
    /// The log as line-delimited JSON.
    pub fn log_lines(&self) -> String {
        self.log.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }
}

/// Peak signal-to-noise ratio for values in `[0, 1]`; `+inf` when identical.
pub fn psnr(image: &Image, reference: &Image) -> Result<f64> {
    if (image.width, image.height, image.channels) != (reference.width, reference.height, reference.channels) {
        return Err(Error::InvalidArgument(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            image.width, image.height, image.channels, reference.width, reference.height, reference.channels
        )));
    }
    psnr_values(&image.data, &reference.data)
}

pub fn psnr_values(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: b.len(), actual: a.len() });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("PSNR of empty images".into()));
    }
    let se: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    Ok(psnr_from_mse(se / a.len() as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// `values -= lr * grad` for the entries of one ray gradient.
pub fn apply_ray_gradient<T: Scalar>(values: &mut LeafValues<T>, grad: &RayGradient, lr: f64) {
    for (e, &leaf) in grad.leaves.iter().enumerate() {
        let i = leaf as usize;
        values.density[i] = T::from_f64(values.density[i].into() - lr * grad.density[e]);
        for (v, g) in values.coeffs_of_mut(leaf).iter_mut().zip(grad.coeffs_of(e)) {
            *v = T::from_f64((*v).into() - lr * g);
        }
    }
}

/// A pixel of a frame with its target color.
#[derive(Clone, Copy, Debug)]
struct Sample {
    frame: u32,
    pixel: u32,
}

struct Prepared<'a> {
    dataset: &'a ImageDataset,
    frames: Vec<usize>,
}

impl Prepared<'_> {
    fn target(&self, s: Sample) -> [f64; 3] {
        let img = &self.dataset.frames[self.frames[s.frame as usize]].image;
        let p = &img.data[s.pixel as usize * 3..s.pixel as usize * 3 + 3];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    fn ray(&self, s: Sample, cfg: &RenderConfig) -> crate::octree::Ray {
        let cam = &self.dataset.frames[self.frames[s.frame as usize]].camera;
        let (x, y) = (s.pixel as usize % cam.width, s.pixel as usize / cam.width);
        cam.pixel_ray(x, y, cfg.near, cfg.far)
    }
}

struct Scratch {
    segments: Vec<crate::octree::Segment>,
    basis_values: Vec<f64>,
    grad: RayGradient,
}

/// Sparse per-chunk gradient accumulator.
#[derive(Default)]
struct ChunkGrad {
    slot: HashMap<u32, usize>,
    leaves: Vec<u32>,
    values: Vec<f64>,
    loss: f64,
}

fn squared_error(tree: &PlenOctree, prep: &Prepared, samples: &[Sample], cfg: &RenderConfig) -> Result<f64> {
    let per_chunk: Vec<f64> = samples
        .par_chunks(CHUNK)
        .map_init(
            || (Vec::new(), vec![0.0; tree.basis.size()]),
            |(segments, y), chunk| {
                let mut se = 0.0;
                for &s in chunk {
                    let ray = prep.ray(s, cfg);
                    extract_until_opaque(tree, &ray, cfg, segments);
                    tree.basis.eval_into(ray.dir, y);
                    let out = render_segments(segments, &tree.leaves, y, cfg, s.pixel as usize)?;
                    let t = prep.target(s);
                    se += (0..3).map(|c| (out.color[c] - t[c]).powi(2)).sum::<f64>();
                }
                Ok(se)
            },
        )
        .collect::<Result<_>>()?;
    Ok(per_chunk.iter().sum())
}

fn batch_gradient(tree: &PlenOctree, prep: &Prepared, batch: &[Sample], cfg: &RenderConfig, scale: f64) -> Result<Vec<ChunkGrad>> {
    let coeff_len = tree.leaves.coeff_len();
    let stride = 1 + coeff_len;
    batch
        .par_chunks(CHUNK)
        .map_init(
            || Scratch { segments: Vec::new(), basis_values: vec![0.0; tree.basis.size()], grad: RayGradient::new(coeff_len) },
            |sc, chunk| {
                let mut acc = ChunkGrad::default();
                for &s in chunk {
                    let ray = prep.ray(s, cfg);
                    extract_until_opaque(tree, &ray, cfg, &mut sc.segments);
                    tree.basis.eval_into(ray.dir, &mut sc.basis_values);
                    let out = render_segments(&sc.segments, &tree.leaves, &sc.basis_values, cfg, s.pixel as usize)?;
                    let t = prep.target(s);
                    let diff = [0, 1, 2].map(|c| out.color[c] - t[c]);
                    acc.loss += diff.iter().map(|d| d * d).sum::<f64>();
                    let dl_dc = diff.map(|d| 2.0 * d * scale);
                    backward_ray(&sc.segments, &tree.leaves, &sc.basis_values, cfg, &out, dl_dc, &mut sc.grad)?;
                    for (e, &leaf) in sc.grad.leaves.iter().enumerate() {
                        let next = acc.leaves.len();
                        let slot = *acc.slot.entry(leaf).or_insert_with(|| {
                            acc.leaves.push(leaf);
                            acc.values.extend(std::iter::repeat_n(0.0, stride));
                            next
                        });
                        let dst = &mut acc.values[slot * stride..(slot + 1) * stride];
                        dst[0] += sc.grad.density[e];
                        for (d, g) in dst[1..].iter_mut().zip(sc.grad.coeffs_of(e)) {
                            *d += g;
                        }
                    }
                }
                Ok(acc)
            },
        )
        .collect()
}

/// Applies summed chunk gradients; returns false if any value became non-finite.
fn sgd_update(leaves: &mut LeafValues<f32>, chunks: &[ChunkGrad], lr: f64, total: &mut Vec<f64>, touched: &mut Vec<u32>, seen: &mut [bool]) -> bool {
    let coeff_len = leaves.coeff_len();
    let stride = 1 + coeff_len;
    touched.clear();
    for chunk in chunks {
        for (slot, &leaf) in chunk.leaves.iter().enumerate() {
            let i = leaf as usize;
            if !seen[i] {
                seen[i] = true;
                touched.push(leaf);
                total[i * stride..(i + 1) * stride].fill(0.0);
            }
            for (d, g) in total[i * stride..(i + 1) * stride].iter_mut().zip(&chunk.values[slot * stride..(slot + 1) * stride]) {
                *d += g;
            }
        }
    }
    let mut finite = true;
    for &leaf in touched.iter() {
        let i = leaf as usize;
        seen[i] = false;
        let g = &total[i * stride..(i + 1) * stride];
        let d = (leaves.density[i] as f64 - lr * g[0]) as f32;
        leaves.density[i] = d;
        finite &= d.is_finite();
        for (v, gk) in leaves.coeffs_of_mut(leaf).iter_mut().zip(&g[1..]) {
            *v = (*v as f64 - lr * gk) as f32;
            finite &= v.is_finite();
        }
    }
    finite
}

/// Fine-tunes leaf values of `tree` on the training frames of `dataset`.
///
/// `render` must match the dataset (background, gamma). Validation uses
/// frames tagged [`Split::Val`] when present, otherwise a held-out share of
/// training pixels. Divergence stops training and returns the best snapshot
/// with [`StopReason::Diverged`].
pub fn finetune(tree: &PlenOctree, dataset: &ImageDataset, render: &RenderConfig, cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    render.validate()?;
    dataset.validate()?;
    let start = Instant::now();
    let train_frames: Vec<usize> = (0..dataset.frames.len()).filter(|&i| dataset.frames[i].split == Split::Train).collect();
    let val_frames: Vec<usize> = (0..dataset.frames.len()).filter(|&i| dataset.frames[i].split == Split::Val).collect();
    if train_frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut frames = train_frames.clone();
    frames.extend(&val_frames);
    let prep = Prepared { dataset, frames };
    let pixels = dataset.width * dataset.height;
    let samples_of = |range: std::ops::Range<usize>| -> Vec<Sample> {
        range.flat_map(|f| (0..pixels).map(move |p| Sample { frame: f as u32, pixel: p as u32 })).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = samples_of(0..train_frames.len());
    let val = if val_frames.is_empty() {
        train.shuffle(&mut rng);
        let n_val = (train.len() as f64 * cfg.val_fraction).round() as usize;
        let val = train.split_off(train.len() - n_val);
        val
    } else {
        samples_of(train_frames.len()..prep.frames.len())
    };
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut work = tree.clone();
    let val_psnr = |t: &PlenOctree| -> Result<f64> {
        if val.is_empty() {
            return Ok(f64::NAN);
        }
        Ok(psnr_from_mse(squared_error(t, &prep, &val, render)? / (3 * val.len()) as f64))
    };
    let initial_train = squared_error(&work, &prep, &train, render)? / (3 * train.len()) as f64;
    let mut best_psnr = val_psnr(&work)?;
    let mut log = vec![EpochRecord { epoch: 0, train_loss: initial_train, val_psnr: best_psnr, wall_time_s: start.elapsed().as_secs_f64() }];
    log::info!("epoch 0: train mse {initial_train:.6e}, val psnr {best_psnr:.3}");
    let mut best = work.clone();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut stop = StopReason::MaxEpochs;

    let stride = 1 + work.leaves.coeff_len();
    let mut total = vec![0.0f64; work.leaf_count() * stride];
    let mut seen = vec![false; work.leaf_count()];
    let mut touched = Vec::new();
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut finite = true;
        for batch in train.chunks(cfg.batch) {
            let scale = match cfg.loss {
                LossNorm::Sum => 1.0,
                LossNorm::Mean => 1.0 / (3 * batch.len()) as f64,
            };
            let chunks = match batch_gradient(&work, &prep, batch, render, scale) {
                Ok(c) => c,
                Err(Error::RayNumeric { .. }) => {
                    finite = false;
                    break;
                }
                Err(e) => return Err(e),
            };
            loss += chunks.iter().map(|c| c.loss).sum::<f64>();
            if !sgd_update(&mut work.leaves, &chunks, cfg.lr, &mut total, &mut touched, &mut seen) || !loss.is_finite() {
                finite = false;
                break;
            }
        }
        let train_loss = loss / (3 * train.len()) as f64;
        let psnr = if finite { val_psnr(&work)? } else { f64::NAN };
        log.push(EpochRecord { epoch, train_loss, val_psnr: psnr, wall_time_s: start.elapsed().as_secs_f64() });
        log::info!("epoch {epoch}: train mse {train_loss:.6e}, val psnr {psnr:.3}");
        if !finite || psnr.is_nan() && !val.is_empty() {
            log::warn!("fine-tuning diverged at epoch {epoch}");
            stop = StopReason::Diverged { epoch };
            break;
        }
        if psnr > best_psnr || val.is_empty() {
            best_psnr = psnr;
            best = work.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }
    Ok(FinetuneOutcome { tree: best, log, best_epoch, stop })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let a = Image { width: 2, height: 1, channels: 3, data: vec![0.0; 6] };
        let b = Image { width: 2, height: 1, channels: 3, data: vec![1.0; 6] };
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr(&a, &b).unwrap() - 0.0).abs() < 1e-12);
        let c = Image { width: 2, height: 1, channels: 3, data: vec![0.1; 6] };
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-5);
        let d = Image { width: 1, height: 2, channels: 3, data: vec![0.0; 6] };
        assert!(psnr(&a, &d).is_err());
    }

    #[test]
    fn config_checks() {
        assert!(FinetuneConfig::default().validate().is_ok());
        assert!(FinetuneConfig { val_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(FinetuneConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert_eq!(FinetuneConfig::default().lr, 1e7);
        assert_eq!(FinetuneConfig::default().epochs, 80);
    }
}
