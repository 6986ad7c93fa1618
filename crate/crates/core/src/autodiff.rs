//! Analytic derivatives of the piecewise-constant rendering model.
//!
//! For a ray with weights `w_i`, colors `c_i` and background `c_N`:
//!
//! ```text
//! dC/dc_i     = w_i
//! dC/dsigma_i = delta_i * (c_i * T_{i+1} - sum_{k>i} w_k c_k)      (k runs to N)
//! ```
//!
//! The forward render supplies `sum_{k<=N} w_k c_k`; the backward pass walks
//! the ray once more and subtracts the running prefix, so auxiliary memory
//! per ray is constant. Colors are `sigmoid(sum_b k_b Y_b)`, chained through
//! at the segment-color level. Leaves store a pre-activation density and the
//! effective density is `max(raw, 0)`, so raw densities `<= 0` get a zero
//! density gradient.

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::octree::{LeafStore, Segment};
use crate::renderer::{RayOutput, RenderConfig};

/// Gradients of one ray, one entry per composited segment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayGradient {
    pub coeff_len: usize,
    pub leaves: Vec<u32>,
    /// dL / d(raw density)
    pub density: Vec<f64>,
    /// dL / d(coefficients), `coeff_len` values per entry.
    pub coeffs: Vec<f64>,
}

impl RayGradient {
    pub fn new(coeff_len: usize) -> Self {
        Self { coeff_len, ..Default::default() }
    }

    pub fn clear(&mut self) {
        self.leaves.clear();
        self.density.clear();
        self.coeffs.clear();
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn coeffs_of(&self, entry: usize) -> &[f64] {
        &self.coeffs[entry * self.coeff_len..(entry + 1) * self.coeff_len]
    }
}

/// Backward pass for one ray.
///
/// `forward` must be the [`crate::renderer::render_segments`] output for the
/// same segments, leaves, basis values and config. Segments after early
/// termination get no entry (their gradient is zero).
pub fn backward_ray<S: LeafStore + ?Sized>(
    segments: &[Segment],
    leaves: &S,
    basis_values: &[f64],
    cfg: &RenderConfig,
    forward: &RayOutput,
    dl_dc: [f64; 3],
    out: &mut RayGradient,
) -> Result<()> {
    out.clear();
    let coeff_len = 3 * basis_values.len();
    out.coeff_len = coeff_len;
    if forward.used > segments.len() {
        return Err(Error::InvalidArgument(format!(
            "forward state composited {} segments but the ray has {}",
            forward.used,
            segments.len()
        )));
    }
    let total = forward.color;
    let mut prefix = [0.0f64; 3];
    let mut t = 1.0f64;
    for seg in &segments[..forward.used] {
        let raw = leaves.raw_density(seg.leaf);
        let sigma = raw.max(0.0);
        let delta = seg.delta();
        let att = (-sigma * delta).exp();
        let w = t * (1.0 - att);
        let t_next = t * att;
        let z = leaves.logits(seg.leaf, basis_values);
        let c = z.map(sigmoid);
        for ch in 0..3 {
            prefix[ch] += w * c[ch];
        }

        let d_sigma = if raw > 0.0 {
            (0..3)
                .map(|ch| dl_dc[ch] * delta * (c[ch] * t_next - (total[ch] - prefix[ch])))
                .sum()
        } else {
            0.0
        };

        out.leaves.push(seg.leaf);
        out.density.push(d_sigma);
        let dz = [0, 1, 2].map(|ch| dl_dc[ch] * w * c[ch] * (1.0 - c[ch]));
        for &y in basis_values {
            out.coeffs.extend_from_slice(&[dz[0] * y, dz[1] * y, dz[2] * y]);
        }
        t = t_next;
    }
    let stopped = forward.used < segments.len() && forward.used < cfg.max_segments;
    if stopped && !(t < cfg.gamma) {
        return Err(Error::InvalidArgument(format!(
            "forward state stopped at segment {} with transmittance {t} above gamma {}",
            forward.used, cfg.gamma
        )));
    }
    let tol = 1e-9 * forward.transmittance.abs().max(1e-300) + 1e-12;
    if (t - forward.transmittance).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "forward state mismatch: transmittance {} vs recomputed {t}",
            forward.transmittance
        )));
    }
    Ok(())
}

/// Sum of squared errors over a batch and its gradient `2 (predicted - target)`.
pub fn rgb_loss_and_grad(predicted: &[[f64; 3]], target: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    if predicted.len() != target.len() {
        return Err(Error::LengthMismatch { expected: target.len(), actual: predicted.len() });
    }
    let mut loss = 0.0;
    let grad = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
            loss += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            d.map(|v| 2.0 * v)
        })
        .collect();
    Ok((loss, grad))
}

/// Sparsity prior `(1/K) sum_k |1 - exp(-lambda sigma_k)|` and its gradient.
pub fn sparsity_loss(densities: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if densities.is_empty() {
        return Err(Error::InvalidArgument("sparsity loss needs at least one sample".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be positive")));
    }
    if let Some(s) = densities.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("density {s} must be non-negative")));
    }
    let k = densities.len() as f64;
    let loss = densities.iter().map(|&s| (1.0 - (-lambda * s).exp()).abs()).sum::<f64>() / k;
    let grad = densities.iter().map(|&s| lambda / k * (-lambda * s).exp()).collect();
    Ok((loss, grad))
}
