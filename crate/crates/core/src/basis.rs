//! Spherical basis functions (real spherical harmonics and spherical
//! Gaussians) and the coefficient-to-color mapping used by every leaf.
//!
//! Coefficient vectors are laid out basis-major, channel-minor:
//! `k0_r k0_g k0_b k1_r ...`, with SH terms in `(l, m)` lexicographic order
//! `(0,0), (1,-1), (1,0), (1,1), (2,-2), ...`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, Vec3};

/// Highest SH degree accepted by the evaluators.
pub const MAX_SH_DEGREE: u32 = 10;

/// Default number of Monte Carlo directions for [`project_to_sh`].
pub const DEFAULT_PROJECTION_SAMPLES: usize = 10_000;

/// Clamp applied to radiance before the logit in [`project_to_sh`].
pub const PROJECTION_EPS: f64 = 1e-4;

const UNIT_TOLERANCE: f64 = 1e-6;

/// What to do with a direction whose norm is not 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormPolicy {
    #[default]
    Reject,
    Normalize,
}

/// Unit view direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction(Vec3);

impl Direction {
    /// Accepts `v` only if it is unit length within 1e-6.
    pub fn new(v: Vec3) -> Result<Self> {
        Self::with_policy(v, NormPolicy::Reject)
    }

    pub fn normalize(v: Vec3) -> Result<Self> {
        Self::with_policy(v, NormPolicy::Normalize)
    }

    pub fn with_policy(v: Vec3, policy: NormPolicy) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("direction {v:?}")));
        }
        let norm = v.norm();
        if (norm - 1.0).abs() <= UNIT_TOLERANCE {
            return Ok(Direction(v));
        }
        match policy {
            NormPolicy::Normalize if norm > 0.0 => Ok(Direction(v / norm)),
            _ => Err(Error::NonUnitDirection { norm }),
        }
    }

    /// Builds a direction from polar angle `theta` (from +z) and azimuth `phi`.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        let s = theta.sin();
        Direction(Vec3::new(s * phi.cos(), s * phi.sin(), theta.cos()))
    }

    pub(crate) fn new_unchecked(v: Vec3) -> Self {
        Direction(v)
    }

    pub fn vec(self) -> Vec3 {
        self.0
    }
}

/// One spherical Gaussian lobe `exp(bandwidth * (d . axis - 1))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgLobe {
    pub axis: Vec3,
    pub bandwidth: f64,
}

/// Which spherical basis a coefficient vector is expressed in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SphericalBasis {
    Sh { degree: u32 },
    Sg { lobes: Vec<SgLobe> },
}

impl SphericalBasis {
    pub fn sh(degree: u32) -> Result<Self> {
        if degree > MAX_SH_DEGREE {
            return Err(Error::InvalidArgument(format!(
                "SH degree {degree} exceeds {MAX_SH_DEGREE}"
            )));
        }
        Ok(SphericalBasis::Sh { degree })
    }

    pub fn sg(lobes: Vec<SgLobe>) -> Result<Self> {
        let basis = SphericalBasis::Sg { lobes };
        basis.validate()?;
        Ok(basis)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SphericalBasis::Sh { degree } if *degree > MAX_SH_DEGREE => Err(Error::InvalidArgument(
                format!("SH degree {degree} exceeds {MAX_SH_DEGREE}"),
            )),
            SphericalBasis::Sh { .. } => Ok(()),
            SphericalBasis::Sg { lobes } => {
                if lobes.is_empty() {
                    return Err(Error::InvalidArgument("SG basis needs at least one lobe".into()));
                }
                for (i, lobe) in lobes.iter().enumerate() {
                    if (lobe.axis.norm() - 1.0).abs() > UNIT_TOLERANCE {
                        return Err(Error::InvalidArgument(format!("SG lobe {i} axis is not unit")));
                    }
                    if !(lobe.bandwidth > 0.0 && lobe.bandwidth.is_finite()) {
                        return Err(Error::InvalidArgument(format!(
                            "SG lobe {i} bandwidth must be positive"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Number of basis functions `B`.
    pub fn size(&self) -> usize {
        match self {
            SphericalBasis::Sh { degree } => sh_basis_size(*degree),
            SphericalBasis::Sg { lobes } => lobes.len(),
        }
    }

    /// Length of a coefficient vector (`3 * B`).
    pub fn coeff_len(&self) -> usize {
        3 * self.size()
    }

    /// Writes all basis values at `d` into `out` (length `B`).
    pub fn eval_into(&self, d: Direction, out: &mut [f64]) {
        match self {
            SphericalBasis::Sh { degree } => sh_into(d, *degree, out),
            SphericalBasis::Sg { lobes } => sg_into(d, lobes, out),
        }
    }

    pub fn eval(&self, d: Direction) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.eval_into(d, &mut out);
        out
    }
}

pub fn sh_basis_size(degree: u32) -> usize {
    let n = degree as usize + 1;
    n * n
}

/// Real SH values `Y_l^m(d)` for every `l <= degree`, in canonical order.
pub fn eval_sh_basis(d: Direction, degree: u32) -> Result<Vec<f64>> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "SH degree {degree} exceeds {MAX_SH_DEGREE}"
        )));
    }
    let mut out = vec![0.0; sh_basis_size(degree)];
    sh_into(d, degree, &mut out);
    Ok(out)
}

/// Spherical Gaussian values for every lobe of an SG basis.
pub fn eval_sg_basis(d: Direction, basis: &SphericalBasis) -> Result<Vec<f64>> {
    match basis {
        SphericalBasis::Sg { lobes } => {
            let mut out = vec![0.0; lobes.len()];
            sg_into(d, lobes, &mut out);
            Ok(out)
        }
        SphericalBasis::Sh { .. } => Err(Error::InvalidArgument("expected an SG basis".into())),
    }
}

fn sg_into(d: Direction, lobes: &[SgLobe], out: &mut [f64]) {
    let v = d.vec();
    for (o, lobe) in out.iter_mut().zip(lobes) {
        *o = (lobe.bandwidth * (v.dot(lobe.axis) - 1.0)).exp();
    }
}

const C0: f64 = 0.28209479177387814;
const C1: f64 = 0.4886025119029199;
const C2_M2: f64 = 1.0925484305920792;
const C2_0: f64 = 0.31539156525252005;
const C2_2: f64 = 0.5462742152960396;
const C3_M3: f64 = 0.5900435899266435;
const C3_M2: f64 = 2.890611442640554;
const C3_M1: f64 = 0.4570457994644658;
const C3_0: f64 = 0.3731763325901154;
const C3_2: f64 = 1.445305721320277;
const C4_M4: f64 = 2.5033429417967046;
const C4_M3: f64 = 1.7701307697799304;
const C4_M2: f64 = 0.9461746957575601;
const C4_M1: f64 = 0.6690465435572892;
const C4_0: f64 = 0.10578554691520431;
const C4_2: f64 = 0.47308734787878004;
const C4_4: f64 = 0.6258357354491761;

fn sh_into(d: Direction, degree: u32, out: &mut [f64]) {
    if degree <= 4 {
        sh_polynomial(d, degree, out);
    } else {
        sh_recurrence(d, degree, out);
    }
}

/// Closed-form Cartesian polynomials for `l <= 4`.
fn sh_polynomial(d: Direction, degree: u32, out: &mut [f64]) {
    let Vec3 { x, y, z } = d.vec();
    out[0] = C0;
    if degree == 0 {
        return;
    }
    out[1] = C1 * y;
    out[2] = C1 * z;
    out[3] = C1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = C2_M2 * xy;
    out[5] = C2_M2 * yz;
    out[6] = C2_0 * (3.0 * zz - 1.0);
    out[7] = C2_M2 * xz;
    out[8] = C2_2 * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = C3_M3 * y * (3.0 * xx - yy);
    out[10] = C3_M2 * xy * z;
    out[11] = C3_M1 * y * (5.0 * zz - 1.0);
    out[12] = C3_0 * z * (5.0 * zz - 3.0);
    out[13] = C3_M1 * x * (5.0 * zz - 1.0);
    out[14] = C3_2 * z * (xx - yy);
    out[15] = C3_M3 * x * (xx - 3.0 * yy);
    if degree == 3 {
        return;
    }
    out[16] = C4_M4 * xy * (xx - yy);
    out[17] = C4_M3 * yz * (3.0 * xx - yy);
    out[18] = C4_M2 * xy * (7.0 * zz - 1.0);
    out[19] = C4_M1 * yz * (7.0 * zz - 3.0);
    out[20] = C4_0 * (zz * (35.0 * zz - 30.0) + 3.0);
    out[21] = C4_M1 * xz * (7.0 * zz - 3.0);
    out[22] = C4_2 * (xx - yy) * (7.0 * zz - 1.0);
    out[23] = C4_M3 * xz * (xx - 3.0 * yy);
    out[24] = C4_4 * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy));
}

/// Real SH from the complex definition: associated Legendre functions
/// (Condon-Shortley phase included) with `sqrt(2) (-1)^m Re/Im` for `m != 0`.
pub(crate) fn sh_recurrence(d: Direction, degree: u32, out: &mut [f64]) {
    let v = d.vec();
    let cos_t = v.z.clamp(-1.0, 1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = v.y.atan2(v.x);
    let lmax = degree as usize;

    // legendre[l][m] for 0 <= m <= l
    let mut legendre = vec![vec![0.0f64; lmax + 1]; lmax + 1];
    let mut pmm = 1.0;
    for m in 0..=lmax {
        if m > 0 {
            pmm *= -((2 * m - 1) as f64) * sin_t;
        }
        legendre[m][m] = pmm;
        if m < lmax {
            legendre[m + 1][m] = cos_t * (2 * m + 1) as f64 * pmm;
        }
        for l in (m + 2)..=lmax {
            legendre[l][m] = ((2 * l - 1) as f64 * cos_t * legendre[l - 1][m]
                - (l + m - 1) as f64 * legendre[l - 2][m])
                / (l - m) as f64;
        }
    }

    for l in 0..=lmax {
        for m in 0..=l {
            // (l - m)! / (l + m)!
            let ratio: f64 = ((l - m + 1)..=(l + m)).map(|k| 1.0 / k as f64).product();
            let norm = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
            let base = l * l + l;
            let p = norm * legendre[l][m];
            if m == 0 {
                out[base] = p;
            } else {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let scale = std::f64::consts::SQRT_2 * sign * p;
                out[base + m] = scale * (m as f64 * phi).cos();
                out[base - m] = scale * (m as f64 * phi).sin();
            }
        }
    }
}

/// Per-channel `sigmoid(sum_b k_b * Y_b)`.
pub fn eval_color(coeffs: &[f64], basis_values: &[f64]) -> Result<[f64; 3]> {
    if coeffs.len() != 3 * basis_values.len() {
        return Err(Error::LengthMismatch {
            expected: 3 * basis_values.len(),
            actual: coeffs.len(),
        });
    }
    Ok(color_of(coeffs, basis_values))
}

/// Pre-sigmoid channel sums.
#[inline]
pub fn color_logits<T: Copy + Into<f64>>(coeffs: &[T], basis_values: &[f64]) -> [f64; 3] {
    let mut acc = [0.0f64; 3];
    for (k, &y) in coeffs.chunks_exact(3).zip(basis_values) {
        acc[0] += k[0].into() * y;
        acc[1] += k[1].into() * y;
        acc[2] += k[2].into() * y;
    }
    acc
}

#[inline]
pub fn color_of<T: Copy + Into<f64>>(coeffs: &[T], basis_values: &[f64]) -> [f64; 3] {
    color_logits(coeffs, basis_values).map(sigmoid)
}

/// Uniformly distributed direction on the unit sphere.
pub fn sample_sphere<R: Rng + ?Sized>(rng: &mut R) -> Direction {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Direction::new_unchecked(Vec3::new(r * phi.cos(), r * phi.sin(), z))
}

/// `n` directions jittered over an equal-area `(z, phi)` grid of
/// `rows x cols` strata; the `n - rows * cols` leftovers are uniform.
/// Every sample is marginally uniform, so equal weights stay unbiased.
pub fn stratified_sphere<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Direction> {
    let rows = (n as f64).sqrt().floor().max(1.0) as usize;
    let cols = n / rows;
    let mut out = Vec::with_capacity(n);
    for i in 0..rows {
        for j in 0..cols {
            let z = -1.0 + 2.0 * (i as f64 + rng.random::<f64>()) / rows as f64;
            let phi = 2.0 * PI * (j as f64 + rng.random::<f64>()) / cols as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            out.push(Direction::new_unchecked(Vec3::new(r * phi.cos(), r * phi.sin(), z)));
        }
    }
    while out.len() < n {
        out.push(sample_sphere(rng));
    }
    out
}

/// Monte Carlo projection of a directional RGB function onto real SH, using
/// stratified directions.
///
/// The radiance is clamped to `[eps, 1 - eps]` and passed through a logit
/// first, so that [`eval_color`] applied to the result approximates the input.
pub fn project_to_sh<F>(radiance: F, degree: u32, n_samples: usize, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(Direction) -> [f64; 3],
{
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let size = SphericalBasis::sh(degree)?.size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; size];
    let mut acc = vec![0.0; 3 * size];
    for d in stratified_sphere(n_samples, &mut rng) {
        sh_into(d, degree, &mut y);
        let f = radiance(d).map(|c| logit(c.clamp(PROJECTION_EPS, 1.0 - PROJECTION_EPS)));
        for (b, &yb) in y.iter().enumerate() {
            for c in 0..3 {
                acc[3 * b + c] += f[c] * yb;
            }
        }
    }
    let scale = 4.0 * PI / n_samples as f64;
    acc.iter_mut().for_each(|v| *v *= scale);
    Ok(acc)
}
