//! Conversion of a radiance field into a PlenOctree.
//!
//! The pipeline evaluates densities on a dense grid, optionally fits the
//! bounding box to the occupied region, removes voxels that no training ray
//! weights above a threshold, and finally fills each surviving voxel with the
//! mean of the field over random points inside it.

use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{project_to_sh, Direction, SphericalBasis};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::octree::{build_from_cells, BoundingBox, CellValue, DenseGrid, PlenOctree, Ray};
use crate::renderer::{Camera, RenderConfig};

/// A field `x -> (raw density, coefficients)` in a declared basis.
pub trait RadianceField: Sync {
    fn basis(&self) -> &SphericalBasis;

    /// Box enclosing every point of positive density.
    fn bounds(&self) -> BoundingBox;

    /// Pre-activation density at `x`.
    fn density(&self, x: Vec3) -> Result<f64>;

    /// Pre-activation density at `x`; coefficients go to `coeffs`
    /// (`basis().coeff_len()` values).
    fn sample(&self, x: Vec3, coeffs: &mut [f64]) -> Result<f64>;

    /// Sorted ray parameters between which the field is constant along
    /// `ray`, for piecewise-constant fields.
    fn breakpoints(&self, _ray: &Ray) -> Option<Vec<f64>> {
        None
    }
}

/// Adapts a field given as `(x, d) -> (density, rgb)` by projecting the
/// directional color onto spherical harmonics at every query point.
/// Each query costs `samples` color evaluations.
pub struct DirectRgbField<F> {
    field: F,
    basis: SphericalBasis,
    bounds: BoundingBox,
    samples: usize,
    seed: u64,
}

impl<F> DirectRgbField<F>
where
    F: Fn(Vec3, Direction) -> (f64, [f64; 3]) + Sync,
{
    pub fn new(field: F, degree: u32, bounds: BoundingBox, samples: usize, seed: u64) -> Result<Self> {
        let basis = SphericalBasis::sh(degree)?;
        if samples == 0 {
            return Err(Error::InvalidArgument("projection needs at least one sample".into()));
        }
        Ok(Self { field, basis, bounds, samples, seed })
    }
}

impl<F> RadianceField for DirectRgbField<F>
where
    F: Fn(Vec3, Direction) -> (f64, [f64; 3]) + Sync,
{
    fn basis(&self) -> &SphericalBasis {
        &self.basis
    }

    fn bounds(&self) -> BoundingBox {
        self.bounds
    }

    fn density(&self, x: Vec3) -> Result<f64> {
        Ok((self.field)(x, Direction::new_unchecked(Vec3::Z)).0)
    }

    fn sample(&self, x: Vec3, coeffs: &mut [f64]) -> Result<f64> {
        let SphericalBasis::Sh { degree } = self.basis else { unreachable!() };
        let k = project_to_sh(|d| (self.field)(x, d).1, degree, self.samples, self.seed)?;
        coeffs.copy_from_slice(&k);
        self.density(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConversionConfig {
    /// Edge of the dense evaluation grid; a power of two.
    pub grid: usize,
    /// Density threshold for the automatic bounding box.
    pub tau_a: f64,
    /// Minimum max-ray-weight a voxel needs to survive filtering.
    pub tau_w: f64,
    /// Random points averaged per surviving voxel.
    pub samples_per_voxel: usize,
    /// Edge of the coarse grid used to fit the bounding box.
    pub coarse_grid: usize,
    pub auto_bbox: bool,
    pub seed: u64,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self { grid: 512, tau_a: 1e-2, tau_w: 1e-3, samples_per_voxel: 256, coarse_grid: 128, auto_bbox: true, seed: 0 }
    }
}

impl ConversionConfig {
    /// Parses `key = value` TOML text; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("conversion config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Format { path: path.to_path_buf(), what: e.to_string() })
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=1024).contains(&self.grid) || !self.grid.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("grid edge {} must be a power of two in [2, 1024]", self.grid)));
        }
        if !(self.tau_w >= 0.0) || !(self.tau_a.is_finite()) {
            return Err(Error::InvalidArgument("thresholds must be finite and tau_w >= 0".into()));
        }
        if self.samples_per_voxel == 0 || self.coarse_grid == 0 {
            return Err(Error::InvalidArgument("samples_per_voxel and coarse_grid must be positive".into()));
        }
        Ok(())
    }
}

/// Voxel counts at each pipeline stage.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConversionStats {
    pub evaluated: usize,
    pub occupied: usize,
    pub kept: usize,
    pub leaves: usize,
}

fn cell_center(bbox: &BoundingBox, edge: usize, cell: [usize; 3]) -> Vec3 {
    let s = bbox.size();
    Vec3::new(
        bbox.min.x + s.x * (cell[0] as f64 + 0.5) / edge as f64,
        bbox.min.y + s.y * (cell[1] as f64 + 0.5) / edge as f64,
        bbox.min.z + s.z * (cell[2] as f64 + 0.5) / edge as f64,
    )
}

fn oracle_error(cell: [usize; 3], e: Error) -> Error {
    Error::Oracle { cell, what: e.to_string() }
}

/// Evaluates the field at every cell center of an `edge^3` grid over `bbox`.
pub fn grid_eval<F: RadianceField + ?Sized>(field: &F, bbox: &BoundingBox, edge: usize, with_coeffs: bool) -> Result<DenseGrid> {
    if edge == 0 {
        return Err(Error::InvalidArgument("grid edge must be positive".into()));
    }
    let coeff_len = field.basis().coeff_len();
    let mut grid = DenseGrid::new(edge, coeff_len, with_coeffs);
    let slab = edge * edge;
    if with_coeffs {
        grid.density
            .par_chunks_mut(slab)
            .zip(grid.coeffs.par_chunks_mut(slab * coeff_len))
            .enumerate()
            .try_for_each(|(z, (dens, coeffs))| {
                let mut k = vec![0.0; coeff_len];
                for (i, d) in dens.iter_mut().enumerate() {
                    let cell = [i % edge, i / edge, z];
                    *d = field.sample(cell_center(bbox, edge, cell), &mut k).map_err(|e| oracle_error(cell, e))? as f32;
                    for (dst, src) in coeffs[i * coeff_len..(i + 1) * coeff_len].iter_mut().zip(&k) {
                        *dst = *src as f32;
                    }
                }
                Ok::<(), Error>(())
            })?;
    } else {
        grid.density.par_chunks_mut(slab).enumerate().try_for_each(|(z, dens)| {
            for (i, d) in dens.iter_mut().enumerate() {
                let cell = [i % edge, i / edge, z];
                *d = field.density(cell_center(bbox, edge, cell)).map_err(|e| oracle_error(cell, e))? as f32;
            }
            Ok::<(), Error>(())
        })?;
    }
    Ok(grid)
}

/// Smallest cube around the coarse cells with density `>= tau_a`, padded by
/// one coarse cell. Falls back to `initial` (made cubic) when none qualify.
pub fn auto_bbox<F: RadianceField + ?Sized>(field: &F, coarse_edge: usize, tau_a: f64, initial: BoundingBox) -> Result<BoundingBox> {
    let grid = grid_eval(field, &initial, coarse_edge, false)?;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (i, &d) in grid.density.iter().enumerate() {
        if d as f64 >= tau_a {
            let c = grid.cell_of(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a] + 1);
            }
        }
    }
    if lo[0] == usize::MAX {
        log::warn!("no coarse cell reaches density {tau_a}; keeping the initial bounding box");
        return Ok(initial.to_cube());
    }
    let size = initial.size();
    let mut min = Vec3::ZERO;
    let mut max = Vec3::ZERO;
    for a in 0..3 {
        let cell = size[a] / coarse_edge as f64;
        min[a] = initial.min[a] + cell * lo[a] as f64 - cell;
        max[a] = initial.min[a] + cell * hi[a] as f64 + cell;
    }
    Ok(BoundingBox::new(min, max)?.to_cube())
}

/// Per-voxel maximum ray weight over every pixel ray of `cameras`, rendering
/// through the voxels of positive density without early termination.
pub fn max_ray_weights(grid: &DenseGrid, cameras: &[Camera], bbox: &BoundingBox) -> Result<Vec<f32>> {
    if cameras.is_empty() {
        return Err(Error::InvalidArgument("filtering needs at least one camera".into()));
    }
    let occupied: Vec<CellValue> = grid
        .density
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0)
        .map(|(i, &d)| {
            let c = grid.cell_of(i);
            CellValue { cell: [c[0] as u32, c[1] as u32, c[2] as u32], density: d, coeffs: vec![0.0; 3] }
        })
        .collect();
    let tree = build_from_cells(grid.edge, occupied, *bbox, SphericalBasis::Sh { degree: 0 })?;
    let mut dense_of_leaf = vec![0usize; tree.leaf_count()];
    tree.for_each_leaf(|id, _, c| dense_of_leaf[id as usize] = grid.index([c[0] as usize, c[1] as usize, c[2] as usize]));

    let max_w: Vec<AtomicU32> = (0..grid.len()).map(|_| AtomicU32::new(0)).collect();
    let cfg = RenderConfig::white();
    for cam in cameras {
        cam.validate()?;
        (0..cam.height).into_par_iter().for_each_init(Vec::new, |segments, y| {
            for x in 0..cam.width {
                let ray = cam.pixel_ray(x, y, cfg.near, cfg.far);
                tree.extract_segments_into(&ray, segments);
                let mut t = 1.0f64;
                for s in segments.iter() {
                    let sigma = tree.leaves.density[s.leaf as usize].max(0.0) as f64;
                    let att = (-sigma * s.delta()).exp();
                    let w = (t * (1.0 - att)) as f32;
                    // Non-negative floats order like their bit patterns.
                    max_w[dense_of_leaf[s.leaf as usize]].fetch_max(w.to_bits(), Ordering::Relaxed);
                    t *= att;
                }
            }
        });
    }
    Ok(max_w.into_iter().map(|w| f32::from_bits(w.into_inner())).collect())
}

/// Keeps voxels whose maximum training-ray weight reaches `tau_w`.
pub fn filter_voxels(grid: &DenseGrid, cameras: &[Camera], bbox: &BoundingBox, tau_w: f64) -> Result<Vec<bool>> {
    let weights = max_ray_weights(grid, cameras, bbox)?;
    Ok(mask_from_weights(grid, &weights, tau_w))
}

/// Thresholds precomputed weights; voxels without positive density never pass.
pub fn mask_from_weights(grid: &DenseGrid, weights: &[f32], tau_w: f64) -> Vec<bool> {
    grid.density.iter().zip(weights).map(|(&d, &w)| d > 0.0 && w as f64 >= tau_w).collect()
}

/// Mean density and coefficients over `samples` uniform points in each masked
/// voxel. Each voxel draws from its own stream so results do not depend on
/// scheduling.
pub fn sample_leaves<F: RadianceField + ?Sized>(
    field: &F,
    mask: &[bool],
    bbox: &BoundingBox,
    edge: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<CellValue>> {
    if mask.len() != edge * edge * edge {
        return Err(Error::LengthMismatch { expected: edge * edge * edge, actual: mask.len() });
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample per voxel".into()));
    }
    let coeff_len = field.basis().coeff_len();
    let size = bbox.size();
    let cells: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    cells
        .par_iter()
        .map_init(
            || vec![0.0; coeff_len],
            |k, &i| {
                let cell = [i % edge, (i / edge) % edge, i / (edge * edge)];
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let mut density = 0.0;
                let mut coeffs = vec![0.0f64; coeff_len];
                for _ in 0..samples {
                    let mut x = Vec3::ZERO;
                    for a in 0..3 {
                        x[a] = bbox.min[a] + size[a] * (cell[a] as f64 + rng.random::<f64>()) / edge as f64;
                    }
                    density += field.sample(x, k).map_err(|e| oracle_error(cell, e))?;
                    for (acc, v) in coeffs.iter_mut().zip(k.iter()) {
                        *acc += v;
                    }
                }
                let n = samples as f64;
                Ok(CellValue {
                    cell: [cell[0] as u32, cell[1] as u32, cell[2] as u32],
                    density: (density / n) as f32,
                    coeffs: coeffs.iter().map(|v| (v / n) as f32).collect(),
                })
            },
        )
        .collect()
}

/// Full conversion. `cameras` are the training views used for filtering.
pub fn convert<F: RadianceField + ?Sized>(field: &F, cameras: &[Camera], cfg: &ConversionConfig) -> Result<(PlenOctree, ConversionStats)> {
    cfg.validate()?;
    field.basis().validate()?;
    let bbox = if cfg.auto_bbox {
        auto_bbox(field, cfg.coarse_grid, cfg.tau_a, field.bounds())?
    } else {
        field.bounds().to_cube()
    }
    .snap_to_f32();
    let grid = grid_eval(field, &bbox, cfg.grid, false)?;
    let mut stats = ConversionStats { evaluated: grid.len(), ..Default::default() };
    stats.occupied = grid.density.iter().filter(|&&d| d > 0.0).count();
    let mask = if stats.occupied == 0 {
        log::warn!("field has no positive density inside the bounding box; the tree is empty");
        vec![false; grid.len()]
    } else {
        filter_voxels(&grid, cameras, &bbox, cfg.tau_w)?
    };
    drop(grid);
    stats.kept = mask.iter().filter(|&&m| m).count();
    let cells = sample_leaves(field, &mask, &bbox, cfg.grid, cfg.samples_per_voxel, cfg.seed)?;
    let tree = build_from_cells(cfg.grid, cells, bbox, field.basis().clone())?;
    stats.leaves = tree.leaf_count();
    log::info!(
        "converted: {} evaluated, {} occupied, {} kept, {} leaves",
        stats.evaluated,
        stats.occupied,
        stats.kept,
        stats.leaves
    );
    Ok((tree, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Ball {
        basis: SphericalBasis,
        radius: f64,
    }

    impl RadianceField for Ball {
        fn basis(&self) -> &SphericalBasis {
            &self.basis
        }
        fn bounds(&self) -> BoundingBox {
            BoundingBox::cube(Vec3::ZERO, 4.0).unwrap()
        }
        fn density(&self, x: Vec3) -> Result<f64> {
            Ok(if x.norm() < self.radius { 10.0 } else { 0.0 })
        }
        fn sample(&self, x: Vec3, coeffs: &mut [f64]) -> Result<f64> {
            coeffs.fill(0.5);
            self.density(x)
        }
    }

    fn ball(radius: f64) -> Ball {
        Ball { basis: SphericalBasis::Sh { degree: 0 }, radius }
    }

    #[test]
    fn sphere_volume_from_grid() {
        let bbox = BoundingBox::cube(Vec3::ZERO, 2.5).unwrap();
        let grid = grid_eval(&ball(1.0), &bbox, 128, false).unwrap();
        let occupied = grid.density.iter().filter(|&&d| d > 0.0).count() as f64;
        let cell = 2.5 / 128.0;
        let want = 4.0 / 3.0 * std::f64::consts::PI / (cell * cell * cell);
        assert!((occupied / want - 1.0).abs() < 0.02, "{occupied} vs {want}");
    }

    #[test]
    fn constant_field_gives_constant_grid() {
        struct Flat(SphericalBasis);
        impl RadianceField for Flat {
            fn basis(&self) -> &SphericalBasis {
                &self.0
            }
            fn bounds(&self) -> BoundingBox {
                BoundingBox::cube(Vec3::ZERO, 1.0).unwrap()
            }
            fn density(&self, _: Vec3) -> Result<f64> {
                Ok(3.0)
            }
            fn sample(&self, _: Vec3, c: &mut [f64]) -> Result<f64> {
                c.fill(-0.25);
                Ok(3.0)
            }
        }
        let f = Flat(SphericalBasis::Sh { degree: 1 });
        let g = grid_eval(&f, &f.bounds(), 8, true).unwrap();
        assert!(g.density.iter().all(|&d| d == 3.0));
        assert!(g.coeffs.iter().all(|&c| c == -0.25));
        let cells = sample_leaves(&f, &vec![true; 512], &f.bounds(), 8, 3, 1).unwrap();
        assert!(cells.iter().all(|c| c.density == 3.0 && c.coeffs.iter().all(|&v| v == -0.25)));
    }

    #[test]
    fn auto_bbox_fits_unit_sphere() {
        let b = auto_bbox(&ball(1.0), 128, 1e-2, BoundingBox::cube(Vec3::ZERO, 4.0).unwrap()).unwrap();
        let pad = 4.0 / 128.0;
        assert!(b.edge() >= 2.0 && b.edge() <= 2.0 + 2.0 * pad + 1e-12, "{}", b.edge());
        let empty = auto_bbox(&ball(0.0), 16, 1e-2, BoundingBox::cube(Vec3::ZERO, 4.0).unwrap()).unwrap();
        assert_eq!(empty, BoundingBox::cube(Vec3::ZERO, 4.0).unwrap());
    }

    #[test]
    fn config_parsing() {
        let cfg = ConversionConfig::from_toml("grid = 256\ntau_w = 0.01\n").unwrap();
        assert_eq!(cfg.grid, 256);
        assert_eq!(cfg.tau_w, 0.01);
        assert_eq!(cfg.samples_per_voxel, 256);
        assert!(ConversionConfig::from_toml("grid = 100").is_err());
        assert!(ConversionConfig::from_toml("bogus = 1").is_err());
        assert_eq!(ConversionConfig::default().grid, 512);
    }

    #[test]
    fn oracle_errors_name_the_cell() {
        struct Broken(SphericalBasis);
        impl RadianceField for Broken {
            fn basis(&self) -> &SphericalBasis {
                &self.0
            }
            fn bounds(&self) -> BoundingBox {
                BoundingBox::cube(Vec3::ZERO, 1.0).unwrap()
            }
            fn density(&self, x: Vec3) -> Result<f64> {
                if x.x > 0.3 && x.y > 0.3 && x.z > 0.3 {
                    Err(Error::NonFinite("density".into()))
                } else {
                    Ok(0.0)
                }
            }
            fn sample(&self, x: Vec3, _: &mut [f64]) -> Result<f64> {
                self.density(x)
            }
        }
        let f = Broken(SphericalBasis::Sh { degree: 0 });
        match grid_eval(&f, &f.bounds(), 4, false) {
            Err(Error::Oracle { cell, .. }) => assert_eq!(cell, [3, 3, 3]),
            other => panic!("{other:?}"),
        }
    }
}
