mod common;

use std::sync::OnceLock;

use common::*;
use plenoctree::convert::{filter_voxels, grid_eval, mask_from_weights, max_ray_weights, sample_leaves, DirectRgbField, RadianceField};
use plenoctree::octree::DenseGrid;
use plenoctree::renderer::RenderConfig;
use plenoctree::scenes::{make_camera_rig, make_oracle, AnalyticScene, RigConfig};
use plenoctree::{BoundingBox, Camera, PlenOctree, SphericalBasis, Vec3};
use proptest::prelude::*;

struct Setup {
    grid: DenseGrid,
    bbox: BoundingBox,
    cameras: Vec<Camera>,
    weights: Vec<f32>,
}

fn blocks() -> &'static Setup {
    static SETUP: OnceLock<Setup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let field = make_oracle(&AnalyticScene::voxel_blocks(32)).unwrap();
        let bbox = field.bounds().to_cube().snap_to_f32();
        let grid = grid_eval(&field, &bbox, 32, false).unwrap();
        let cameras = make_camera_rig(&RigConfig::new(4, 4.0, 24)).unwrap();
        let weights = max_ray_weights(&grid, &cameras, &bbox).unwrap();
        Setup { grid, bbox, cameras, weights }
    })
}

/// Per-voxel maximum ray weight from exhaustive lattice stepping in f64.
fn brute_force_weights(s: &Setup) -> Vec<f64> {
    let edge = s.grid.edge;
    let depth = edge.trailing_zeros();
    let mut tree = PlenOctree::empty(s.bbox, depth, SphericalBasis::Sh { degree: 0 }).unwrap();
    let mut dense_of_leaf = Vec::new();
    for (i, &d) in s.grid.density.iter().enumerate() {
        if d > 0.0 {
            let c = s.grid.cell_of(i);
            let id = tree.insert_leaf(depth, [c[0] as u32, c[1] as u32, c[2] as u32], d, &[0.0; 3]).unwrap();
            assert_eq!(id as usize, dense_of_leaf.len());
            dense_of_leaf.push(i);
        }
    }
    let cfg = RenderConfig::white();
    let mut best = vec![0.0f64; s.grid.len()];
    for cam in &s.cameras {
        for y in 0..cam.height {
            for x in 0..cam.width {
                let ray = cam.pixel_ray(x, y, cfg.near, cfg.far);
                let mut t = 1.0f64;
                for seg in grid_step_segments(&tree, &ray) {
                    let sigma = (tree.leaves.density[seg.leaf as usize] as f64).max(0.0);
                    let att = (-sigma * seg.delta()).exp();
                    let cell = dense_of_leaf[seg.leaf as usize];
                    best[cell] = best[cell].max(t * (1.0 - att));
                    t *= att;
                }
            }
        }
    }
    best
}

#[test]
fn filtering_has_no_false_negatives_against_brute_force() {
    let s = blocks();
    let oracle = brute_force_weights(s);
    for tau in [1e-3, 1e-2, 0.2] {
        let mask = mask_from_weights(&s.grid, &s.weights, tau);
        let mut kept = 0;
        for (i, &w) in oracle.iter().enumerate() {
            if w >= tau * (1.0 + 1e-4) {
                assert!(mask[i], "voxel {:?} reaches weight {w} but was removed at tau {tau}", s.grid.cell_of(i));
            }
            if w < tau * (1.0 - 1e-4) {
                assert!(!mask[i], "voxel {:?} peaks at {w} but was kept at tau {tau}", s.grid.cell_of(i));
            }
            kept += mask[i] as usize;
        }
        assert!(kept > 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_the_threshold_only_removes_voxels(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let s = blocks();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let loose = mask_from_weights(&s.grid, &s.weights, lo);
        let strict = mask_from_weights(&s.grid, &s.weights, hi);
        for (l, h) in loose.iter().zip(&strict) {
            prop_assert!(!h || *l);
        }
    }
}

#[test]
fn solid_cube_interior_is_removed() {
    let bbox = BoundingBox::cube(Vec3::ZERO, 2.0).unwrap();
    let inside = |x: Vec3| (0..3).all(|a| x[a].abs() < 0.5);
    let field = DirectRgbField::new(move |x: Vec3, _| (if inside(x) { 1000.0 } else { -1.0 }, [0.5; 3]), 0, bbox, 1, 0).unwrap();
    let grid = grid_eval(&field, &bbox, 16, false).unwrap();
    assert_eq!(grid.density.iter().filter(|&&d| d > 0.0).count(), 512);
    let cams = make_camera_rig(&RigConfig::new(20, 4.0, 32)).unwrap();
    let mask = filter_voxels(&grid, &cams, &bbox, 1e-3).unwrap();
    let mut surface_kept = 0;
    for (i, &m) in mask.iter().enumerate() {
        let c = grid.cell_of(i);
        let solid = c.iter().all(|&v| (4..12).contains(&v));
        let interior = c.iter().all(|&v| (5..11).contains(&v));
        assert!(!m || solid, "empty voxel {c:?} kept");
        assert!(!(m && interior), "interior voxel {c:?} kept");
        surface_kept += m as usize;
    }
    assert!(surface_kept > 0);
}

#[test]
fn leaf_values_are_voxel_means_of_a_linear_field() {
    let bbox = BoundingBox::cube(Vec3::ZERO, 2.0).unwrap();
    let density = |x: Vec3| 5.0 + x.x + 2.0 * x.y - x.z;
    let field = DirectRgbField::new(move |x: Vec3, _| (density(x), [0.25, 0.5, 0.75]), 0, bbox, 1, 0).unwrap();
    let edge = 4;
    let mask = vec![true; edge * edge * edge];
    let samples = 2000;
    let cells = sample_leaves(&field, &mask, &bbox, edge, samples, 9).unwrap();
    assert_eq!(cells.len(), mask.len());
    // Each sample has variance (1 + 4 + 1) h^2 / 12 around the voxel mean.
    let h = 2.0 / edge as f64;
    let sd = (6.0 * h * h / 12.0 / samples as f64).sqrt();
    for c in &cells {
        let center = Vec3::new(
            -1.0 + h * (c.cell[0] as f64 + 0.5),
            -1.0 + h * (c.cell[1] as f64 + 0.5),
            -1.0 + h * (c.cell[2] as f64 + 0.5),
        );
        assert!((c.density as f64 - density(center)).abs() < 5.0 * sd, "{:?}: {} vs {}", c.cell, c.density, density(center));
    }
    let again = sample_leaves(&field, &mask, &bbox, edge, samples, 9).unwrap();
    assert!(cells.iter().zip(&again).all(|(a, b)| a.density.to_bits() == b.density.to_bits()));
}
