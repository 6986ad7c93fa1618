mod common;

use common::*;
use plenoctree::octree::PlenOctree;

fn compare(tree: &PlenOctree, ray: &plenoctree::Ray) {
    let min_len = 1e-9 * tree.bbox.edge();
    let got: Vec<_> = tree.extract_segments(ray).segments.into_iter().filter(|s| s.delta() > min_len).collect();
    let want: Vec<_> = grid_step_segments(tree, ray).into_iter().filter(|s| s.delta() > min_len).collect();
    assert_eq!(got.len(), want.len(), "ray {ray:?}\n got {got:?}\nwant {want:?}");
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.leaf, w.leaf, "ray {ray:?}");
        assert!((g.t_enter - w.t_enter).abs() <= 1e-9, "{g:?} vs {w:?}");
        assert!((g.t_exit - w.t_exit).abs() <= 1e-9, "{g:?} vs {w:?}");
    }
}

#[test]
fn matches_grid_stepping_on_mixed_depth_trees() {
    let mut rng = rng(11);
    for depth in 0..=5 {
        let tree = random_tree(&mut rng, depth, 0.3, 6, 0);
        for _ in 0..200 {
            let ray = random_ray(&mut rng, 1 << depth);
            compare(&tree, &ray);
        }
    }
}

#[test]
fn chord_length_matches_oracle() {
    let mut rng = rng(12);
    let tree = random_tree(&mut rng, 4, 0.5, 0, 0);
    for _ in 0..300 {
        let ray = random_ray(&mut rng, 16);
        let a = tree.extract_segments(&ray).total_length();
        let b: f64 = grid_step_segments(&tree, &ray).iter().map(|s| s.delta()).sum();
        assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        assert!(a <= ray.t_far - ray.t_near + 1e-12);
    }
}

#[test]
fn stopping_traversal_composites_like_full_extraction() {
    use plenoctree::basis::eval_sh_basis;
    use plenoctree::renderer::{extract_until_opaque, render_segments, trace_ray, RenderConfig};
    let mut rng = rng(13);
    let mut stopped = 0;
    for gamma in [0.0, 0.01, 0.3] {
        let cfg = RenderConfig::white().with_gamma(gamma);
        let tree = random_tree(&mut rng, 5, 0.6, 4, 1);
        for _ in 0..300 {
            let ray = random_ray(&mut rng, 32);
            let y = eval_sh_basis(ray.dir, 1).unwrap();
            let full = tree.extract_segments(&ray).segments;
            let want = render_segments(&full, &tree.leaves, &y, &cfg, 0).unwrap();
            assert_eq!(trace_ray(&tree, &ray, &y, &cfg, 0).unwrap(), want);
            let mut cut = Vec::new();
            extract_until_opaque(&tree, &ray, &cfg, &mut cut);
            assert_eq!(cut.len(), want.used);
            assert_eq!(cut[..], full[..want.used]);
            stopped += usize::from(want.used < full.len());
        }
    }
    assert!(stopped > 50);
}
