mod common;

use common::*;
use plenoctree::autodiff::{backward_ray, rgb_loss_and_grad, RayGradient};
use plenoctree::basis::eval_sh_basis;
use plenoctree::octree::{LeafValues, Segment};
use plenoctree::renderer::{render_segments, RenderConfig};
use proptest::prelude::*;
use rand::Rng;

fn check_case(leaves: &LeafValues<f64>, segs: &[Segment], y: &[f64], cfg: &RenderConfig, g: [f64; 3]) -> usize {
    let fwd = render_segments(segs, leaves, y, cfg, 0).unwrap();
    let mut grad = RayGradient::new(0);
    backward_ray(segs, leaves, y, cfg, &fwd, g, &mut grad).unwrap();
    let fd = finite_difference(leaves, segs, y, cfg, g, 1e-5);
    let mut checked = 0;
    for (e, seg) in segs.iter().enumerate() {
        if e >= grad.len() {
            // Past termination: gradient absent, i.e. exactly zero.
            continue;
        }
        assert_eq!(grad.leaves[e], seg.leaf);
        assert!(close(grad.density[e], fd.density[e], 1e-4, 1e-8), "density seg {e}: {} vs {}", grad.density[e], fd.density[e]);
        for (j, (&a, &n)) in grad.coeffs_of(e).iter().zip(&fd.coeffs[e]).enumerate() {
            assert!(close(a, n, 1e-4, 1e-8), "coeff seg {e} #{j}: {a} vs {n}");
            checked += 1;
        }
        checked += 1;
    }
    checked
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = rng(21);
    let cfg = RenderConfig { background: [0.9, 0.4, 0.1], ..RenderConfig::white().with_gamma(0.0) };
    let mut checked = 0;
    for case in 0..120 {
        let degree = [0, 1, 3][case % 3];
        let (leaves, segs, y) = random_ray_case(&mut rng, degree);
        let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        checked += check_case(&leaves, &segs, &y, &cfg, g);
    }
    assert!(checked > 1000);
}

#[test]
fn gradients_on_octree_rays_match_finite_differences() {
    let mut rng = rng(22);
    let cfg = RenderConfig::white().with_gamma(0.0);
    let mut cases = 0;
    while cases < 100 {
        let tree = random_tree(&mut rng, 3, 0.5, 2, 1);
        let ray = random_ray(&mut rng, 8);
        let segs = tree.extract_segments(&ray).segments;
        if segs.is_empty() || segs.len() > 64 {
            continue;
        }
        let leaves: LeafValues<f64> = tree.leaves.convert();
        let y = eval_sh_basis(ray.dir, 1).unwrap();
        check_case(&leaves, &segs, &y, &cfg, [1.0, -0.5, 0.25]);
        cases += 1;
    }
}

#[test]
fn truncated_render_is_self_consistent() {
    let mut rng = rng(23);
    let cfg = RenderConfig::white().with_gamma(0.01);
    let mut truncated = 0;
    for _ in 0..100 {
        let (mut leaves, segs, y) = random_ray_case(&mut rng, 1);
        for s in leaves.density.iter_mut() {
            *s = s.abs() * 4.0 + 0.5;
        }
        let fwd = render_segments(&segs, &leaves, &y, &cfg, 0).unwrap();
        if fwd.used < segs.len() {
            truncated += 1;
            // A perturbation that moves the cut changes the truncated function
            // discontinuously; only check cases where the cut is stable.
            let margin = fwd.transmittance / cfg.gamma;
            if !(0.98..=1.0).contains(&margin) {
                check_case(&leaves, &segs, &y, &cfg, [0.3, 0.6, -0.2]);
            }
            let mut grad = RayGradient::new(0);
            backward_ray(&segs, &leaves, &y, &cfg, &fwd, [1.0; 3], &mut grad).unwrap();
            assert_eq!(grad.len(), fwd.used);
        }
    }
    assert!(truncated > 20);
}

#[test]
fn clamped_density_has_zero_gradient() {
    let mut rng = rng(24);
    let cfg = RenderConfig::black().with_gamma(0.0);
    for _ in 0..50 {
        let (mut leaves, segs, y) = random_ray_case(&mut rng, 1);
        leaves.density[0] = -0.3;
        let fwd = render_segments(&segs, &leaves, &y, &cfg, 0).unwrap();
        let mut grad = RayGradient::new(0);
        backward_ray(&segs, &leaves, &y, &cfg, &fwd, [1.0, 1.0, 1.0], &mut grad).unwrap();
        assert_eq!(grad.density[0], 0.0);
        assert!(grad.coeffs_of(0).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn color_gradient_is_the_weight() {
    let mut rng = rng(25);
    let cfg = RenderConfig::white().with_gamma(0.0);
    let (leaves, segs, _) = random_ray_case(&mut rng, 0);
    let y = [1.0];
    let fwd = render_segments(&segs, &leaves, &y, &cfg, 0).unwrap();
    let mut grad = RayGradient::new(0);
    backward_ray(&segs, &leaves, &y, &cfg, &fwd, [1.0, 0.0, 0.0], &mut grad).unwrap();
    let mut t = 1.0f64;
    for (e, s) in segs.iter().enumerate() {
        let sigma = leaves.density[s.leaf as usize].max(0.0);
        let w = t * (1.0 - (-sigma * s.delta()).exp());
        t *= (-sigma * s.delta()).exp();
        let c = plenoctree::basis::color_of(leaves.coeffs_of(s.leaf), &y)[0];
        // dC/dk = w c (1 - c) with unit basis value.
        assert!((grad.coeffs_of(e)[0] - w * c * (1.0 - c)).abs() <= 1e-15);
    }
}

#[test]
fn rgb_loss_gradient_matches_finite_differences() {
    let mut rng = rng(26);
    let p: Vec<[f64; 3]> = (0..32).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let t: Vec<[f64; 3]> = (0..32).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let (_, g) = rgb_loss_and_grad(&p, &t).unwrap();
    let h = 1e-6;
    for i in 0..p.len() {
        for ch in 0..3 {
            let mut a = p.clone();
            a[i][ch] += h;
            let mut b = p.clone();
            b[i][ch] -= h;
            let fd = (rgb_loss_and_grad(&a, &t).unwrap().0 - rgb_loss_and_grad(&b, &t).unwrap().0) / (2.0 * h);
            assert!((fd - g[i][ch]).abs() < 1e-6);
        }
    }
}

proptest! {
    #[test]
    fn backward_is_linear_in_upstream(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = common::rng(seed);
        let (leaves, segs, y) = random_ray_case(&mut rng, 1);
        let cfg = RenderConfig::white();
        let fwd = render_segments(&segs, &leaves, &y, &cfg, 0).unwrap();
        let g1 = [0.4, -1.0, 0.7];
        let g2 = [-0.2, 0.5, 1.3];
        let run = |g: [f64; 3]| {
            let mut out = RayGradient::new(0);
            backward_ray(&segs, &leaves, &y, &cfg, &fwd, g, &mut out).unwrap();
            out
        };
        let combo = run([0, 1, 2].map(|c| a * g1[c] + b * g2[c]));
        let (r1, r2) = (run(g1), run(g2));
        for i in 0..combo.density.len() {
            let want = a * r1.density[i] + b * r2.density[i];
            prop_assert!((combo.density[i] - want).abs() <= 1e-10 * (1.0 + want.abs()));
        }
        for i in 0..combo.coeffs.len() {
            let want = a * r1.coeffs[i] + b * r2.coeffs[i];
            prop_assert!((combo.coeffs[i] - want).abs() <= 1e-10 * (1.0 + want.abs()));
        }
    }
}
