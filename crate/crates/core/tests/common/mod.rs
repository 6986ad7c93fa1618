//! Reference implementations used as independent oracles by the
//! integration tests. Nothing here calls the code path it checks.

#![allow(dead_code)]

use plenoctree::basis::eval_sh_basis;
use plenoctree::octree::{Child, ChildRef, LeafStore, LeafValues, PlenOctree, Segment};
use plenoctree::renderer::{render_segments, RenderConfig};
use plenoctree::{Ray, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Leaf owning deepest-level cell `cell`, found by integer descent.
pub fn leaf_of_cell(tree: &PlenOctree, cell: [u32; 3]) -> Option<u32> {
    let mut child: Child = tree.root;
    let mut level = 0;
    loop {
        match child.get() {
            ChildRef::Empty => return None,
            ChildRef::Leaf(id) => return Some(id),
            ChildRef::Node(n) => {
                let shift = tree.depth - level - 1;
                let slot = ((cell[0] >> shift) & 1) | (((cell[1] >> shift) & 1) << 1) | (((cell[2] >> shift) & 1) << 2);
                child = tree.nodes[n as usize][slot as usize];
                level += 1;
            }
        }
    }
}

/// Exhaustive traversal: collects every lattice-plane crossing inside the
/// box, looks up the cell of each sub-interval from its midpoint, and merges
/// consecutive intervals that belong to the same leaf.
pub fn grid_step_segments(tree: &PlenOctree, ray: &Ray) -> Vec<Segment> {
    let n = tree.resolution();
    let o = ray.origin;
    let d = ray.dir.vec();
    let (mut ta, mut tb) = (ray.t_near, ray.t_far);
    for a in 0..3 {
        let (lo, hi) = (tree.bbox.min[a], tree.bbox.max[a]);
        if d[a] == 0.0 {
            if o[a] < lo || o[a] > hi {
                return Vec::new();
            }
        } else {
            let t1 = (lo - o[a]) / d[a];
            let t2 = (hi - o[a]) / d[a];
            ta = ta.max(t1.min(t2));
            tb = tb.min(t1.max(t2));
        }
    }
    if tb <= ta {
        return Vec::new();
    }
    let mut ts = vec![ta, tb];
    for a in 0..3 {
        if d[a] == 0.0 {
            continue;
        }
        for k in 0..=n {
            let p = tree.bbox.min[a] + (tree.bbox.max[a] - tree.bbox.min[a]) * k as f64 / n as f64;
            let t = (p - o[a]) / d[a];
            if t > ta && t < tb {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut out: Vec<Segment> = Vec::new();
    for w in ts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let mid = o + d * (0.5 * (w[0] + w[1]));
        let mut cell = [0u32; 3];
        for a in 0..3 {
            let u = (mid[a] - tree.bbox.min[a]) / (tree.bbox.max[a] - tree.bbox.min[a]) * n as f64;
            cell[a] = (u.floor().max(0.0) as u32).min(n - 1);
        }
        // Rays lying exactly on a plane: the midpoint sits on it and floor()
        // already picks the upper cell, matching the half-open convention.
        let Some(leaf) = leaf_of_cell(tree, cell) else { continue };
        match out.last_mut() {
            Some(last) if last.leaf == leaf && (last.t_exit - w[0]).abs() < 1e-12 => last.t_exit = w[1],
            _ => out.push(Segment { t_enter: w[0], t_exit: w[1], leaf }),
        }
    }
    out
}

/// Random tree over `[-1, 1]^3` mixing deepest-level and coarser leaves.
pub fn random_tree(rng: &mut ChaCha8Rng, depth: u32, fill: f64, coarse: usize, degree: u32) -> PlenOctree {
    let bbox = plenoctree::BoundingBox::cube(Vec3::ZERO, 2.0).unwrap();
    let basis = plenoctree::SphericalBasis::Sh { degree };
    let mut tree = PlenOctree::empty(bbox, depth, basis).unwrap();
    let coeff_len = tree.basis.coeff_len();
    let values = |rng: &mut ChaCha8Rng| -> (f32, Vec<f32>) {
        (rng.random_range(-0.5..5.0), (0..coeff_len).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    for _ in 0..coarse {
        let level = rng.random_range(0..depth.max(1));
        let n = 1u32 << level;
        let cell = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
        let (s, k) = values(rng);
        let _ = tree.insert_leaf(level, cell, s, &k);
    }
    let n = 1u32 << depth;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                if rng.random_bool(fill) {
                    let (s, k) = values(rng);
                    let _ = tree.insert_leaf(depth, [x, y, z], s, &k);
                }
            }
        }
    }
    tree
}

/// Ray from outside `[-1, 1]^3` aimed at a random interior point; a third
/// of them are axis-aligned and start on lattice planes.
pub fn random_ray(rng: &mut ChaCha8Rng, lattice: u32) -> Ray {
    use plenoctree::Direction;
    if rng.random_bool(0.33) {
        let axis = rng.random_range(0..3);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut o = Vec3::ZERO;
        for a in 0..3 {
            o[a] = if rng.random_bool(0.5) {
                -1.0 + 2.0 * rng.random_range(0..=lattice) as f64 / lattice as f64
            } else {
                rng.random_range(-1.0..1.0)
            };
        }
        o[axis] = -2.0 * sign;
        let mut d = Vec3::ZERO;
        d[axis] = sign;
        return Ray::new(o, Direction::new(d).unwrap(), 0.0, 10.0).unwrap();
    }
    let o = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let o = if o.norm() < 1.8 { o.normalized() * 2.5 } else { o };
    let target = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let near = if rng.random_bool(0.2) { rng.random_range(0.0..2.0) } else { 0.0 };
    Ray::new(o, Direction::normalize(target - o).unwrap(), near, near + rng.random_range(1.0..10.0)).unwrap()
}

/// Linear functional `g . C` of a rendered ray.
pub fn project(leaves: &LeafValues<f64>, segs: &[Segment], y: &[f64], cfg: &RenderConfig, g: [f64; 3]) -> f64 {
    let c = render_segments(segs, leaves, y, cfg, 0).unwrap().color;
    g[0] * c[0] + g[1] * c[1] + g[2] * c[2]
}

/// Central finite differences of `g . C` for every raw density and
/// coefficient of the leaves touched by `segs`.
pub struct FdGradient {
    pub density: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
}

pub fn finite_difference(leaves: &LeafValues<f64>, segs: &[Segment], y: &[f64], cfg: &RenderConfig, g: [f64; 3], h: f64) -> FdGradient {
    let mut work = leaves.clone();
    let mut density = Vec::new();
    let mut coeffs = Vec::new();
    for s in segs {
        let i = s.leaf as usize;
        let v = work.density[i];
        work.density[i] = v + h;
        let plus = project(&work, segs, y, cfg, g);
        work.density[i] = v - h;
        let minus = project(&work, segs, y, cfg, g);
        work.density[i] = v;
        density.push((plus - minus) / (2.0 * h));
        let mut row = Vec::new();
        for j in 0..work.coeff_len() {
            let k = i * work.coeff_len() + j;
            let v = work.coeffs[k];
            work.coeffs[k] = v + h;
            let plus = project(&work, segs, y, cfg, g);
            work.coeffs[k] = v - h;
            let minus = project(&work, segs, y, cfg, g);
            work.coeffs[k] = v;
            row.push((plus - minus) / (2.0 * h));
        }
        coeffs.push(row);
    }
    FdGradient { density, coeffs }
}

pub fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    (analytic - numeric).abs() <= (rel * numeric.abs()).max(abs)
}

/// Leaf values at double precision drawn away from the density kink at 0.
pub fn random_values(rng: &mut ChaCha8Rng, count: usize, coeff_len: usize) -> LeafValues<f64> {
    let density = (0..count)
        .map(|_| if rng.random_bool(0.15) { -rng.random_range(0.05..2.0) } else { rng.random_range(0.05..6.0) })
        .collect();
    let coeffs = (0..count * coeff_len).map(|_| rng.random_range(-1.5..1.5)).collect();
    LeafValues::from_parts(coeff_len, density, coeffs).unwrap()
}

pub fn raw_density<S: LeafStore>(s: &S, leaf: u32) -> f64 {
    s.raw_density(leaf)
}

pub fn psnr_f64(a: &[f32], b: &[f32]) -> f64 {
    let mse: f64 = a.iter().zip(b).map(|(x, y)| ((*x as f64) - (*y as f64)).powi(2)).sum::<f64>() / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

/// Random contiguous segments over distinct leaves, with basis values of a
/// random direction.
pub fn random_ray_case(rng: &mut ChaCha8Rng, degree: u32) -> (LeafValues<f64>, Vec<Segment>, Vec<f64>) {
    let count = rng.random_range(1..=64usize);
    let b = ((degree + 1) * (degree + 1)) as usize;
    let leaves = random_values(rng, count, 3 * b);
    let mut t = rng.random_range(0.0..1.0);
    let segs = (0..count)
        .map(|i| {
            let dt = rng.random_range(0.002..0.12);
            let s = Segment { t_enter: t, t_exit: t + dt, leaf: i as u32 };
            t += dt;
            s
        })
        .collect();
    let d = plenoctree::Direction::normalize(Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ))
    .unwrap();
    (leaves, segs, eval_sh_basis(d, degree).unwrap())
}
