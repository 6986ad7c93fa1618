//! The PlenOctree container and ray/tree segment extraction.
//!
//! Leaves own half-open cells `[lo, hi)` on every axis; the upper face of the
//! global bounding box is inclusive. Empty child slots are free space.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::basis::{color_logits, Direction, SphericalBasis};
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Deepest supported tree (1024 cells per axis).
pub const MAX_DEPTH: u32 = 10;

const TAG_SHIFT: u32 = 30;
const INDEX_MASK: u32 = (1 << TAG_SHIFT) - 1;
const TAG_NODE: u32 = 1;
const TAG_LEAF: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::NonFinite("bounding box corner".into()));
        }
        if max.x <= min.x || max.y <= min.y || max.z <= min.z {
            return Err(Error::InvalidArgument(format!(
                "bounding box max {max:?} must exceed min {min:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Axis-aligned cube of edge `edge` centered at `center`.
    pub fn cube(center: Vec3, edge: f64) -> Result<Self> {
        let h = Vec3::splat(edge / 2.0);
        Self::new(center - h, center + h)
    }

    /// Smallest cube sharing this box's center that contains it.
    pub fn to_cube(self) -> Self {
        let size = self.max - self.min;
        let edge = size.max_component();
        let center = (self.min + self.max) / 2.0;
        let h = Vec3::splat(edge / 2.0);
        Self { min: center - h, max: center + h }
    }

    /// Cube containing this box whose corners are exactly representable as
    /// f32, so the box survives a round trip through the file formats.
    pub fn snap_to_f32(self) -> Self {
        let cube = self.to_cube();
        let quantum = 2f64.powi(cube.edge().log2().ceil() as i32 - 16);
        let center = cube.center();
        let c = Vec3::new(
            (center.x / quantum).round() * quantum,
            (center.y / quantum).round() * quantum,
            (center.z / quantum).round() * quantum,
        );
        let h = ((cube.edge() / 2.0 + (c - center).max_component().abs().max((c - center).min_component().abs())) / quantum).ceil() * quantum;
        let snapped = Self { min: c - Vec3::splat(h), max: c + Vec3::splat(h) };
        let exact = snapped.min.to_array().iter().chain(&snapped.max.to_array()).all(|&v| v as f32 as f64 == v);
        if exact { snapped } else { cube }
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    /// Edge length along x (all edges are equal for a tree's box).
    pub fn edge(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Coordinate of lattice plane `index` out of `2^level` along `axis`.
    #[inline]
    pub fn plane(&self, axis: usize, level: u32, index: u32) -> f64 {
        let n = (1u64 << level) as f64;
        self.min[axis] + (self.max[axis] - self.min[axis]) * (index as f64 / n)
    }

    /// Center of cell `index` of a `2^level` lattice.
    pub fn cell_center(&self, level: u32, index: [u32; 3]) -> Vec3 {
        let n = (1u64 << level) as f64;
        let s = self.size();
        Vec3::new(
            self.min.x + s.x * (index[0] as f64 + 0.5) / n,
            self.min.y + s.y * (index[1] as f64 + 0.5) / n,
            self.min.z + s.z * (index[2] as f64 + 0.5) / n,
        )
    }

    /// Parametric entry/exit of a ray, clipped to `[ray.t_near, ray.t_far]`.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        let o = ray.origin;
        let d = ray.dir.vec();
        let mut t0 = ray.t_near;
        let mut t1 = ray.t_far;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let ta = (self.min[a] - o[a]) * inv;
            let tb = (self.max[a] - o[a]) * inv;
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        (t1 > t0).then_some((t0, t1))
    }
}

/// A ray `origin + t * dir` restricted to `[t_near, t_far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Direction,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Direction, t_near: f64, t_far: f64) -> Result<Self> {
        if !origin.is_finite() || t_near.is_nan() || t_far.is_nan() {
            return Err(Error::NonFinite("ray origin or bounds".into()));
        }
        if t_near >= t_far {
            return Err(Error::InvalidArgument(format!(
                "ray t_near {t_near} must be below t_far {t_far}"
            )));
        }
        Ok(Self { origin, dir, t_near, t_far })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir.vec() * t
    }
}

/// Tagged child slot: empty, internal node or leaf, with a 30-bit index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Child(u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChildRef {
    Empty,
    Node(u32),
    Leaf(u32),
}

impl Child {
    pub const EMPTY: Child = Child(0);

    pub fn node(index: u32) -> Self {
        debug_assert!(index <= INDEX_MASK);
        Child((TAG_NODE << TAG_SHIFT) | index)
    }

    pub fn leaf(index: u32) -> Self {
        debug_assert!(index <= INDEX_MASK);
        Child((TAG_LEAF << TAG_SHIFT) | index)
    }

    pub fn get(self) -> ChildRef {
        match self.0 >> TAG_SHIFT {
            TAG_NODE => ChildRef::Node(self.0 & INDEX_MASK),
            TAG_LEAF => ChildRef::Leaf(self.0 & INDEX_MASK),
            _ => ChildRef::Empty,
        }
    }

    pub fn to_bits(self) -> u32 {
        self.0
    }

    /// Rejects the reserved tag `3` and nonzero payloads on empty slots.
    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits >> TAG_SHIFT {
            0 if bits != 0 => None,
            3 => None,
            _ => Some(Child(bits)),
        }
    }
}

/// Storage precision of leaf values.
pub trait Scalar: Copy + Into<f64> + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Leaf pool: one pre-activation density and `3 * B` coefficients per leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafValues<T> {
    coeff_len: usize,
    pub density: Vec<T>,
    pub coeffs: Vec<T>,
}

impl<T: Scalar> LeafValues<T> {
    pub fn new(coeff_len: usize) -> Self {
        Self { coeff_len, density: Vec::new(), coeffs: Vec::new() }
    }

    pub fn from_parts(coeff_len: usize, density: Vec<T>, coeffs: Vec<T>) -> Result<Self> {
        if coeffs.len() != density.len() * coeff_len {
            return Err(Error::LengthMismatch {
                expected: density.len() * coeff_len,
                actual: coeffs.len(),
            });
        }
        Ok(Self { coeff_len, density, coeffs })
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn coeff_len(&self) -> usize {
        self.coeff_len
    }

    pub fn push(&mut self, density: T, coeffs: &[T]) -> u32 {
        assert_eq!(coeffs.len(), self.coeff_len);
        self.density.push(density);
        self.coeffs.extend_from_slice(coeffs);
        (self.density.len() - 1) as u32
    }

    pub fn coeffs_of(&self, leaf: u32) -> &[T] {
        let s = leaf as usize * self.coeff_len;
        &self.coeffs[s..s + self.coeff_len]
    }

    pub fn coeffs_of_mut(&mut self, leaf: u32) -> &mut [T] {
        let s = leaf as usize * self.coeff_len;
        &mut self.coeffs[s..s + self.coeff_len]
    }

    /// Same values at another precision.
    pub fn convert<U: Scalar>(&self) -> LeafValues<U> {
        LeafValues {
            coeff_len: self.coeff_len,
            density: self.density.iter().map(|&v| U::from_f64(v.into())).collect(),
            coeffs: self.coeffs.iter().map(|&v| U::from_f64(v.into())).collect(),
        }
    }
}

/// Read access to leaf values for rendering and differentiation.
pub trait LeafStore: Sync {
    /// Stored pre-activation density; the effective density is `max(raw, 0)`.
    fn raw_density(&self, leaf: u32) -> f64;
    /// Per-channel pre-sigmoid color sums for the given basis values.
    fn logits(&self, leaf: u32, basis_values: &[f64]) -> [f64; 3];
}

impl<T: Scalar> LeafStore for LeafValues<T> {
    #[inline]
    fn raw_density(&self, leaf: u32) -> f64 {
        self.density[leaf as usize].into()
    }

    #[inline]
    fn logits(&self, leaf: u32, basis_values: &[f64]) -> [f64; 3] {
        color_logits(self.coeffs_of(leaf), basis_values)
    }
}

/// One ray/leaf overlap `[t_enter, t_exit)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub t_enter: f64,
    pub t_exit: f64,
    pub leaf: u32,
}

impl Segment {
    pub fn delta(&self) -> f64 {
        self.t_exit - self.t_enter
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_enter + self.t_exit)
    }
}

/// Ordered, non-overlapping segments along one ray.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentSequence {
    pub segments: Vec<Segment>,
}

impl SegmentSequence {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::delta).sum()
    }

    /// Checks ordering and positive lengths.
    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.t_exit > s.t_enter) || !s.t_enter.is_finite() || !s.t_exit.is_finite() {
                return Err(Error::InvalidArgument(format!("segment {i} has non-positive length")));
            }
            if s.t_enter < prev {
                return Err(Error::InvalidArgument(format!("segment {i} overlaps its predecessor")));
            }
            prev = s.t_exit;
        }
        Ok(())
    }
}

/// Sparse 8-ary tree over a cubic box with leaves at depth `<= depth`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlenOctree {
    pub bbox: BoundingBox,
    pub depth: u32,
    pub basis: SphericalBasis,
    pub root: Child,
    pub nodes: Vec<[Child; 8]>,
    pub leaves: LeafValues<f32>,
}

impl PlenOctree {
    pub fn empty(bbox: BoundingBox, depth: u32, basis: SphericalBasis) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(Error::InvalidArgument(format!("depth {depth} exceeds {MAX_DEPTH}")));
        }
        basis.validate()?;
        let coeff_len = basis.coeff_len();
        Ok(Self {
            bbox: bbox.to_cube(),
            depth,
            basis,
            root: Child::EMPTY,
            nodes: Vec::new(),
            leaves: LeafValues::new(coeff_len),
        })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Grid resolution of the deepest level.
    pub fn resolution(&self) -> u32 {
        1 << self.depth
    }

    pub fn leaf(&self, leaf: u32) -> (f32, &[f32]) {
        (self.leaves.density[leaf as usize], self.leaves.coeffs_of(leaf))
    }

    /// Inserts a leaf covering cell `index` of the `2^level` lattice,
    /// creating internal nodes on the way.
    pub fn insert_leaf(&mut self, level: u32, index: [u32; 3], density: f32, coeffs: &[f32]) -> Result<u32> {
        if level > self.depth {
            return Err(Error::InvalidArgument(format!("level {level} deeper than tree depth {}", self.depth)));
        }
        let n = 1u32 << level;
        if index.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument(format!("cell {index:?} outside level {level}")));
        }
        if coeffs.len() != self.leaves.coeff_len() {
            return Err(Error::LengthMismatch { expected: self.leaves.coeff_len(), actual: coeffs.len() });
        }
        let occupied = || Error::InvalidArgument(format!("cell {index:?} at level {level} overlaps an existing leaf"));
        if level == 0 {
            if self.root != Child::EMPTY {
                return Err(occupied());
            }
            let id = self.leaves.push(density, coeffs);
            self.root = Child::leaf(id);
            return Ok(id);
        }
        if self.root == Child::EMPTY {
            self.nodes.push([Child::EMPTY; 8]);
            self.root = Child::node(self.nodes.len() as u32 - 1);
        }
        let mut node = match self.root.get() {
            ChildRef::Node(i) => i,
            _ => return Err(occupied()),
        };
        for l in 1..=level {
            let shift = level - l;
            let slot = child_slot([index[0] >> shift, index[1] >> shift, index[2] >> shift]);
            let current = self.nodes[node as usize][slot];
            if l == level {
                if current != Child::EMPTY {
                    return Err(occupied());
                }
                let id = self.leaves.push(density, coeffs);
                self.nodes[node as usize][slot] = Child::leaf(id);
                return Ok(id);
            }
            node = match current.get() {
                ChildRef::Node(i) => i,
                ChildRef::Leaf(_) => return Err(occupied()),
                ChildRef::Empty => {
                    self.nodes.push([Child::EMPTY; 8]);
                    let i = self.nodes.len() as u32 - 1;
                    self.nodes[node as usize][slot] = Child::node(i);
                    i
                }
            };
        }
        unreachable!()
    }

    /// Leaf containing `x`, or `None` outside the box or in free space.
    pub fn query_point(&self, x: Vec3) -> Option<u32> {
        if !self.bbox.contains(x) {
            return None;
        }
        let mut child = self.root;
        let mut index = [0u32; 3];
        let mut level = 0;
        loop {
            match child.get() {
                ChildRef::Empty => return None,
                ChildRef::Leaf(id) => return Some(id),
                ChildRef::Node(node) => {
                    let mut slot = 0;
                    for a in 0..3 {
                        let mid = self.bbox.plane(a, level + 1, 2 * index[a] + 1);
                        index[a] *= 2;
                        if x[a] >= mid {
                            index[a] += 1;
                            slot |= 1 << a;
                        }
                    }
                    level += 1;
                    child = self.nodes[node as usize][slot];
                }
            }
        }
    }

    /// Density and coefficients at `x`.
    pub fn query_values(&self, x: Vec3) -> Option<(f32, &[f32])> {
        self.query_point(x).map(|id| self.leaf(id))
    }

    pub fn extract_segments(&self, ray: &Ray) -> SegmentSequence {
        let mut segments = Vec::new();
        self.extract_segments_into(ray, &mut segments);
        SegmentSequence { segments }
    }

    /// Top-down parametric traversal; empty subtrees are skipped whole.
    pub fn extract_segments_into(&self, ray: &Ray, out: &mut Vec<Segment>) {
        out.clear();
        self.traverse(ray, |s| {
            out.push(s);
            true
        });
    }

    /// Feeds segments in ray order to `visit` until it returns `false`.
    pub fn traverse(&self, ray: &Ray, mut visit: impl FnMut(Segment) -> bool) {
        if self.root == Child::EMPTY {
            return;
        }
        let o = ray.origin;
        let d = ray.dir.vec();
        let mut inv = [0.0; 3];
        let mut flip = 0usize;
        let mut t0 = [0.0; 3];
        let mut t1 = [0.0; 3];
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.bbox.min[a] || o[a] > self.bbox.max[a] {
                    return;
                }
                t0[a] = f64::NEG_INFINITY;
                t1[a] = f64::INFINITY;
            } else {
                inv[a] = 1.0 / d[a];
                let ta = (self.bbox.min[a] - o[a]) * inv[a];
                let tb = (self.bbox.max[a] - o[a]) * inv[a];
                if d[a] < 0.0 {
                    flip |= 1 << a;
                    t0[a] = tb;
                    t1[a] = ta;
                } else {
                    t0[a] = ta;
                    t1[a] = tb;
                }
            }
        }
        let enter = t0[0].max(t0[1]).max(t0[2]);
        let exit = t1[0].min(t1[1]).min(t1[2]);
        if exit <= enter || exit <= ray.t_near || enter >= ray.t_far {
            return;
        }
        let walk = Walk { tree: self, ray, inv, flip };
        walk.visit(self.root, 0, [0; 3], t0, t1, &mut visit);
    }

    /// Hash of the node graph (not the leaf values).
    pub fn topology_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.depth.hash(&mut h);
        self.root.hash(&mut h);
        self.nodes.hash(&mut h);
        self.leaves.len().hash(&mut h);
        h.finish()
    }

    /// Checks that the node graph is a tree of depth `<= depth` whose leaves
    /// are each referenced exactly once, and that leaf values are finite.
    pub fn validate(&self) -> Result<()> {
        let mut node_seen = vec![false; self.nodes.len()];
        let mut leaf_seen = vec![false; self.leaves.len()];
        let mut stack = vec![(self.root, 0u32)];
        while let Some((child, level)) = stack.pop() {
            match child.get() {
                ChildRef::Empty => {}
                ChildRef::Leaf(i) => {
                    let seen = leaf_seen
                        .get_mut(i as usize)
                        .ok_or_else(|| Error::InvalidArgument(format!("leaf index {i} out of range")))?;
                    if *seen {
                        return Err(Error::InvalidArgument(format!("leaf {i} referenced twice")));
                    }
                    if level > self.depth {
                        return Err(Error::InvalidArgument(format!("leaf {i} below tree depth")));
                    }
                    *seen = true;
                }
                ChildRef::Node(i) => {
                    let seen = node_seen
                        .get_mut(i as usize)
                        .ok_or_else(|| Error::InvalidArgument(format!("node index {i} out of range")))?;
                    if *seen {
                        return Err(Error::InvalidArgument(format!("node {i} referenced twice")));
                    }
                    if level >= self.depth {
                        return Err(Error::InvalidArgument(format!("node {i} at depth {level} has no room for leaves")));
                    }
                    *seen = true;
                    for &c in &self.nodes[i as usize] {
                        stack.push((c, level + 1));
                    }
                }
            }
        }
        if let Some(i) = node_seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("node {i} unreachable")));
        }
        if let Some(i) = leaf_seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("leaf {i} unreachable")));
        }
        if self.leaves.density.iter().chain(&self.leaves.coeffs).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("leaf value".into()));
        }
        Ok(())
    }

    /// Visits every leaf with its level and lattice index.
    pub fn for_each_leaf(&self, mut f: impl FnMut(u32, u32, [u32; 3])) {
        let mut stack = vec![(self.root, 0u32, [0u32; 3])];
        while let Some((child, level, index)) = stack.pop() {
            match child.get() {
                ChildRef::Empty => {}
                ChildRef::Leaf(id) => f(id, level, index),
                ChildRef::Node(n) => {
                    for (slot, &c) in self.nodes[n as usize].iter().enumerate() {
                        let ci = [
                            index[0] * 2 + (slot as u32 & 1),
                            index[1] * 2 + ((slot as u32 >> 1) & 1),
                            index[2] * 2 + ((slot as u32 >> 2) & 1),
                        ];
                        stack.push((c, level + 1, ci));
                    }
                }
            }
        }
    }
}

// Traversal parameters are never NaN, so plain comparisons suffice.
#[inline(always)]
fn fmax(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

#[inline(always)]
fn fmin(a: f64, b: f64) -> f64 {
    if a < b {
        a
    } else {
        b
    }
}

#[inline(always)]
fn max3(v: [f64; 3]) -> f64 {
    fmax(fmax(v[0], v[1]), v[2])
}

#[inline(always)]
fn min3(v: [f64; 3]) -> f64 {
    fmin(fmin(v[0], v[1]), v[2])
}

#[inline]
fn child_slot(index: [u32; 3]) -> usize {
    ((index[0] & 1) | ((index[1] & 1) << 1) | ((index[2] & 1) << 2)) as usize
}

struct Walk<'a> {
    tree: &'a PlenOctree,
    ray: &'a Ray,
    inv: [f64; 3],
    flip: usize,
}

impl Walk<'_> {
    /// `t0`/`t1` are the per-axis entry/exit parameters of the current cell;
    /// axes with a zero direction component carry `(-inf, +inf)`.
    /// Returns `false` once `sink` asks to stop.
    fn visit<F: FnMut(Segment) -> bool>(&self, child: Child, level: u32, index: [u32; 3], t0: [f64; 3], t1: [f64; 3], sink: &mut F) -> bool {
        match child.get() {
            ChildRef::Empty => true,
            ChildRef::Leaf(leaf) => {
                let a = fmax(max3(t0), self.ray.t_near);
                let b = fmin(min3(t1), self.ray.t_far);
                b <= a || sink(Segment { t_enter: a, t_exit: b, leaf })
            }
            ChildRef::Node(node) => {
                let children = &self.tree.nodes[node as usize];
                let o = self.ray.origin;
                let mut tm = [0.0; 3];
                for a in 0..3 {
                    tm[a] = if self.inv[a] == 0.0 {
                        if o[a] < self.tree.bbox.plane(a, level + 1, 2 * index[a] + 1) {
                            f64::INFINITY
                        } else {
                            f64::NEG_INFINITY
                        }
                    } else {
                        0.5 * (t0[a] + t1[a])
                    };
                }
                let enter = max3(t0);
                // Children are enumerated in ray order: bit `a` of `order` set
                // means the far half along axis `a`. XOR with `flip` gives the
                // slot; zero components are never flipped and `tm = -inf`
                // already selects their upper half.
                let mut order = 0usize;
                for a in 0..3 {
                    if tm[a] <= enter {
                        order |= 1 << a;
                    }
                }
                loop {
                    let mut c0 = t0;
                    let mut c1 = t1;
                    for a in 0..3 {
                        if order & (1 << a) != 0 {
                            c0[a] = tm[a];
                        } else {
                            c1[a] = tm[a];
                        }
                    }
                    let c_enter = max3(c0);
                    let c_exit = min3(c1);
                    if c_enter >= self.ray.t_far {
                        return true;
                    }
                    let slot = order ^ self.flip;
                    if children[slot] != Child::EMPTY && c_exit > self.ray.t_near && c_exit > c_enter {
                        let ci = [
                            index[0] * 2 + (slot as u32 & 1),
                            index[1] * 2 + ((slot as u32 >> 1) & 1),
                            index[2] * 2 + ((slot as u32 >> 2) & 1),
                        ];
                        if !self.visit(children[slot], level + 1, ci, c0, c1, sink) {
                            return false;
                        }
                    }
                    let exit_axis = if c1[0] <= c1[1] && c1[0] <= c1[2] {
                        0
                    } else if c1[1] <= c1[2] {
                        1
                    } else {
                        2
                    };
                    if order & (1 << exit_axis) != 0 || !c1[exit_axis].is_finite() {
                        return true;
                    }
                    order |= 1 << exit_axis;
                }
            }
        }
    }
}

/// Dense `edge^3` grid of densities and (optionally) coefficients, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid {
    pub edge: usize,
    pub coeff_len: usize,
    pub density: Vec<f32>,
    /// Empty, or `edge^3 * coeff_len` values.
    pub coeffs: Vec<f32>,
}

impl DenseGrid {
    pub fn new(edge: usize, coeff_len: usize, with_coeffs: bool) -> Self {
        let n = edge * edge * edge;
        Self {
            edge,
            coeff_len,
            density: vec![0.0; n],
            coeffs: if with_coeffs { vec![0.0; n * coeff_len] } else { Vec::new() },
        }
    }

    #[inline]
    pub fn index(&self, cell: [usize; 3]) -> usize {
        cell[0] + self.edge * (cell[1] + self.edge * cell[2])
    }

    #[inline]
    pub fn cell_of(&self, index: usize) -> [usize; 3] {
        let e = self.edge;
        [index % e, (index / e) % e, index / (e * e)]
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn coeffs_at(&self, index: usize) -> &[f32] {
        &self.coeffs[index * self.coeff_len..(index + 1) * self.coeff_len]
    }
}

/// Value of one deepest-level cell for [`build_from_cells`].
#[derive(Clone, Debug, PartialEq)]
pub struct CellValue {
    pub cell: [u32; 3],
    pub density: f32,
    pub coeffs: Vec<f32>,
}

fn depth_for_edge(edge: usize) -> Result<u32> {
    if edge == 0 || !edge.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(edge));
    }
    let depth = edge.trailing_zeros();
    if depth > MAX_DEPTH {
        return Err(Error::InvalidArgument(format!("grid edge {edge} exceeds 2^{MAX_DEPTH}")));
    }
    Ok(depth)
}

/// Builds a tree holding the masked cells of a dense grid as deepest leaves.
pub fn build_from_dense(grid: &DenseGrid, mask: &[bool], bbox: BoundingBox, basis: SphericalBasis) -> Result<PlenOctree> {
    depth_for_edge(grid.edge)?;
    if mask.len() != grid.len() {
        return Err(Error::LengthMismatch { expected: grid.len(), actual: mask.len() });
    }
    if grid.coeff_len != basis.coeff_len() {
        return Err(Error::LengthMismatch { expected: basis.coeff_len(), actual: grid.coeff_len });
    }
    let has_coeffs = !grid.coeffs.is_empty();
    let zeros = vec![0.0f32; grid.coeff_len];
    let cells = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| {
            let c = grid.cell_of(i);
            CellValue {
                cell: [c[0] as u32, c[1] as u32, c[2] as u32],
                density: grid.density[i],
                coeffs: if has_coeffs { grid.coeffs_at(i).to_vec() } else { zeros.clone() },
            }
        })
        .collect();
    build_from_cells(grid.edge, cells, bbox, basis)
}

/// Builds a tree from sparse deepest-level cells. Nodes are laid out in
/// depth-first order and leaves in Morton order.
pub fn build_from_cells(edge: usize, mut cells: Vec<CellValue>, bbox: BoundingBox, basis: SphericalBasis) -> Result<PlenOctree> {
    let depth = depth_for_edge(edge)?;
    let mut tree = PlenOctree::empty(bbox, depth, basis)?;
    let coeff_len = tree.leaves.coeff_len();
    for c in &cells {
        if c.cell.iter().any(|&i| i as usize >= edge) {
            return Err(Error::InvalidArgument(format!("cell {:?} outside grid of edge {edge}", c.cell)));
        }
        if c.coeffs.len() != coeff_len {
            return Err(Error::LengthMismatch { expected: coeff_len, actual: c.coeffs.len() });
        }
    }
    let mut keyed: Vec<(u64, CellValue)> = cells.drain(..).map(|c| (morton(c.cell), c)).collect();
    keyed.sort_by_key(|(k, _)| *k);
    if keyed.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument("duplicate cells".into()));
    }
    for (_, c) in &keyed {
        tree.leaves.push(c.density, &c.coeffs);
    }
    let codes: Vec<u64> = keyed.iter().map(|(k, _)| *k).collect();
    tree.root = build_range(&mut tree.nodes, &codes, 0, depth, 0);
    Ok(tree)
}

fn build_range(nodes: &mut Vec<[Child; 8]>, codes: &[u64], level: u32, depth: u32, first_leaf: usize) -> Child {
    if codes.is_empty() {
        return Child::EMPTY;
    }
    if level == depth {
        debug_assert_eq!(codes.len(), 1);
        return Child::leaf(first_leaf as u32);
    }
    let id = nodes.len();
    nodes.push([Child::EMPTY; 8]);
    let shift = 3 * (depth - level - 1);
    let mut start = 0;
    for slot in 0..8u64 {
        let end = start + codes[start..].partition_point(|c| (c >> shift) & 7 <= slot);
        let child = build_range(nodes, &codes[start..end], level + 1, depth, first_leaf + start);
        nodes[id][slot as usize] = child;
        start = end;
    }
    Child::node(id as u32)
}

/// Interleaves cell bits as `... z1 y1 x1 z0 y0 x0`.
pub fn morton(cell: [u32; 3]) -> u64 {
    fn spread(v: u32) -> u64 {
        let mut x = v as u64 & 0x1f_ffff;
        x = (x | (x << 32)) & 0x1f00000000ffff;
        x = (x | (x << 16)) & 0x1f0000ff0000ff;
        x = (x | (x << 8)) & 0x100f00f00f00f00f;
        x = (x | (x << 4)) & 0x10c30c30c30c30c3;
        x = (x | (x << 2)) & 0x1249249249249249;
        x
    }
    spread(cell[0]) | (spread(cell[1]) << 1) | (spread(cell[2]) << 2)
}
