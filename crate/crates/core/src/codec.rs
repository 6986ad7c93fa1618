//! `.ploc` (raw) and `.plocz` (compressed) tree files.
//!
//! Both start with the same little-endian header:
//!
//! ```text
//! magic "PLOC" | version u32 | flags u32 (bit0 compressed, bit1 16-bit values)
//! basis kind u8 (0 = SH, 1 = SG)
//!   SH: degree u8
//!   SG: lobe count u32, then per lobe axis 3 x f32 and bandwidth f32
//! bbox min 3 x f32 | bbox max 3 x f32
//! depth u32 | node count u32 | leaf count u32 | root child u32
//! ```
//!
//! A raw file continues with the nodes (8 x u32 child words each), all leaf
//! densities, then all leaf coefficients, at the declared precision.
//!
//! A compressed file continues with one zlib stream holding the nodes, the
//! densities as binary16, and for each basis function a codebook length u32,
//! that many RGB triples as binary16, and one u16 codebook index per leaf.
//! Codebooks come from median-cut quantization of the per-leaf RGB
//! coefficient triples of that basis function.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use half::f16;
use rayon::prelude::*;

use crate::basis::{SgLobe, SphericalBasis, MAX_SH_DEGREE};
use crate::error::{CodecError, Error, Result};
use crate::math::Vec3;
use crate::octree::{BoundingBox, Child, LeafValues, PlenOctree, MAX_DEPTH};

pub const MAGIC: [u8; 4] = *b"PLOC";
pub const VERSION: u32 = 1;
pub const FLAG_COMPRESSED: u32 = 1;
pub const FLAG_HALF: u32 = 2;

/// Largest codebook per basis function.
pub const MAX_CODEBOOK: usize = 1 << 16;

/// Default DEFLATE level (maximum compression).
pub const DEFAULT_LEVEL: u32 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub flags: u32,
    pub basis: SphericalBasis,
    pub bbox: BoundingBox,
    pub depth: u32,
    pub node_count: u32,
    pub leaf_count: u32,
    pub root: Child,
}

impl Header {
    fn of(tree: &PlenOctree, flags: u32) -> Self {
        Header {
            flags,
            basis: tree.basis.clone(),
            bbox: tree.bbox,
            depth: tree.depth,
            node_count: tree.nodes.len() as u32,
            leaf_count: tree.leaves.len() as u32,
            root: tree.root,
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        match &self.basis {
            SphericalBasis::Sh { degree } => {
                out.push(0);
                out.push(*degree as u8);
            }
            SphericalBasis::Sg { lobes } => {
                out.push(1);
                out.extend_from_slice(&(lobes.len() as u32).to_le_bytes());
                for l in lobes {
                    let a = l.axis;
                    for v in [a.x, a.y, a.z, l.bandwidth] {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
            }
        }
        for v in self.bbox.min.to_array().into_iter().chain(self.bbox.max.to_array()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for v in [self.depth, self.node_count, self.leaf_count, self.root.to_bits()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read(r: &mut Reader) -> std::result::Result<Self, CodecError> {
        let magic: [u8; 4] = r.bytes(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CodecError::UnsupportedVersion(version));
        }
        let flags = r.u32()?;
        if flags & !(FLAG_COMPRESSED | FLAG_HALF) != 0 {
            return Err(CodecError::InvalidHeader(format!("unknown flag bits {flags:#x}")));
        }
        let basis = match r.u8()? {
            0 => {
                let degree = r.u8()? as u32;
                if degree > MAX_SH_DEGREE {
                    return Err(CodecError::InvalidHeader(format!("SH degree {degree} above {MAX_SH_DEGREE}")));
                }
                SphericalBasis::Sh { degree }
            }
            1 => {
                let n = r.u32()? as usize;
                r.need(n.saturating_mul(16))?;
                let mut lobes = Vec::with_capacity(n);
                for _ in 0..n {
                    let a = Vec3::new(r.f32()? as f64, r.f32()? as f64, r.f32()? as f64);
                    let bandwidth = r.f32()? as f64;
                    lobes.push(SgLobe { axis: a, bandwidth });
                }
                SphericalBasis::Sg { lobes }
            }
            k => return Err(CodecError::InvalidHeader(format!("unknown basis kind {k}"))),
        };
        basis.validate().map_err(|e| CodecError::InvalidHeader(e.to_string()))?;
        let mut corners = [0.0f64; 6];
        for c in corners.iter_mut() {
            *c = r.f32()? as f64;
        }
        let bbox = BoundingBox::new(Vec3::new(corners[0], corners[1], corners[2]), Vec3::new(corners[3], corners[4], corners[5]))
            .map_err(|e| CodecError::InvalidHeader(e.to_string()))?;
        let depth = r.u32()?;
        if depth > MAX_DEPTH {
            return Err(CodecError::InvalidHeader(format!("depth {depth} above {MAX_DEPTH}")));
        }
        let node_count = r.u32()?;
        let leaf_count = r.u32()?;
        let root = Child::from_bits(r.u32()?).ok_or_else(|| CodecError::InvalidHeader("bad root child word".into()))?;
        Ok(Header { flags, basis, bbox, depth, node_count, leaf_count, root })
    }
}

/// Bounds-checked little-endian cursor.
struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    /// Added to `pos` in error offsets.
    base: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], base: usize) -> Self {
        Self { data, pos: 0, base }
    }

    fn need(&self, n: usize) -> std::result::Result<(), CodecError> {
        let available = self.data.len() - self.pos;
        if n > available {
            return Err(CodecError::Truncated { offset: self.base + self.pos, needed: n, available });
        }
        Ok(())
    }

    fn bytes(&mut self, n: usize) -> std::result::Result<&'a [u8], CodecError> {
        self.need(n)?;
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, CodecError> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn f16(&mut self) -> std::result::Result<f32, CodecError> {
        Ok(f16::from_bits(self.u16()?).to_f32())
    }

    fn value(&mut self, precision: Precision) -> std::result::Result<f32, CodecError> {
        match precision {
            Precision::F32 => self.f32(),
            Precision::F16 => self.f16(),
        }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

fn write_nodes(tree: &PlenOctree, out: &mut Vec<u8>) {
    for node in &tree.nodes {
        for c in node {
            out.extend_from_slice(&c.to_bits().to_le_bytes());
        }
    }
}

fn read_nodes(r: &mut Reader, count: usize) -> std::result::Result<Vec<[Child; 8]>, CodecError> {
    r.need(count.saturating_mul(32))?;
    let mut nodes = Vec::with_capacity(count);
    for i in 0..count {
        let mut node = [Child::EMPTY; 8];
        for c in node.iter_mut() {
            let offset = r.base + r.pos;
            *c = Child::from_bits(r.u32()?)
                .ok_or_else(|| CodecError::Corrupt { offset, what: format!("bad child word in node {i}") })?;
        }
        nodes.push(node);
    }
    Ok(nodes)
}

fn write_value(out: &mut Vec<u8>, v: f32, precision: Precision) {
    match precision {
        Precision::F32 => out.extend_from_slice(&v.to_le_bytes()),
        Precision::F16 => out.extend_from_slice(&f16::from_f32(v).to_bits().to_le_bytes()),
    }
}

fn check_tree(tree: &PlenOctree) -> std::result::Result<(), CodecError> {
    tree.validate().map_err(|e| CodecError::CountMismatch(format!("decoded tree is inconsistent: {e}")))
}

/// Serializes a tree in the raw format.
pub fn encode_raw(tree: &PlenOctree, precision: Precision) -> Vec<u8> {
    let flags = if precision == Precision::F16 { FLAG_HALF } else { 0 };
    let mut out = Vec::new();
    Header::of(tree, flags).write(&mut out);
    write_nodes(tree, &mut out);
    for &v in tree.leaves.density.iter().chain(&tree.leaves.coeffs) {
        write_value(&mut out, v, precision);
    }
    out
}

/// Parses a raw-format tree; all sizes are checked before allocating.
pub fn decode_raw(data: &[u8]) -> std::result::Result<PlenOctree, CodecError> {
    let mut r = Reader::new(data, 0);
    let h = Header::read(&mut r)?;
    if h.flags & FLAG_COMPRESSED != 0 {
        return Err(CodecError::InvalidHeader("compressed file given to the raw decoder".into()));
    }
    let precision = if h.flags & FLAG_HALF != 0 { Precision::F16 } else { Precision::F32 };
    let width = if precision == Precision::F16 { 2 } else { 4 };
    let coeff_len = h.basis.coeff_len();
    let nodes = h.node_count as usize;
    let leaves = h.leaf_count as usize;
    let expected = (nodes as u64) * 32 + (leaves as u64) * (1 + coeff_len as u64) * width;
    let available = r.remaining() as u64;
    if available < expected {
        return Err(CodecError::Truncated { offset: r.pos, needed: expected as usize, available: available as usize });
    }
    if available > expected {
        return Err(CodecError::CountMismatch(format!(
            "{nodes} nodes and {leaves} leaves need {expected} payload bytes, file has {available}"
        )));
    }
    let node_pool = read_nodes(&mut r, nodes)?;
    let mut density = Vec::with_capacity(leaves);
    for _ in 0..leaves {
        density.push(r.value(precision)?);
    }
    let mut coeffs = Vec::with_capacity(leaves * coeff_len);
    for _ in 0..leaves * coeff_len {
        coeffs.push(r.value(precision)?);
    }
    let tree = PlenOctree {
        bbox: h.bbox,
        depth: h.depth,
        basis: h.basis,
        root: h.root,
        nodes: node_pool,
        leaves: LeafValues::from_parts(coeff_len, density, coeffs).expect("sizes checked"),
    };
    check_tree(&tree)?;
    Ok(tree)
}

/// Median-cut quantization of RGB triples into at most `max_boxes` colors.
///
/// The box with the largest single-channel range splits first (earlier boxes
/// win ties) along its widest channel (lowest channel wins ties). Values up
/// to and including the median go to the lower half. Splitting stops when
/// every box is a single point. Returns the box means and one index per
/// input point.
pub fn median_cut(points: &[[f32; 3]], max_boxes: usize) -> (Vec<[f32; 3]>, Vec<u32>) {
    if points.is_empty() {
        return (Vec::new(), Vec::new());
    }
    struct Box3 {
        id: usize,
        range: f32,
        axis: usize,
        members: Vec<u32>,
    }
    impl PartialEq for Box3 {
        fn eq(&self, o: &Self) -> bool {
            self.cmp(o) == Ordering::Equal
        }
    }
    impl Eq for Box3 {}
    impl PartialOrd for Box3 {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Box3 {
        fn cmp(&self, o: &Self) -> Ordering {
            self.range.total_cmp(&o.range).then(o.id.cmp(&self.id))
        }
    }
    let make = |id: usize, members: Vec<u32>| {
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for &m in &members {
            for c in 0..3 {
                lo[c] = lo[c].min(points[m as usize][c]);
                hi[c] = hi[c].max(points[m as usize][c]);
            }
        }
        let mut axis = 0;
        for c in 1..3 {
            if hi[c] - lo[c] > hi[axis] - lo[axis] {
                axis = c;
            }
        }
        Box3 { id, range: hi[axis] - lo[axis], axis, members }
    };

    let mut heap = BinaryHeap::new();
    heap.push(make(0, (0..points.len() as u32).collect()));
    let mut next_id = 1;
    while heap.len() < max_boxes.max(1) {
        let top = heap.peek().expect("heap is never empty");
        if !(top.range > 0.0) {
            break;
        }
        let mut b = heap.pop().unwrap();
        let axis = b.axis;
        b.members.sort_by(|&x, &y| points[x as usize][axis].total_cmp(&points[y as usize][axis]).then(x.cmp(&y)));
        let median = points[b.members[(b.members.len() - 1) / 2] as usize][axis];
        let mut split = b.members.partition_point(|&m| points[m as usize][axis] <= median);
        if split == b.members.len() {
            split = b.members.partition_point(|&m| points[m as usize][axis] < median);
        }
        let upper = b.members.split_off(split);
        heap.push(make(b.id, b.members));
        heap.push(make(next_id, upper));
        next_id += 1;
    }
    let mut boxes = heap.into_vec();
    boxes.sort_by_key(|b| b.id);
    let mut indices = vec![0u32; points.len()];
    let codebook = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut sum = [0.0f64; 3];
            for &m in &b.members {
                indices[m as usize] = i as u32;
                for c in 0..3 {
                    sum[c] += points[m as usize][c] as f64;
                }
            }
            sum.map(|s| (s / b.members.len() as f64) as f32)
        })
        .collect();
    (codebook, indices)
}

/// Compresses an SH tree into the `.plocz` format.
pub fn compress(tree: &PlenOctree, level: u32) -> Result<Vec<u8>> {
    if !matches!(tree.basis, SphericalBasis::Sh { .. }) {
        return Err(CodecError::Unsupported("compression of spherical-Gaussian trees".into()).into());
    }
    if level > 9 {
        return Err(Error::InvalidArgument(format!("DEFLATE level {level} above 9")));
    }
    let b = tree.basis.size();
    let coeff_len = tree.leaves.coeff_len();
    let quantized: Vec<(Vec<[f32; 3]>, Vec<u32>)> = (0..b)
        .into_par_iter()
        .map(|j| {
            let points: Vec<[f32; 3]> = tree
                .leaves
                .coeffs
                .chunks_exact(coeff_len)
                .map(|k| [k[3 * j], k[3 * j + 1], k[3 * j + 2]])
                .collect();
            median_cut(&points, MAX_CODEBOOK)
        })
        .collect();

    let mut payload = Vec::new();
    write_nodes(tree, &mut payload);
    for &d in &tree.leaves.density {
        write_value(&mut payload, d, Precision::F16);
    }
    for (codebook, indices) in &quantized {
        payload.extend_from_slice(&(codebook.len() as u32).to_le_bytes());
        for rgb in codebook {
            for &v in rgb {
                write_value(&mut payload, v, Precision::F16);
            }
        }
        for &i in indices {
            payload.extend_from_slice(&(i as u16).to_le_bytes());
        }
    }
    let mut out = Vec::new();
    Header::of(tree, FLAG_COMPRESSED | FLAG_HALF).write(&mut out);
    let mut enc = ZlibEncoder::new(out, Compression::new(level));
    enc.write_all(&payload).expect("writing to memory");
    Ok(enc.finish().expect("writing to memory"))
}

/// Decodes a `.plocz` byte stream.
pub fn decompress(data: &[u8]) -> std::result::Result<PlenOctree, CodecError> {
    let mut r = Reader::new(data, 0);
    let h = Header::read(&mut r)?;
    if h.flags & FLAG_COMPRESSED == 0 {
        return Err(CodecError::InvalidHeader("raw file given to the decompressor".into()));
    }
    let SphericalBasis::Sh { .. } = h.basis else {
        return Err(CodecError::Unsupported("compressed spherical-Gaussian trees".into()));
    };
    let header_len = r.pos;
    let nodes = h.node_count as u64;
    let leaves = h.leaf_count as u64;
    let b = h.basis.size() as u64;
    let max_len = nodes * 32 + leaves * 2 + b * (4 + MAX_CODEBOOK as u64 * 6 + leaves * 2);
    let mut dec = ZlibDecoder::new(&data[header_len..]);
    let mut payload = Vec::new();
    let res = (&mut dec).take(max_len + 1).read_to_end(&mut payload);
    let consumed = header_len + dec.total_in() as usize;
    match res {
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            return Err(CodecError::Truncated { offset: consumed, needed: 1, available: 0 });
        }
        Err(e) => return Err(CodecError::Corrupt { offset: consumed, what: e.to_string() }),
        Ok(_) => {}
    }
    if payload.len() as u64 > max_len {
        return Err(CodecError::CountMismatch(format!("payload exceeds the {max_len} bytes the header allows")));
    }
    if consumed != data.len() {
        return Err(CodecError::Corrupt { offset: consumed, what: "trailing bytes after the compressed stream".into() });
    }

    // Offsets inside the inflated payload are reported relative to it.
    let mut p = Reader::new(&payload, 0);
    let node_pool = read_nodes(&mut p, nodes as usize)?;
    p.need(leaves as usize * 2)?;
    let density: Vec<f32> = (0..leaves).map(|_| p.f16()).collect::<std::result::Result<_, _>>()?;
    let coeff_len = 3 * b as usize;
    let mut coeffs = vec![0.0f32; leaves as usize * coeff_len];
    for j in 0..b as usize {
        let len = p.u32()? as usize;
        if len > MAX_CODEBOOK || (len == 0 && leaves > 0) {
            return Err(CodecError::CountMismatch(format!("codebook {j} has {len} entries")));
        }
        p.need(len * 6)?;
        let mut codebook = Vec::with_capacity(len);
        for _ in 0..len {
            codebook.push([p.f16()?, p.f16()?, p.f16()?]);
        }
        p.need(leaves as usize * 2)?;
        for leaf in 0..leaves as usize {
            let index = p.u16()? as usize;
            let rgb = codebook.get(index).ok_or(CodecError::IndexOutOfRange { basis: j, index, len })?;
            coeffs[leaf * coeff_len + 3 * j..leaf * coeff_len + 3 * j + 3].copy_from_slice(rgb);
        }
    }
    if p.remaining() != 0 {
        return Err(CodecError::CountMismatch(format!("{} unexpected payload bytes", p.remaining())));
    }
    let tree = PlenOctree {
        bbox: h.bbox,
        depth: h.depth,
        basis: h.basis,
        root: h.root,
        nodes: node_pool,
        leaves: LeafValues::from_parts(coeff_len, density, coeffs).expect("sizes checked"),
    };
    check_tree(&tree)?;
    Ok(tree)
}

/// Decodes either format, dispatching on the header flags.
pub fn decode(data: &[u8]) -> std::result::Result<PlenOctree, CodecError> {
    let mut r = Reader::new(data, 0);
    let h = Header::read(&mut r)?;
    if h.flags & FLAG_COMPRESSED != 0 {
        decompress(data)
    } else {
        decode_raw(data)
    }
}

pub fn save_raw(tree: &PlenOctree, path: &Path, precision: Precision) -> Result<()> {
    fs::write(path, encode_raw(tree, precision)).map_err(|e| Error::io(path, e))
}

pub fn save_compressed(tree: &PlenOctree, path: &Path, level: u32) -> Result<()> {
    let bytes = compress(tree, level)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_raw(path: &Path) -> Result<PlenOctree> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_raw(&data)?)
}

/// Loads a `.ploc` or `.plocz` file.
pub fn load(path: &Path) -> Result<PlenOctree> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&data)?)
}

/// Rounds every leaf value to the nearest binary16 (ties to even).
pub fn round_to_f16(tree: &PlenOctree) -> PlenOctree {
    let mut out = tree.clone();
    for v in out.leaves.density.iter_mut().chain(out.leaves.coeffs.iter_mut()) {
        *v = f16::from_f32(*v).to_f32();
    }
    out
}
