//! Synthetic annotation noise: lesion outlines simplified to a few vertices,
//! bounding rectangles, and near-full-frame masks.
//!
//! Coordinates are `(row, col)` on the pixel-corner lattice: pixel `(r, c)`
//! covers `[r, r+1] x [c, c+1]` and has its centre at `(r+0.5, c+0.5)`.
//! Polygons are stored with positive orientation, meaning positive signed
//! area when `col` is taken as x and `row` as y.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::Mask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub row: f64,
    pub col: f64,
}

impl Point {
    pub fn new(row: f64, col: f64) -> Self {
        Point { row, col }
    }
}

/// Closed polygon (last vertex connects to the first).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

fn signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        acc += a.col * b.row - b.col * a.row;
    }
    acc / 2.0
}

impl Polygon {
    /// Validates vertex count, distinct neighbours and nonzero area; reverses
    /// the vertex order if needed to make the orientation positive.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::contract(format!("polygon needs >= 3 vertices, got {}", vertices.len())));
        }
        if vertices.iter().any(|p| !p.row.is_finite() || !p.col.is_finite()) {
            return Err(Error::contract("polygon vertex is not finite"));
        }
        let n = vertices.len();
        if (0..n).any(|i| vertices[i] == vertices[(i + 1) % n]) {
            return Err(Error::contract("polygon has repeated consecutive vertices"));
        }
        let area = signed_area(&vertices);
        if area == 0.0 {
            return Err(Error::contract("degenerate polygon with zero area"));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Polygon { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// `POLY <n>` followed by one `row,col` line per vertex.
    pub fn to_text(&self) -> String {
        let mut s = format!("POLY {}\n", self.vertices.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{},{}", p.row, p.col);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::contract("empty polygon file"))?;
        let n: usize = header
            .strip_prefix("POLY ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::contract(format!("bad polygon header {header:?}")))?;
        let mut vertices = Vec::with_capacity(n);
        for line in lines {
            let (r, c) = line.split_once(',').ok_or_else(|| Error::contract(format!("bad vertex line {line:?}")))?;
            let row = r.trim().parse().map_err(|_| Error::contract(format!("bad row in {line:?}")))?;
            let col = c.trim().parse().map_err(|_| Error::contract(format!("bad col in {line:?}")))?;
            vertices.push(Point::new(row, col));
        }
        if vertices.len() != n {
            return Err(Error::contract(format!("header says {n} vertices, found {}", vertices.len())));
        }
        Polygon::new(vertices)
    }
}

/// Non-fatal conditions met while synthesising noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NoiseWarning {
    /// The mask had several 4-connected components; the largest was used.
    MultipleComponents { count: usize },
    /// Fewer vertices than requested; the polygon was returned unchanged.
    TooFewVertices { requested: usize, available: usize },
}

/// Labels 4-connected foreground components; returns the label image
/// (0 = background) and the pixel count of each label (index 0 unused).
fn label_components(mask: &Mask) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0usize; h * w];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask.data()[j] == 1 && labels[j] == 0 {
                    labels[j] = id;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Number of 4-connected foreground components.
pub fn component_count(mask: &Mask) -> usize {
    label_components(mask).1.len() - 1
}

/// The largest 4-connected component (lowest label wins ties), or `None` for an empty mask.
pub fn largest_component(mask: &Mask) -> Option<(Mask, usize)> {
    let (labels, sizes) = label_components(mask);
    let count = sizes.len() - 1;
    let best = (1..sizes.len()).fold(None, |b: Option<usize>, i| match b {
        Some(j) if sizes[j] >= sizes[i] => Some(j),
        _ => Some(i),
    })?;
    let data = labels.iter().map(|&l| (l == best) as u8).collect();
    Some((Mask::new(mask.height(), mask.width(), data).expect("same size"), count))
}

/// Lattice direction of a boundary step.
fn dir(a: (i64, i64), b: (i64, i64)) -> (i64, i64) {
    (b.0 - a.0, b.1 - a.1)
}

/// Cross product with col as x and row as y.
fn cross(d1: (i64, i64), d2: (i64, i64)) -> i64 {
    d1.1 * d2.0 - d1.0 * d2.1
}

/// Outer boundary of the largest 4-connected component, traced along pixel
/// edges, with collinear vertices removed.
pub fn mask_to_polygon(mask: &Mask) -> Result<(Polygon, Vec<NoiseWarning>)> {
    let (comp, count) = largest_component(mask).ok_or_else(|| Error::contract("mask has no foreground"))?;
    let mut warnings = Vec::new();
    if count > 1 {
        warnings.push(NoiseWarning::MultipleComponents { count });
    }
    let (h, w) = (comp.height() as i64, comp.width() as i64);
    let inside = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && comp.get(r as usize, c as usize);

    // Directed boundary edges keyed by start vertex, with the interior on the left
    // (positive orientation). Each vertex has at most two outgoing edges.
    let mut out_edges: Vec<[Option<(i64, i64)>; 2]> = vec![[None, None]; ((h + 1) * (w + 1)) as usize];
    let key = |v: (i64, i64)| (v.0 * (w + 1) + v.1) as usize;
    let mut add = |a: (i64, i64), b: (i64, i64)| {
        let slot = &mut out_edges[key(a)];
        if slot[0].is_none() {
            slot[0] = Some(b);
        } else {
            slot[1] = Some(b);
        }
    };
    let mut start = None;
    for r in 0..h {
        for c in 0..w {
            if !inside(r, c) {
                continue;
            }
            start.get_or_insert((r, c));
            if !inside(r - 1, c) {
                add((r, c), (r, c + 1));
            }
            if !inside(r, c + 1) {
                add((r, c + 1), (r + 1, c + 1));
            }
            if !inside(r + 1, c) {
                add((r + 1, c + 1), (r + 1, c));
            }
            if !inside(r, c - 1) {
                add((r + 1, c), (r, c));
            }
        }
    }
    let start = start.expect("component is nonempty");
    let mut path = vec![start];
    let mut prev = start;
    let mut cur = (start.0, start.1 + 1);
    while cur != start {
        path.push(cur);
        let d_in = dir(prev, cur);
        let options = out_edges[key(cur)];
        // At a pinch vertex keep hugging the current pixel: prefer the left turn.
        let next = options
            .iter()
            .flatten()
            .copied()
            .max_by_key(|&n| cross(d_in, dir(cur, n)))
            .ok_or_else(|| Error::contract("open boundary while tracing contour"))?;
        prev = cur;
        cur = next;
    }
    let n = path.len();
    let corners: Vec<Point> = (0..n)
        .filter(|&i| {
            let a = path[(i + n - 1) % n];
            let b = path[i];
            let c = path[(i + 1) % n];
            dir(a, b) != dir(b, c)
        })
        .map(|i| Point::new(path[i].0 as f64, path[i].1 as f64))
        .collect();
    Ok((Polygon::new(corners)?, warnings))
}

/// Vertex importance used by [`simplify_to_k`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Importance {
    /// `(π − interior angle) · (|prev edge| + |next edge|) / 2`.
    #[default]
    AngleLength,
    /// Area of the triangle formed with the two neighbours.
    TriangleArea,
}

impl Importance {
    pub fn score(self, prev: Point, v: Point, next: Point) -> f64 {
        let (ax, ay) = (v.col - prev.col, v.row - prev.row);
        let (bx, by) = (next.col - v.col, next.row - v.row);
        let cr = ax * by - ay * bx;
        match self {
            Importance::AngleLength => {
                let dt = ax * bx + ay * by;
                // Exterior turn; equals π − interior angle for positive orientation.
                let turn = libm::atan2(cr, dt);
                let mean_len = (libm::hypot(ax, ay) + libm::hypot(bx, by)) / 2.0;
                turn * mean_len
            }
            Importance::TriangleArea => cr.abs() / 2.0,
        }
    }
}

/// Relative tolerance under which two importances count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

fn strictly_less(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    a < b - TIE_TOLERANCE * scale
}

/// Removes least-important vertices one at a time, rescoring the two
/// neighbours after each removal, until `k` remain. Ties (within
/// [`TIE_TOLERANCE`]) go to the lowest current index.
pub fn simplify_to_k(poly: &Polygon, k: usize, importance: Importance) -> Result<(Polygon, Option<NoiseWarning>)> {
    if k < 3 {
        return Err(Error::contract(format!("k must be >= 3, got {k}")));
    }
    let n = poly.len();
    if k > n {
        return Ok((poly.clone(), Some(NoiseWarning::TooFewVertices { requested: k, available: n })));
    }
    let mut verts = poly.vertices.clone();
    let score_at = |v: &[Point], i: usize| {
        let m = v.len();
        importance.score(v[(i + m - 1) % m], v[i], v[(i + 1) % m])
    };
    let mut scores: Vec<f64> = (0..n).map(|i| score_at(&verts, i)).collect();
    while verts.len() > k {
        let mut best = 0;
        for i in 1..scores.len() {
            if strictly_less(scores[i], scores[best]) {
                best = i;
            }
        }
        verts.remove(best);
        scores.remove(best);
        let m = verts.len();
        let before = (best + m - 1) % m;
        let after = best % m;
        scores[before] = score_at(&verts, before);
        scores[after] = score_at(&verts, after);
    }
    Ok((Polygon::new(verts)?, None))
}

/// Tight axis-aligned rectangle around the foreground, corner coordinates.
pub fn axis_aligned_4(mask: &Mask) -> Result<Polygon> {
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) {
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                cmin = cmin.min(c);
                cmax = cmax.max(c);
            }
        }
    }
    if rmin == usize::MAX {
        return Err(Error::contract("mask has no foreground"));
    }
    let (r0, r1, c0, c1) = (rmin as f64, (rmax + 1) as f64, cmin as f64, (cmax + 1) as f64);
    Polygon::new(vec![Point::new(r0, c0), Point::new(r0, c1), Point::new(r1, c1), Point::new(r1, c0)])
}

/// Foreground everywhere except `band` rows/columns along each image border.
pub fn maximal_mask(height: usize, width: usize, band: usize) -> Result<Mask> {
    if height <= 2 * band || width <= 2 * band {
        return Err(Error::contract(format!("band {band} too large for {height}x{width}")));
    }
    Ok(Mask::from_fn(height, width, |r, c| {
        r >= band && c >= band && r < height - band && c < width - band
    }))
}

/// Border band for maximal masks: 2 pixels at side 96, scaled proportionally, at least 1.
pub fn default_band(side: usize) -> usize {
    (libm::round(2.0 * side as f64 / 96.0) as usize).max(1)
}

/// Even-odd scanline fill sampled at pixel centres.
pub fn rasterize(poly: &Polygon, height: usize, width: usize) -> Result<Mask> {
    if poly.area() == 0.0 {
        return Err(Error::contract("degenerate polygon with zero area"));
    }
    let v = &poly.vertices;
    let n = v.len();
    let mut mask = Mask::empty(height, width);
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for r in 0..height {
        let y = r as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            if (a.row <= y) != (b.row <= y) {
                xs.push(a.col + (y - a.row) * (b.col - a.col) / (b.row - a.row));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let (x0, x1) = (span[0], span[1]);
            let lo = libm::floor(x0 - 1.0).max(0.0) as usize;
            let hi = (libm::ceil(x1 + 1.0).max(0.0) as usize).min(width);
            for c in lo..hi {
                let x = c as f64 + 0.5;
                if x >= x0 && x < x1 {
                    mask.set(r, c, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Kind of synthetic annotation noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum NoiseSpec {
    /// Outline simplified to `k` vertices.
    KVertex { k: usize },
    /// Bounding rectangle.
    AxisAligned4,
    /// Whole frame minus a border band.
    Maximal { band: usize },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::KVertex { k } if k < 3 => Err(Error::contract("k must be >= 3")),
            NoiseSpec::Maximal { band } if band < 1 => Err(Error::contract("band must be >= 1")),
            _ => Ok(()),
        }
    }

    /// Short label such as `7-vertex`, `axis-aligned`, `maximal`.
    pub fn label(&self) -> String {
        match *self {
            NoiseSpec::KVertex { k } => format!("{k}-vertex"),
            NoiseSpec::AxisAligned4 => String::from("axis-aligned"),
            NoiseSpec::Maximal { .. } => String::from("maximal"),
        }
    }

    /// Parses `7-vertex`, `k7`, `axis-aligned`, `maximal` or `maximal:<band>`;
    /// maximal without a band uses [`default_band`] of `side`.
    pub fn parse(s: &str, side: usize) -> Option<NoiseSpec> {
        let s = s.trim();
        if let Some(k) = s.strip_suffix("-vertex").or_else(|| s.strip_prefix('k')) {
            return k.parse().ok().map(|k| NoiseSpec::KVertex { k });
        }
        match s {
            "axis-aligned" | "axis_aligned_4" | "axis-aligned-4" => Some(NoiseSpec::AxisAligned4),
            "maximal" => Some(NoiseSpec::Maximal { band: default_band(side) }),
            _ => s.strip_prefix("maximal:").and_then(|b| b.parse().ok()).map(|band| NoiseSpec::Maximal { band }),
        }
    }
}

/// A synthesised noisy annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyAnnotation {
    pub mask: Mask,
    /// The polygon behind the mask, for polygon-based kinds.
    pub polygon: Option<Polygon>,
    pub warnings: Vec<NoiseWarning>,
}

/// Produces the noisy mask for `clean` under `spec`.
pub fn apply_noise(clean: &Mask, spec: NoiseSpec, importance: Importance) -> Result<NoisyAnnotation> {
    spec.validate()?;
    let (h, w) = (clean.height(), clean.width());
    match spec {
        NoiseSpec::KVertex { k } => {
            let (outline, mut warnings) = mask_to_polygon(clean)?;
            let (poly, warn) = simplify_to_k(&outline, k, importance)?;
            warnings.extend(warn);
            Ok(NoisyAnnotation { mask: rasterize(&poly, h, w)?, polygon: Some(poly), warnings })
        }
        NoiseSpec::AxisAligned4 => {
            let poly = axis_aligned_4(clean)?;
            Ok(NoisyAnnotation { mask: rasterize(&poly, h, w)?, polygon: Some(poly), warnings: vec![] })
        }
        NoiseSpec::Maximal { band } => {
            Ok(NoisyAnnotation { mask: maximal_mask(h, w, band)?, polygon: None, warnings: vec![] })
        }
    }
}
