//! Polygon rasterization, binary mask algebra and the RLE mask codec.
//!
//! Every pixel metric in the crate is computed from [`BinaryMask`] values
//! produced here. Pixel `(row, col)` represents the unit square whose center
//! sits at `(col + 0.5, row + 0.5)` in image coordinates (origin top-left,
//! x rightward, y downward).

use serde::{Deserialize, Serialize};

use crate::annotation::{Point, Polygon};
use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// Row-major bit mask. Bit `row * width + col` is pixel `(row, col)`.
///
/// Padding bits in the last word are always zero so that word-wise
/// comparisons and popcounts are exact.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        let len = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; len.div_ceil(WORD_BITS)],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        let mut mask = Self::empty(width, height);
        mask.set_range(0, mask.len());
        mask
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut mask = Self::empty(width, height);
        for row in 0..height {
            for col in 0..width {
                if f(row, col) {
                    mask.set(row, col, true);
                }
            }
        }
        mask
    }

    /// Builds a mask from one byte per pixel (non-zero = set).
    pub fn from_bytes(width: u32, height: u32, pixels: &[u8]) -> Result<Self> {
        let len = width as usize * height as usize;
        if pixels.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{} pixel values for a {}x{} mask",
                pixels.len(),
                height,
                width
            )));
        }
        let mut mask = Self::empty(width, height);
        for (idx, &p) in pixels.iter().enumerate() {
            if p != 0 {
                mask.words[idx / WORD_BITS] |= 1u64 << (idx % WORD_BITS);
            }
        }
        Ok(mask)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// `(height, width)`, the order used by RLE `size` fields.
    pub fn dims(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    /// Total number of pixels.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        let idx = row as usize * self.width as usize + col as usize;
        self.words[idx / WORD_BITS] >> (idx % WORD_BITS) & 1 == 1
    }

    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        let idx = row as usize * self.width as usize + col as usize;
        let bit = 1u64 << (idx % WORD_BITS);
        if value {
            self.words[idx / WORD_BITS] |= bit;
        } else {
            self.words[idx / WORD_BITS] &= !bit;
        }
    }

    /// Sets the linear pixel range `[start, end)`.
    pub fn set_range(&mut self, start: usize, end: usize) {
        if start >= end {
            return;
        }
        let (first, last) = (start / WORD_BITS, (end - 1) / WORD_BITS);
        let lo_mask = !0u64 << (start % WORD_BITS);
        let hi_mask = !0u64 >> (WORD_BITS - 1 - (end - 1) % WORD_BITS);
        if first == last {
            self.words[first] |= lo_mask & hi_mask;
            return;
        }
        self.words[first] |= lo_mask;
        for w in &mut self.words[first + 1..last] {
            *w = !0;
        }
        self.words[last] |= hi_mask;
    }

    /// Sets columns `[col_start, col_end)` of one row.
    pub fn set_span(&mut self, row: u32, col_start: u32, col_end: u32) {
        let base = row as usize * self.width as usize;
        self.set_range(base + col_start as usize, base + col_end as usize);
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Iterates set pixels as `(row, col)` in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let width = self.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let idx = wi * WORD_BITS + tz;
                Some(((idx / width) as u32, (idx % width) as u32))
            })
        })
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    /// In-place bitwise OR.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    /// `area(self ∩ other)` without materializing the intersection.
    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    /// `area(self \ other)`.
    pub fn difference_area(&self, other: &BinaryMask) -> Result<u64> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & !b).count_ones() as u64)
            .sum())
    }

    /// First linear index `>= from` whose bit differs from `current`, or a
    /// value `>= len()` when there is none.
    fn next_change(&self, from: usize, current: bool) -> usize {
        let flip = if current { !0u64 } else { 0 };
        let mut wi = from / WORD_BITS;
        let mut word = (self.words[wi] ^ flip) & (!0u64 << (from % WORD_BITS));
        loop {
            if word != 0 {
                return wi * WORD_BITS + word.trailing_zeros() as usize;
            }
            wi += 1;
            if wi >= self.words.len() {
                return self.words.len() * WORD_BITS;
            }
            word = self.words[wi] ^ flip;
        }
    }

    /// Shifts the mask by `(d_row, d_col)`; pixels leaving the frame are dropped.
    pub fn translated(&self, d_row: i64, d_col: i64) -> BinaryMask {
        let mut out = BinaryMask::empty(self.width, self.height);
        for (row, col) in self.iter_set() {
            let (r, c) = (row as i64 + d_row, col as i64 + d_col);
            if r >= 0 && c >= 0 && r < self.height as i64 && c < self.width as i64 {
                out.set(r as u32, c as u32, true);
            }
        }
        out
    }
}

/// Bitwise OR of a non-empty list of equally sized masks.
pub fn union(masks: &[BinaryMask]) -> Result<BinaryMask> {
    let (first, rest) = masks
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("union of an empty mask list".into()))?;
    let mut out = first.clone();
    for m in rest {
        out.union_with(m)?;
    }
    Ok(out)
}

/// Bitwise AND.
pub fn intersect(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.check_dims(b)?;
    let words = a.words.iter().zip(&b.words).map(|(x, y)| x & y).collect();
    Ok(BinaryMask {
        width: a.width,
        height: a.height,
        words,
    })
}

pub fn area(mask: &BinaryMask) -> u64 {
    mask.area()
}

/// Scanline even-odd rasterization with pixel-center sampling.
///
/// Only centers inside the image are sampled, which is equivalent to clipping
/// the polygon to the image rectangle first. Crossings use the half-open rule
/// `(y0 > y) != (y1 > y)`, so horizontal edges never contribute.
pub fn rasterize(polygon: &Polygon, width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::empty(width, height);
    let verts = polygon.vertices();
    if verts.len() < 3 || width == 0 || height == 0 {
        return mask;
    }

    let (min_y, max_y) = verts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.y), hi.max(p.y))
        });
    // rows whose center could fall within [min_y, max_y]
    let row_lo = (min_y - 0.5).floor().max(0.0);
    let row_hi = (max_y - 0.5).ceil().min(height as f64 - 1.0);
    if row_lo > row_hi {
        return mask;
    }

    let mut xs: Vec<f64> = Vec::with_capacity(verts.len());
    for row in row_lo as u32..=row_hi as u32 {
        let y = row as f64 + 0.5;
        xs.clear();
        let mut prev = verts[verts.len() - 1];
        for &cur in verts {
            if (cur.y > y) != (prev.y > y) {
                xs.push((prev.x - cur.x) * (y - cur.y) / (prev.y - cur.y) + cur.x);
            }
            prev = cur;
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for pair in xs.chunks_exact(2) {
            let start = first_center_at_or_after(pair[0], width);
            let end = first_center_at_or_after(pair[1], width);
            if start < end {
                mask.set_span(row, start, end);
            }
        }
    }
    mask
}

/// Like [`rasterize`] but fails when nothing is set.
pub fn rasterize_strict(polygon: &Polygon, width: u32, height: u32) -> Result<BinaryMask> {
    let mask = rasterize(polygon, width, height);
    if mask.is_empty() {
        return Err(Error::DegenerateGeometry);
    }
    Ok(mask)
}

/// Smallest column `c` in `[0, width]` with `c + 0.5 >= x`.
fn first_center_at_or_after(x: f64, width: u32) -> u32 {
    let guess = (x - 0.5).ceil().clamp(0.0, width as f64) as u32;
    let mut c = guess;
    while c > 0 && (c - 1) as f64 + 0.5 >= x {
        c -= 1;
    }
    while c < width && (c as f64 + 0.5) < x {
        c += 1;
    }
    c
}

/// Run-length encoded mask. Runs alternate background/foreground over the
/// row-major pixel order and always start with a (possibly empty) background run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RleMask {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct RleRepr {
    size: [u32; 2],
    #[serde(default = "row_major")]
    order: String,
    counts: Vec<u64>,
}

fn row_major() -> String {
    "row-major".to_string()
}

impl Serialize for RleMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RleRepr {
            size: [self.height, self.width],
            order: row_major(),
            counts: self.counts.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RleMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = RleRepr::deserialize(d)?;
        if repr.order != "row-major" {
            return Err(serde::de::Error::custom(format!(
                "unsupported RLE order `{}` (expected `row-major`)",
                repr.order
            )));
        }
        Ok(RleMask {
            height: repr.size[0],
            width: repr.size[1],
            counts: repr.counts,
        })
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let len = mask.len();
    let mut counts = Vec::new();
    let mut pos = 0;
    let mut current = false;
    while pos < len {
        let next = mask.next_change(pos, current).min(len);
        counts.push((next - pos) as u64);
        pos = next;
        current = !current;
    }
    if counts.is_empty() {
        counts.push(0);
    }
    RleMask {
        height: mask.height,
        width: mask.width,
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    let total = rle.height as u64 * rle.width as u64;
    let sum = rle
        .counts
        .iter()
        .try_fold(0u64, |acc, &c| acc.checked_add(c))
        .ok_or_else(|| Error::Rle("run lengths overflow".into()))?;
    if sum != total {
        return Err(Error::Rle(format!(
            "run lengths sum to {sum}, expected {total} for size [{}, {}]",
            rle.height, rle.width
        )));
    }
    let mut mask = BinaryMask::empty(rle.width, rle.height);
    let mut pos = 0usize;
    for (i, &run) in rle.counts.iter().enumerate() {
        let end = pos + run as usize;
        if i % 2 == 1 {
            mask.set_range(pos, end);
        }
        pos = end;
    }
    Ok(mask)
}

/// A localized prediction in one of the supported shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Region {
    Mask {
        #[serde(flatten)]
        rle: RleMask,
    },
    /// `[x0, y0, x1, y1]`, half-open in both axes.
    Box {
        bbox: [f64; 4],
    },
    Point {
        point: [f64; 2],
    },
}

/// Converts any region form to a mask on a `width × height` grid.
///
/// Boxes cover every pixel whose center lies in `[x0, x1) × [y0, y1)`, which
/// for integer corners is exactly the integer rectangle. Points set the single
/// pixel `(floor(y), floor(x))`.
pub fn region_to_mask(region: &Region, width: u32, height: u32) -> Result<BinaryMask> {
    match region {
        Region::Mask { rle } => {
            if (rle.height, rle.width) != (height, width) {
                return Err(Error::DimensionMismatch {
                    expected: (height, width),
                    found: (rle.height, rle.width),
                });
            }
            rle_decode(rle)
        }
        Region::Box { bbox } => {
            let [x0, y0, x1, y1] = *bbox;
            if bbox.iter().any(|v| !v.is_finite()) {
                return Err(Error::EmptyRegion(format!("non-finite box {bbox:?}")));
            }
            let (c0, c1) = (
                first_center_at_or_after(x0, width),
                first_center_at_or_after(x1, width),
            );
            let (r0, r1) = (
                first_center_at_or_after(y0, height),
                first_center_at_or_after(y1, height),
            );
            if c0 >= c1 || r0 >= r1 {
                return Err(Error::EmptyRegion(format!(
                    "box {bbox:?} covers no pixel of a {width}x{height} image"
                )));
            }
            let mut mask = BinaryMask::empty(width, height);
            for row in r0..r1 {
                mask.set_span(row, c0, c1);
            }
            Ok(mask)
        }
        Region::Point { point } => {
            let [x, y] = *point;
            let (col, row) = (x.floor(), y.floor());
            if !(col >= 0.0 && row >= 0.0 && col < width as f64 && row < height as f64) {
                return Err(Error::EmptyRegion(format!(
                    "point {point:?} lies outside a {width}x{height} image"
                )));
            }
            let mut mask = BinaryMask::empty(width, height);
            mask.set(row as u32, col as u32, true);
            Ok(mask)
        }
    }
}

/// Signed shoelace area; positive for counter-clockwise in y-up coordinates.
pub(crate) fn signed_area(verts: &[Point]) -> f64 {
    let n = verts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (verts[i], verts[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// True when two non-adjacent edges properly cross.
pub(crate) fn is_self_intersecting(verts: &[Point]) -> bool {
    let n = verts.len();
    if n < 4 {
        return false;
    }
    let orient =
        |a: Point, b: Point, c: Point| (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    for i in 0..n {
        let (a, b) = (verts[i], verts[(i + 1) % n]);
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (verts[j], verts[(j + 1) % n]);
            let (o1, o2) = (orient(a, b, c), orient(a, b, d));
            let (o3, o4) = (orient(c, d, a), orient(c, d, b));
            if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
                return true;
            }
        }
    }
    false
}
