//! Binary masks, COCO-style run-length encoding and the set operations
//! (area, intersection, IoU, coverage, connected components, bounding box)
//! the rest of the crate is built on.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("invalid mask dimensions {height}x{width}")]
    InvalidDimensions { height: usize, width: usize },
    #[error("pixel (row {row}, col {col}) outside {height}x{width} frame")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("rle counts sum to {sum}, expected {expected}")]
    SumMismatch { sum: u64, expected: u64 },
    #[error("rle run {index} has zero length")]
    ZeroRun { index: usize },
    #[error("coverage target mask is empty")]
    EmptyTarget,
    #[error("mask has no foreground pixels")]
    EmptyMask,
}

/// A binary raster stored row-major, `height * width` cells.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("area", &self.area())
            .finish()
    }
}

impl BinaryMask {
    /// An all-background mask.
    pub fn new(height: usize, width: usize) -> Result<Self, MaskError> {
        if height == 0 || width == 0 {
            return Err(MaskError::InvalidDimensions { height, width });
        }
        Ok(Self {
            height,
            width,
            data: vec![false; height * width],
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, MaskError> {
        let mut mask = Self::new(height, width)?;
        for row in 0..height {
            for col in 0..width {
                mask.data[row * width + col] = f(row, col);
            }
        }
        Ok(mask)
    }

    /// Builds a mask from row-major cells.
    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self, MaskError> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(MaskError::InvalidDimensions { height, width });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a mask with the listed `(row, col)` pixels set.
    pub fn from_pixels(
        height: usize,
        width: usize,
        pixels: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, MaskError> {
        let mut mask = Self::new(height, width)?;
        for (row, col) in pixels {
            mask.set(row, col, true)?;
        }
        Ok(mask)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Row-major cells.
    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    fn check(&self, row: usize, col: usize) -> Result<usize, MaskError> {
        if row >= self.height || col >= self.width {
            return Err(MaskError::OutOfBounds {
                row,
                col,
                height: self.height,
                width: self.width,
            });
        }
        Ok(row * self.width + col)
    }

    pub fn get(&self, row: usize, col: usize) -> Result<bool, MaskError> {
        self.check(row, col).map(|i| self.data[i])
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) -> Result<(), MaskError> {
        let i = self.check(row, col)?;
        self.data[i] = value;
        Ok(())
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Foreground pixels as `(row, col)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn ensure_same_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize, MaskError> {
        self.ensure_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    /// In-place union.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<(), MaskError> {
        self.ensure_same_dims(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }
}

/// Column-major, zeros-first run-length encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rle {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u64>,
}

impl Rle {
    /// Checks the count invariants without decoding.
    pub fn validate(&self) -> Result<(), MaskError> {
        if self.height == 0 || self.width == 0 {
            return Err(MaskError::InvalidDimensions {
                height: self.height,
                width: self.width,
            });
        }
        if let Some(index) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(MaskError::ZeroRun { index: index + 1 });
        }
        let expected = (self.height as u64).saturating_mul(self.width as u64);
        let sum = self
            .counts
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .unwrap_or(u64::MAX);
        if sum != expected {
            return Err(MaskError::SumMismatch { sum, expected });
        }
        Ok(())
    }

    /// Foreground pixel count, read off the odd runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }
}

pub fn rle_encode(mask: &BinaryMask) -> Rle {
    let (h, w) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for col in 0..w {
        for row in 0..h {
            let v = mask.data[row * w + col];
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        height: h,
        width: w,
        counts,
    }
}

pub fn rle_decode(rle: &Rle) -> Result<BinaryMask, MaskError> {
    rle.validate()?;
    let (h, w) = (rle.height, rle.width);
    let mut mask = BinaryMask::new(h, w)?;
    let mut idx = 0usize;
    let mut value = false;
    for &c in &rle.counts {
        let c = c as usize;
        if value {
            for k in idx..idx + c {
                let (col, row) = (k / h, k % h);
                mask.data[row * w + col] = true;
            }
        }
        idx += c;
        value = !value;
    }
    Ok(mask)
}

/// Intersection over union; 0 when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Axis-aligned box in pixel units. `x`/`y` are the left/top edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Fraction of `targ` covered by the union of `refs`.
pub fn coverage<'a, I>(refs: I, targ: &BinaryMask) -> Result<f64, MaskError>
where
    I: IntoIterator<Item = &'a BinaryMask>,
{
    let targ_area = targ.area();
    if targ_area == 0 {
        return Err(MaskError::EmptyTarget);
    }
    let mut covered = vec![false; targ.data.len()];
    for r in refs {
        targ.ensure_same_dims(r)?;
        for ((c, &t), &m) in covered.iter_mut().zip(&targ.data).zip(&r.data) {
            *c |= t && m;
        }
    }
    let n = covered.iter().filter(|&&c| c).count();
    Ok(n as f64 / targ_area as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Maximal connected foreground regions, ordered by their first pixel in
/// row-major scan order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<BinaryMask> {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.data[start] || seen[start] {
            continue;
        }
        let mut component = vec![false; h * w];
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            component[i] = true;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for &(dr, dc) in connectivity.offsets() {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if mask.data[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(BinaryMask {
            height: h,
            width: w,
            data: component,
        });
    }
    out
}

/// Tight bounding box of the foreground, in pixel-edge coordinates.
pub fn bbox_of(mask: &BinaryMask) -> Result<BBox, MaskError> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for (r, c) in mask.pixels() {
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    if r0 == usize::MAX {
        return Err(MaskError::EmptyMask);
    }
    Ok(BBox::new(
        c0 as f64,
        r0 as f64,
        (c1 - c0 + 1) as f64,
        (r1 - r0 + 1) as f64,
    ))
}
