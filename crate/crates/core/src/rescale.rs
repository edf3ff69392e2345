//! Downscale-and-pad transforms for the small-object training branch.
//!
//! Content is shrunk by `scale`, anchored at the top-left corner and padded on
//! the right and bottom back to the original frame size, so label coordinates
//! in the transformed frame need no offset. Resampling is nearest-neighbor:
//! content pixel `(i, j)` copies source pixel `(floor(i / scale), floor(j /
//! scale))`, and the inverse maps original pixel `(r, c)` to content pixel
//! `(floor(r * scale), floor(c * scale))`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{InstanceLabel, LabelError, LabelSet};
use crate::mask::{BinaryMask, MaskError};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RescaleError {
    #[error("scale {0} outside (0, 1]")]
    InvalidScale(f64),
    #[error("invalid jitter range [{0}, {1}]")]
    InvalidJitterRange(f64, f64),
    #[error("inconsistent transform: {0}")]
    InconsistentTransform(String),
    #[error("frame is {got:?}, transform expects {expected:?}")]
    DimensionMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("instance {id} intersects the padding region")]
    InstanceInPadding { id: u64 },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTransform {
    pub scale: f64,
    pub pad_right: usize,
    pub pad_bottom: usize,
    pub orig_height: usize,
    pub orig_width: usize,
}

/// `scale * dim` rounded half-down, never below 1.
pub fn scaled_dim(dim: usize, scale: f64) -> usize {
    ((scale * dim as f64 - 0.5).ceil() as usize).max(1)
}

pub fn make_transform(
    orig_height: usize,
    orig_width: usize,
    scale: f64,
) -> Result<ScaleTransform, RescaleError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(RescaleError::InvalidScale(scale));
    }
    if orig_height == 0 || orig_width == 0 {
        return Err(MaskError::InvalidDimensions {
            height: orig_height,
            width: orig_width,
        }
        .into());
    }
    Ok(ScaleTransform {
        scale,
        pad_right: orig_width - scaled_dim(orig_width, scale),
        pad_bottom: orig_height - scaled_dim(orig_height, scale),
        orig_height,
        orig_width,
    })
}

impl ScaleTransform {
    pub fn identity(orig_height: usize, orig_width: usize) -> Self {
        Self {
            scale: 1.0,
            pad_right: 0,
            pad_bottom: 0,
            orig_height,
            orig_width,
        }
    }

    pub fn content_height(&self) -> usize {
        self.orig_height - self.pad_bottom
    }

    pub fn content_width(&self) -> usize {
        self.orig_width - self.pad_right
    }

    pub fn orig_dims(&self) -> (usize, usize) {
        (self.orig_height, self.orig_width)
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.pad_right == 0 && self.pad_bottom == 0
    }

    /// Checks that the padding matches what [`make_transform`] would produce.
    pub fn validate(&self) -> Result<(), RescaleError> {
        let expected = make_transform(self.orig_height, self.orig_width, self.scale)?;
        if expected != *self {
            return Err(RescaleError::InconsistentTransform(format!(
                "expected pad_right={} pad_bottom={}, got {} and {}",
                expected.pad_right, expected.pad_bottom, self.pad_right, self.pad_bottom
            )));
        }
        Ok(())
    }

    fn check_dims(&self, got: (usize, usize)) -> Result<(), RescaleError> {
        if got != self.orig_dims() {
            return Err(RescaleError::DimensionMismatch {
                got,
                expected: self.orig_dims(),
            });
        }
        Ok(())
    }

    fn source_index(&self, i: usize, limit: usize) -> usize {
        ((i as f64 / self.scale).floor() as usize).min(limit - 1)
    }

    fn content_index(&self, r: usize) -> usize {
        (r as f64 * self.scale).floor() as usize
    }
}

pub fn transform_raster<T: Copy>(
    values: &Raster<T>,
    t: &ScaleTransform,
    pad_value: T,
) -> Result<Raster<T>, RescaleError> {
    t.check_dims(values.dims())?;
    let (h, w) = t.orig_dims();
    let (ch, cw) = (t.content_height(), t.content_width());
    Ok(Raster::from_fn(h, w, |i, j| {
        if i < ch && j < cw {
            values.at(t.source_index(i, h), t.source_index(j, w))
        } else {
            pad_value
        }
    })
    .expect("transform keeps frame dimensions"))
}

pub fn transform_mask(mask: &BinaryMask, t: &ScaleTransform) -> Result<BinaryMask, RescaleError> {
    t.check_dims(mask.dims())?;
    let (h, w) = t.orig_dims();
    let (ch, cw) = (t.content_height(), t.content_width());
    let src = mask.as_slice();
    Ok(BinaryMask::from_fn(h, w, |i, j| {
        i < ch && j < cw && src[t.source_index(i, h) * w + t.source_index(j, w)]
    })?)
}

/// Maps a mask from transformed coordinates back to the original frame.
/// Pixels inside the padding are ignored.
pub fn invert_mask(mask: &BinaryMask, t: &ScaleTransform) -> Result<BinaryMask, RescaleError> {
    t.check_dims(mask.dims())?;
    let (h, w) = t.orig_dims();
    let (ch, cw) = (t.content_height(), t.content_width());
    let src = mask.as_slice();
    Ok(BinaryMask::from_fn(h, w, |r, c| {
        let (i, j) = (t.content_index(r), t.content_index(c));
        i < ch && j < cw && src[i * w + j]
    })?)
}

fn map_instances(
    labels: &LabelSet,
    f: impl Fn(&InstanceLabel, &BinaryMask) -> Result<Option<BinaryMask>, RescaleError>,
) -> Result<LabelSet, RescaleError> {
    let mut out = Vec::with_capacity(labels.len());
    for inst in labels.instances() {
        let mask = inst.mask();
        if let Some(m) = f(inst, &mask)? {
            if m.is_empty() {
                continue;
            }
            out.push(
                InstanceLabel::from_mask(inst.id(), &m, inst.score())?.with_moving(inst.moving()),
            );
        }
    }
    Ok(LabelSet::new(
        labels.frame_id(),
        labels.height(),
        labels.width(),
        out,
    )?)
}

/// Shrinks every instance into the content region. Instances that vanish
/// are dropped; boxes are re-derived from the resampled masks.
pub fn transform_labels(labels: &LabelSet, t: &ScaleTransform) -> Result<LabelSet, RescaleError> {
    t.check_dims(labels.dims())?;
    if t.is_identity() {
        return Ok(labels.clone());
    }
    map_instances(labels, |_, m| transform_mask(m, t).map(Some))
}

/// Inverse of [`transform_labels`]. Every instance must lie inside the
/// content region.
pub fn invert_labels(labels: &LabelSet, t: &ScaleTransform) -> Result<LabelSet, RescaleError> {
    t.check_dims(labels.dims())?;
    if t.is_identity() {
        return Ok(labels.clone());
    }
    let (ch, cw) = (t.content_height(), t.content_width());
    map_instances(labels, |inst, m| {
        let b = inst.bbox();
        if b.y + b.h > ch as f64 || b.x + b.w > cw as f64 {
            return Err(RescaleError::InstanceInPadding { id: inst.id() });
        }
        invert_mask(m, t).map(Some)
    })
}

/// Clears padding pixels from every instance, dropping instances left empty.
pub fn crop_to_content(labels: &LabelSet, t: &ScaleTransform) -> Result<LabelSet, RescaleError> {
    t.check_dims(labels.dims())?;
    let (ch, cw) = (t.content_height(), t.content_width());
    map_instances(labels, |inst, m| {
        let b = inst.bbox();
        if b.y + b.h <= ch as f64 && b.x + b.w <= cw as f64 {
            return Ok(Some(m.clone()));
        }
        Ok(Some(BinaryMask::from_fn(m.height(), m.width(), |r, c| {
            r < ch && c < cw && m.as_slice()[r * m.width() + c]
        })?))
    })
}

/// Uniform draw from `[lo, hi]`.
pub fn sample_jitter<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> Result<f64, RescaleError> {
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(RescaleError::InvalidJitterRange(lo, hi));
    }
    if lo == hi {
        return Ok(lo);
    }
    Ok(rng.random_range(lo..=hi))
}
