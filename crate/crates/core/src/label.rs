//! Scored instance labels and per-frame label sets.
//!
//! Every pseudo-label round, detector prediction file and ground-truth file
//! is a [`LabelSet`]. An [`InstanceLabel`] always carries a non-empty mask and
//! the tight box of that mask.

use std::collections::HashSet;

use thiserror::Error;

use crate::mask::{bbox_of, rle_decode, rle_encode, BBox, BinaryMask, MaskError, Rle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("instance {id} has dimensions {got:?}, frame is {expected:?}")]
    DimensionMismatch {
        id: u64,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("duplicate instance id {0}")]
    DuplicateId(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabel {
    id: u64,
    score: f64,
    rle: Rle,
    bbox: BBox,
    moving: Option<bool>,
}

impl InstanceLabel {
    pub fn from_mask(id: u64, mask: &BinaryMask, score: f64) -> Result<Self, LabelError> {
        check_score(score)?;
        let bbox = bbox_of(mask)?;
        Ok(Self {
            id,
            score,
            rle: rle_encode(mask),
            bbox,
            moving: None,
        })
    }

    /// Validates `rle` and derives the box from it.
    pub fn from_rle(id: u64, rle: Rle, score: f64) -> Result<Self, LabelError> {
        let mask = rle_decode(&rle)?;
        check_score(score)?;
        let bbox = bbox_of(&mask)?;
        Ok(Self {
            id,
            score,
            rle,
            bbox,
            moving: None,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn rle(&self) -> &Rle {
        &self.rle
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn moving(&self) -> Option<bool> {
        self.moving
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rle.height, self.rle.width)
    }

    pub fn area(&self) -> u64 {
        self.rle.area()
    }

    pub fn mask(&self) -> BinaryMask {
        rle_decode(&self.rle).expect("rle validated at construction")
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }

    pub fn with_score(mut self, score: f64) -> Result<Self, LabelError> {
        check_score(score)?;
        self.score = score;
        Ok(self)
    }

    pub fn with_moving(mut self, moving: Option<bool>) -> Self {
        self.moving = moving;
        self
    }
}

fn check_score(score: f64) -> Result<(), LabelError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(LabelError::ScoreOutOfRange(score));
    }
    Ok(())
}

/// All instances of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    frame_id: String,
    height: usize,
    width: usize,
    instances: Vec<InstanceLabel>,
}

impl LabelSet {
    pub fn empty(frame_id: impl Into<String>, height: usize, width: usize) -> Self {
        Self {
            frame_id: frame_id.into(),
            height,
            width,
            instances: Vec::new(),
        }
    }

    pub fn new(
        frame_id: impl Into<String>,
        height: usize,
        width: usize,
        instances: Vec<InstanceLabel>,
    ) -> Result<Self, LabelError> {
        let mut set = Self::empty(frame_id, height, width);
        let mut ids = HashSet::new();
        for inst in &instances {
            if inst.dims() != (height, width) {
                return Err(LabelError::DimensionMismatch {
                    id: inst.id,
                    got: inst.dims(),
                    expected: (height, width),
                });
            }
            if !ids.insert(inst.id) {
                return Err(LabelError::DuplicateId(inst.id));
            }
        }
        set.instances = instances;
        Ok(set)
    }

    /// Same frame, new instance list with ids reassigned `0..n` in order.
    pub fn renumbered(&self, instances: impl IntoIterator<Item = InstanceLabel>) -> Self {
        let instances = instances
            .into_iter()
            .enumerate()
            .map(|(i, inst)| inst.with_id(i as u64))
            .collect();
        Self {
            frame_id: self.frame_id.clone(),
            height: self.height,
            width: self.width,
            instances,
        }
    }

    /// Same frame, keeping the instances for which `keep` is true.
    pub fn retain(&self, mut keep: impl FnMut(usize, &InstanceLabel) -> bool) -> Self {
        let instances = self
            .instances
            .iter()
            .enumerate()
            .filter(|(i, inst)| keep(*i, inst))
            .map(|(_, inst)| inst.clone())
            .collect();
        Self {
            instances,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self::empty(self.frame_id.clone(), self.height, self.width)
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
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

    pub fn instances(&self) -> &[InstanceLabel] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<InstanceLabel> {
        self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn decode_masks(&self) -> Vec<BinaryMask> {
        self.instances.iter().map(InstanceLabel::mask).collect()
    }

    pub fn ensure_same_frame(&self, other: &LabelSet) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch(self.dims(), other.dims()));
        }
        Ok(())
    }
}
