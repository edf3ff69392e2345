//! Merging large-scale and small-scale detector proposals.
//!
//! The large-scale detector tends to return whole objects and groups of small
//! objects; the small-scale detector returns small objects and parts of large
//! ones. [`mask_agg`] resolves the two sets by overlap and coverage instead of
//! score-only suppression: a large proposal mostly covered by small ones is
//! treated as a group and replaced by them, otherwise the small ones are
//! treated as parts and the large proposal wins. [`nms`] is the greedy
//! suppression baseline.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{InstanceLabel, LabelSet};
use crate::mask::{mask_iou, BinaryMask, MaskError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("parameter {name}={value} outside (0, 1)")]
    InvalidParam { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggParams {
    pub match_thrd: f64,
    pub filt_frac: f64,
    pub cover_frac: f64,
}

impl Default for AggParams {
    fn default() -> Self {
        Self {
            match_thrd: 0.5,
            filt_frac: 0.75,
            cover_frac: 0.5,
        }
    }
}

impl AggParams {
    pub fn validate(&self) -> Result<(), AggError> {
        for (name, value) in [
            ("match_thrd", self.match_thrd),
            ("filt_frac", self.filt_frac),
            ("cover_frac", self.cover_frac),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(AggError::InvalidParam { name, value });
            }
        }
        Ok(())
    }
}

struct Decoded<'a> {
    inst: &'a InstanceLabel,
    mask: BinaryMask,
    area: usize,
}

fn decode(set: &LabelSet) -> Vec<Decoded<'_>> {
    set.instances()
        .iter()
        .map(|inst| {
            let mask = inst.mask();
            let area = mask.area();
            Decoded { inst, mask, area }
        })
        .collect()
}

/// Single-mask coverage of `targ` by `by`.
fn covered_frac(by: &Decoded, targ: &Decoded) -> f64 {
    let inter = by.mask.intersection_area(&targ.mask).expect("same frame");
    inter as f64 / targ.area as f64
}

/// `keep[a]` is false when some strictly larger mask covers more than
/// `filt_frac` of `a`.
fn smaller_overlapping_keep(items: &[Decoded], filt_frac: f64) -> Vec<bool> {
    items
        .iter()
        .map(|a| {
            !items
                .iter()
                .any(|b| b.area > a.area && covered_frac(b, a) > filt_frac)
        })
        .collect()
}

/// `keep[a]` is false when `a` covers more than `filt_frac` of some strictly
/// smaller mask.
fn larger_overlapping_keep(items: &[Decoded], filt_frac: f64) -> Vec<bool> {
    items
        .iter()
        .map(|a| {
            !items
                .iter()
                .any(|b| b.area < a.area && covered_frac(a, b) > filt_frac)
        })
        .collect()
}

/// Drops masks covered by a strictly larger mask by more than `filt_frac`.
pub fn remove_smaller_overlapping(ml: &LabelSet, filt_frac: f64) -> LabelSet {
    let keep = smaller_overlapping_keep(&decode(ml), filt_frac);
    ml.retain(|i, _| keep[i])
}

/// Drops masks that contain more than `filt_frac` of a strictly smaller mask.
pub fn remove_larger_overlapping(ms: &LabelSet, filt_frac: f64) -> LabelSet {
    let keep = larger_overlapping_keep(&decode(ms), filt_frac);
    ms.retain(|i, _| keep[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Source {
    Large,
    Small,
}

/// Fixed output order: score descending, large-scale proposals first, then id.
fn output_order(a: (&InstanceLabel, Source), b: (&InstanceLabel, Source)) -> Ordering {
    b.0.score()
        .total_cmp(&a.0.score())
        .then(a.1.cmp(&b.1))
        .then(a.0.id().cmp(&b.0.id()))
}

/// Aggregates large-scale proposals `ml` with small-scale proposals `ms`.
/// Output instances are unmodified inputs, ordered by score and renumbered.
pub fn mask_agg(ml: &LabelSet, ms: &LabelSet, p: &AggParams) -> Result<LabelSet, AggError> {
    ml.ensure_same_frame(ms)?;
    p.validate()?;

    let large_all = decode(ml);
    let small_all = decode(ms);
    let keep_l = smaller_overlapping_keep(&large_all, p.filt_frac);
    let keep_s = larger_overlapping_keep(&small_all, p.filt_frac);
    let large: Vec<&Decoded> = large_all
        .iter()
        .zip(&keep_l)
        .filter(|(_, &k)| k)
        .map(|(d, _)| d)
        .collect();
    let small: Vec<&Decoded> = small_all
        .iter()
        .zip(&keep_s)
        .filter(|(_, &k)| k)
        .map(|(d, _)| d)
        .collect();

    // inter[i][j] = |large_i ∩ small_j|
    let inter: Vec<Vec<usize>> = large
        .iter()
        .map(|l| {
            small
                .iter()
                .map(|s| l.mask.intersection_area(&s.mask).expect("same frame"))
                .collect()
        })
        .collect();

    let mut picked: BTreeSet<(Source, usize)> = BTreeSet::new();
    for (i, l) in large.iter().enumerate() {
        let subset: Vec<usize> = (0..small.len()).filter(|&j| inter[i][j] > 0).collect();
        if subset.is_empty() {
            continue;
        }
        if subset.len() == 1 {
            let s = small[subset[0]];
            if mask_iou(&s.mask, &l.mask)? > p.match_thrd {
                if s.inst.score() > l.inst.score() {
                    picked.insert((Source::Small, subset[0]));
                } else {
                    picked.insert((Source::Large, i));
                }
                continue;
            }
        }
        let cover = crate::mask::coverage(subset.iter().map(|&j| &small[j].mask), &l.mask)?;
        if cover > p.cover_frac {
            picked.extend(subset.iter().map(|&j| (Source::Small, j)));
        } else {
            picked.insert((Source::Large, i));
        }
    }
    for (i, row) in inter.iter().enumerate() {
        if row.iter().all(|&a| a == 0) {
            picked.insert((Source::Large, i));
        }
    }
    for j in 0..small.len() {
        if inter.iter().all(|row| row[j] == 0) {
            picked.insert((Source::Small, j));
        }
    }

    let mut chosen: Vec<(&InstanceLabel, Source)> = picked
        .into_iter()
        .map(|(src, k)| match src {
            Source::Large => (large[k].inst, src),
            Source::Small => (small[k].inst, src),
        })
        .collect();
    chosen.sort_by(|a, b| output_order(*a, *b));
    Ok(ml.renumbered(chosen.into_iter().map(|(inst, _)| inst.clone())))
}

/// Greedy mask NMS: highest score first (ties by lower id); a proposal is
/// suppressed when its IoU with an already kept one exceeds `iou_thrd`.
pub fn nms(proposals: &LabelSet, iou_thrd: f64) -> LabelSet {
    let items = decode(proposals);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .inst
            .score()
            .total_cmp(&items[a].inst.score())
            .then(items[a].inst.id().cmp(&items[b].inst.id()))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| mask_iou(&items[k].mask, &items[i].mask).expect("same frame") > iou_thrd);
        if !suppressed {
            kept.push(i);
        }
    }
    let keep_ids: Vec<&InstanceLabel> = kept.iter().map(|&k| items[k].inst).collect();
    LabelSet::new(
        proposals.frame_id(),
        proposals.height(),
        proposals.width(),
        keep_ids.into_iter().cloned().collect(),
    )
    .expect("subset of a valid set")
}
