//! Class-agnostic detection and segmentation metrics.
//!
//! All predictions and ground-truth instances are treated as one class.
//! For every frame and IoU threshold, predictions are ranked by score
//! (descending, ties by lower instance id), truncated to `max_dets`, and each
//! is greedily matched to the unmatched ground-truth instance with the highest
//! IoU at or above the threshold (ties by lower ground-truth id).
//!
//! * Recall at a threshold is pooled over frames: matched GT / total GT.
//!   AR is the mean recall over the configured thresholds.
//! * AP at a threshold uses the pooled score-ranked prediction list (ties by
//!   frame id, then instance id) and 101-point interpolated precision, as in
//!   the COCO toolkit. AP is the mean over thresholds.
//! * Size buckets reuse the all-size matching. A bucket keeps the GT whose
//!   mask area falls in it. For AP, a prediction matched to GT outside the
//!   bucket is ignored, and an unmatched prediction counts as a false
//!   positive only if its own area falls in the bucket.
//! * Ground-truth area is always the mask area; prediction area is the mask
//!   area in mask mode and the box area in box mode.
//! * Empty denominators report 0, with the counts exposed alongside.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::LabelSet;
use crate::mask::{box_iou, BBox, BinaryMask, MaskError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("frame mismatch at index {index}: predictions {pred:?}, ground truth {gt:?}")]
    FrameMismatch {
        index: usize,
        pred: Option<String>,
        gt: Option<String>,
    },
    #[error("ground-truth instance {id} of frame {frame_id} has no moving attribute")]
    MissingAttribute { frame_id: String, id: u64 },
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Box,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 3] = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];

    fn index(self) -> usize {
        self as usize
    }
}

pub const SMALL_MAX_AREA: f64 = 1024.0;
pub const MEDIUM_MAX_AREA: f64 = 9216.0;

/// Bucket under the 32² / 96² px² boundaries.
pub fn size_bucket(area: f64) -> SizeBucket {
    bucket_with(area, [SMALL_MAX_AREA, MEDIUM_MAX_AREA])
}

fn bucket_with(area: f64, bounds: [f64; 2]) -> SizeBucket {
    if area < bounds[0] {
        SizeBucket::Small
    } else if area < bounds[1] {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub max_dets: usize,
    /// Upper bounds (exclusive) of the small and medium buckets, in px².
    pub size_buckets: [f64; 2],
    pub mode: EvalMode,
}

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: coco_iou_thresholds(),
            max_dets: 100,
            size_buckets: [SMALL_MAX_AREA, MEDIUM_MAX_AREA],
            mode: EvalMode::Mask,
        }
    }
}

impl EvalConfig {
    pub fn with_mode(mode: EvalMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// Single-threshold variant, e.g. `at_iou(0.5)` for AR⁰·⁵ / AP₅₀.
    pub fn at_iou(&self, thr: f64) -> Self {
        Self {
            iou_thresholds: vec![thr],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.iou_thresholds.is_empty() {
            return Err(MetricsError::InvalidConfig("no IoU thresholds".into()));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0))
            || self.iou_thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(MetricsError::InvalidConfig(
                "IoU thresholds must be strictly increasing in (0, 1]".into(),
            ));
        }
        if self.max_dets == 0 {
            return Err(MetricsError::InvalidConfig(
                "max_dets must be at least 1".into(),
            ));
        }
        let [s, m] = self.size_buckets;
        if s.is_nan() || m.is_nan() || s > m {
            return Err(MetricsError::InvalidConfig(
                "size buckets out of order".into(),
            ));
        }
        Ok(())
    }
}

/// Greedy matching of one frame at one threshold, in instance ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(pred_id, gt_id, iou)` in prediction rank order.
    pub pairs: Vec<(u64, u64, f64)>,
    pub unmatched_preds: Vec<u64>,
    pub unmatched_gt: Vec<u64>,
}

/// One frame with decoded geometry and the IoU matrix of its ranked
/// predictions against its ground truth.
struct FrameData {
    frame_id: String,
    pred_ids: Vec<u64>,
    pred_scores: Vec<f64>,
    pred_areas: Vec<f64>,
    gt_ids: Vec<u64>,
    gt_areas: Vec<f64>,
    /// `ious[p][g]`
    ious: Vec<Vec<f64>>,
}

fn rank_predictions(preds: &LabelSet) -> Vec<usize> {
    let inst = preds.instances();
    let mut order: Vec<usize> = (0..inst.len()).collect();
    order.sort_by(|&a, &b| {
        inst[b]
            .score()
            .total_cmp(&inst[a].score())
            .then(inst[a].id().cmp(&inst[b].id()))
    });
    order
}

fn boxes_disjoint(a: &BBox, b: &BBox) -> bool {
    a.x + a.w <= b.x || b.x + b.w <= a.x || a.y + a.h <= b.y || b.y + b.h <= a.y
}

impl FrameData {
    fn build(preds: &LabelSet, gt: &LabelSet, mode: EvalMode, max_dets: usize) -> Self {
        let mut order = rank_predictions(preds);
        order.truncate(max_dets);
        let p_inst: Vec<_> = order.iter().map(|&i| &preds.instances()[i]).collect();
        // gt in id order so equal IoUs resolve to the lower id
        let mut g_inst: Vec<_> = gt.instances().iter().collect();
        g_inst.sort_by_key(|g| g.id());

        let ious = match mode {
            EvalMode::Box => p_inst
                .iter()
                .map(|p| {
                    g_inst
                        .iter()
                        .map(|g| box_iou(&p.bbox(), &g.bbox()))
                        .collect()
                })
                .collect(),
            EvalMode::Mask => {
                let p_masks: Vec<BinaryMask> = p_inst.iter().map(|p| p.mask()).collect();
                let g_masks: Vec<BinaryMask> = g_inst.iter().map(|g| g.mask()).collect();
                p_inst
                    .iter()
                    .zip(&p_masks)
                    .map(|(p, pm)| {
                        g_inst
                            .iter()
                            .zip(&g_masks)
                            .map(|(g, gm)| {
                                if boxes_disjoint(&p.bbox(), &g.bbox()) {
                                    return 0.0;
                                }
                                let inter = pm.intersection_area(gm).expect("same frame");
                                let union = p.area() as usize + g.area() as usize - inter;
                                inter as f64 / union as f64
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        Self {
            frame_id: preds.frame_id().to_string(),
            pred_ids: p_inst.iter().map(|p| p.id()).collect(),
            pred_scores: p_inst.iter().map(|p| p.score()).collect(),
            pred_areas: p_inst
                .iter()
                .map(|p| match mode {
                    EvalMode::Box => p.bbox().area(),
                    EvalMode::Mask => p.area() as f64,
                })
                .collect(),
            gt_ids: g_inst.iter().map(|g| g.id()).collect(),
            gt_areas: g_inst.iter().map(|g| g.area() as f64).collect(),
            ious,
        }
    }

    /// `matched[p] = Some(g)` in local indices.
    fn greedy(&self, thr: f64) -> Vec<Option<usize>> {
        let mut taken = vec![false; self.gt_ids.len()];
        self.ious
            .iter()
            .map(|row| {
                let mut best: Option<usize> = None;
                for (g, &iou) in row.iter().enumerate() {
                    if taken[g] || iou < thr {
                        continue;
                    }
                    if best.is_none_or(|b| iou > row[b]) {
                        best = Some(g);
                    }
                }
                if let Some(g) = best {
                    taken[g] = true;
                }
                best
            })
            .collect()
    }
}

fn check_frames(preds: &[LabelSet], gt: &[LabelSet]) -> Result<(), MetricsError> {
    for i in 0..preds.len().max(gt.len()) {
        let (p, g) = (preds.get(i), gt.get(i));
        let ok = matches!((p, g), (Some(p), Some(g)) if p.frame_id() == g.frame_id());
        if !ok {
            return Err(MetricsError::FrameMismatch {
                index: i,
                pred: p.map(|p| p.frame_id().to_string()),
                gt: g.map(|g| g.frame_id().to_string()),
            });
        }
        p.unwrap().ensure_same_frame(g.unwrap())?;
    }
    Ok(())
}

fn build_frames(
    preds: &[LabelSet],
    gt: &[LabelSet],
    cfg: &EvalConfig,
) -> Result<Vec<FrameData>, MetricsError> {
    cfg.validate()?;
    check_frames(preds, gt)?;
    Ok(preds
        .par_iter()
        .zip(gt.par_iter())
        .map(|(p, g)| FrameData::build(p, g, cfg.mode, cfg.max_dets))
        .collect())
}

pub fn match_instances(
    preds: &LabelSet,
    gt: &LabelSet,
    iou_thrd: f64,
    mode: EvalMode,
) -> Result<Matching, MetricsError> {
    preds.ensure_same_frame(gt)?;
    let frame = FrameData::build(preds, gt, mode, usize::MAX);
    let matched = frame.greedy(iou_thrd);
    let mut gt_used = vec![false; frame.gt_ids.len()];
    let mut pairs = Vec::new();
    let mut unmatched_preds = Vec::new();
    for (p, m) in matched.iter().enumerate() {
        match m {
            Some(g) => {
                gt_used[*g] = true;
                pairs.push((frame.pred_ids[p], frame.gt_ids[*g], frame.ious[p][*g]));
            }
            None => unmatched_preds.push(frame.pred_ids[p]),
        }
    }
    let unmatched_gt = frame
        .gt_ids
        .iter()
        .zip(&gt_used)
        .filter(|(_, &u)| !u)
        .map(|(&id, _)| id)
        .collect();
    Ok(Matching {
        pairs,
        unmatched_preds,
        unmatched_gt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub ar: f64,
    /// Recall at each configured threshold.
    pub per_threshold: Vec<f64>,
    /// AR restricted to small / medium / large GT.
    pub per_bucket: [f64; 3],
    pub num_gt: usize,
    pub bucket_gt: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSummary {
    pub ap: f64,
    pub per_threshold: Vec<f64>,
    pub per_bucket: [f64; 3],
    pub num_preds: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn recall_from(
    frames: &[FrameData],
    matches: &[Vec<Vec<Option<usize>>>],
    cfg: &EvalConfig,
) -> RecallSummary {
    let bucket = |a: f64| bucket_with(a, cfg.size_buckets).index();
    let mut bucket_gt = [0usize; 3];
    for f in frames {
        for &a in &f.gt_areas {
            bucket_gt[bucket(a)] += 1;
        }
    }
    let num_gt: usize = bucket_gt.iter().sum();
    let mut per_threshold = Vec::with_capacity(cfg.iou_thresholds.len());
    let mut per_bucket_thr = [Vec::new(), Vec::new(), Vec::new()];
    for t in 0..cfg.iou_thresholds.len() {
        let mut hit = [0usize; 3];
        for (f, m) in frames.iter().zip(matches) {
            for g in m[t].iter().flatten() {
                hit[bucket(f.gt_areas[*g])] += 1;
            }
        }
        per_threshold.push(ratio(hit.iter().sum(), num_gt));
        for b in 0..3 {
            per_bucket_thr[b].push(ratio(hit[b], bucket_gt[b]));
        }
    }
    RecallSummary {
        ar: mean(&per_threshold),
        per_threshold,
        per_bucket: [
            mean(&per_bucket_thr[0]),
            mean(&per_bucket_thr[1]),
            mean(&per_bucket_thr[2]),
        ],
        num_gt,
        bucket_gt,
    }
}

/// 101-point interpolated precision over a ranked TP/FP list.
pub fn interpolated_ap(ranked_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut rc = Vec::with_capacity(ranked_tp.len());
    let mut pr = Vec::with_capacity(ranked_tp.len());
    for (i, &is_tp) in ranked_tp.iter().enumerate() {
        tp += is_tp as usize;
        rc.push(tp as f64 / num_gt as f64);
        pr.push(tp as f64 / (i + 1) as f64);
    }
    for i in (1..pr.len()).rev() {
        if pr[i] > pr[i - 1] {
            pr[i - 1] = pr[i];
        }
    }
    let total: f64 = (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            let idx = rc.partition_point(|&x| x < r);
            pr.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    total / 101.0
}

fn precision_from(
    frames: &[FrameData],
    matches: &[Vec<Vec<Option<usize>>>],
    cfg: &EvalConfig,
) -> PrecisionSummary {
    let bucket = |a: f64| bucket_with(a, cfg.size_buckets);
    // pooled ranking is threshold independent
    let mut ranked: Vec<(usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| (0..f.pred_ids.len()).map(move |p| (fi, p)))
        .collect();
    ranked.sort_by(|&(fa, pa), &(fb, pb)| {
        let (a, b) = (&frames[fa], &frames[fb]);
        b.pred_scores[pb]
            .total_cmp(&a.pred_scores[pa])
            .then_with(|| a.frame_id.cmp(&b.frame_id))
            .then(a.pred_ids[pa].cmp(&b.pred_ids[pb]))
    });

    let mut bucket_gt = [0usize; 3];
    for f in frames {
        for &a in &f.gt_areas {
            bucket_gt[bucket(a).index()] += 1;
        }
    }
    let num_gt: usize = bucket_gt.iter().sum();

    let mut per_threshold = Vec::new();
    let mut per_bucket_thr = [Vec::new(), Vec::new(), Vec::new()];
    // t indexes the per-frame match tables, not the thresholds
    #[allow(clippy::needless_range_loop)]
    for t in 0..cfg.iou_thresholds.len() {
        let all: Vec<bool> = ranked
            .iter()
            .map(|&(fi, p)| matches[fi][t][p].is_some())
            .collect();
        per_threshold.push(interpolated_ap(&all, num_gt));
        for b in SizeBucket::ALL {
            let seq: Vec<bool> = ranked
                .iter()
                .filter_map(|&(fi, p)| match matches[fi][t][p] {
                    Some(g) => (bucket(frames[fi].gt_areas[g]) == b).then_some(true),
                    None => (bucket(frames[fi].pred_areas[p]) == b).then_some(false),
                })
                .collect();
            per_bucket_thr[b.index()].push(interpolated_ap(&seq, bucket_gt[b.index()]));
        }
    }
    PrecisionSummary {
        ap: mean(&per_threshold),
        per_threshold,
        per_bucket: [
            mean(&per_bucket_thr[0]),
            mean(&per_bucket_thr[1]),
            mean(&per_bucket_thr[2]),
        ],
        num_preds: ranked.len(),
    }
}

fn match_all(frames: &[FrameData], cfg: &EvalConfig) -> Vec<Vec<Vec<Option<usize>>>> {
    frames
        .par_iter()
        .map(|f| cfg.iou_thresholds.iter().map(|&t| f.greedy(t)).collect())
        .collect()
}

pub fn average_recall(
    preds: &[LabelSet],
    gt: &[LabelSet],
    cfg: &EvalConfig,
) -> Result<RecallSummary, MetricsError> {
    let frames = build_frames(preds, gt, cfg)?;
    Ok(recall_from(&frames, &match_all(&frames, cfg), cfg))
}

pub fn average_precision(
    preds: &[LabelSet],
    gt: &[LabelSet],
    cfg: &EvalConfig,
) -> Result<PrecisionSummary, MetricsError> {
    let frames = build_frames(preds, gt, cfg)?;
    Ok(precision_from(&frames, &match_all(&frames, cfg), cfg))
}

/// AR over all, static-only and moving-only ground truth. Predictions are
/// never filtered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSplit {
    pub all: RecallSummary,
    #[serde(rename = "static")]
    pub static_: RecallSummary,
    pub moving: RecallSummary,
}

pub fn attribute_split_ar(
    preds: &[LabelSet],
    gt: &[LabelSet],
    cfg: &EvalConfig,
) -> Result<AttributeSplit, MetricsError> {
    for g in gt {
        if let Some(inst) = g.instances().iter().find(|i| i.moving().is_none()) {
            return Err(MetricsError::MissingAttribute {
                frame_id: g.frame_id().to_string(),
                id: inst.id(),
            });
        }
    }
    let only = |moving: bool| -> Vec<LabelSet> {
        gt.iter()
            .map(|g| g.retain(|_, i| i.moving() == Some(moving)))
            .collect()
    };
    Ok(AttributeSplit {
        all: average_recall(preds, gt, cfg)?,
        static_: average_recall(preds, &only(false), cfg)?,
        moving: average_recall(preds, &only(true), cfg)?,
    })
}

/// The full table: IoU-averaged values plus the IoU 0.5 columns, per size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub num_frames: usize,
    pub num_gt: usize,
    pub num_preds: usize,
    pub bucket_gt: [usize; 3],
    pub ar50: f64,
    pub ar: f64,
    pub ar_s: f64,
    pub ar_m: f64,
    pub ar_l: f64,
    pub ap50: f64,
    pub ap: f64,
    pub ap_s: f64,
    pub ap_m: f64,
    pub ap_l: f64,
    pub iou_thresholds: Vec<f64>,
    pub recall_per_threshold: Vec<f64>,
    pub precision_per_threshold: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitColumns>,
}

/// AR⁰·⁵ and AR for all / static / moving GT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitColumns {
    pub all_ar50: f64,
    pub all_ar: f64,
    pub static_ar50: f64,
    pub static_ar: f64,
    pub moving_ar50: f64,
    pub moving_ar: f64,
    pub static_gt: usize,
    pub moving_gt: usize,
}

pub fn evaluate(
    preds: &[LabelSet],
    gt: &[LabelSet],
    cfg: &EvalConfig,
) -> Result<EvalReport, MetricsError> {
    let frames = build_frames(preds, gt, cfg)?;
    let matches = match_all(&frames, cfg);
    let recall = recall_from(&frames, &matches, cfg);
    let precision = precision_from(&frames, &matches, cfg);
    let at50 = cfg.at_iou(0.5);
    let m50 = match_all(&frames, &at50);
    let r50 = recall_from(&frames, &m50, &at50);
    let p50 = precision_from(&frames, &m50, &at50);
    Ok(EvalReport {
        mode: cfg.mode,
        num_frames: frames.len(),
        num_gt: recall.num_gt,
        num_preds: precision.num_preds,
        bucket_gt: recall.bucket_gt,
        ar50: r50.ar,
        ar: recall.ar,
        ar_s: recall.per_bucket[0],
        ar_m: recall.per_bucket[1],
        ar_l: recall.per_bucket[2],
        ap50: p50.ap,
        ap: precision.ap,
        ap_s: precision.per_bucket[0],
        ap_m: precision.per_bucket[1],
        ap_l: precision.per_bucket[2],
        iou_thresholds: cfg.iou_thresholds.clone(),
        recall_per_threshold: recall.per_threshold,
        precision_per_threshold: precision.per_threshold,
        split: None,
    })
}

/// Adds the all / static / moving AR columns to `report`.
pub fn with_split(
    mut report: EvalReport,
    preds: &[LabelSet],
    gt: &[LabelSet],
    cfg: &EvalConfig,
) -> Result<EvalReport, MetricsError> {
    let split = attribute_split_ar(preds, gt, cfg)?;
    let split50 = attribute_split_ar(preds, gt, &cfg.at_iou(0.5))?;
    report.split = Some(SplitColumns {
        all_ar50: split50.all.ar,
        all_ar: split.all.ar,
        static_ar50: split50.static_.ar,
        static_ar: split.static_.ar,
        moving_ar50: split50.moving.ar,
        moving_ar: split.moving.ar,
        static_gt: split.static_.num_gt,
        moving_gt: split.moving.num_gt,
    });
    Ok(report)
}

impl EvalReport {
    /// Fixed-width text table, values in percent.
    pub fn to_table(&self) -> String {
        let pct = |v: f64| format!("{:>6.1}", 100.0 * v);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<5} {:>6} {:>6} {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6} {:>6}\n",
            "mode", "AR50", "AR", "AR_S", "AR_M", "AR_L", "AP50", "AP", "AP_S", "AP_M", "AP_L"
        ));
        let mode = match self.mode {
            EvalMode::Box => "box",
            EvalMode::Mask => "mask",
        };
        out.push_str(&format!(
            "{:<5} {} {} {} {} {} | {} {} {} {} {}\n",
            mode,
            pct(self.ar50),
            pct(self.ar),
            pct(self.ar_s),
            pct(self.ar_m),
            pct(self.ar_l),
            pct(self.ap50),
            pct(self.ap),
            pct(self.ap_s),
            pct(self.ap_m),
            pct(self.ap_l)
        ));
        out.push_str(&format!(
            "frames {}  gt {} (S {} / M {} / L {})  predictions {}\n",
            self.num_frames,
            self.num_gt,
            self.bucket_gt[0],
            self.bucket_gt[1],
            self.bucket_gt[2],
            self.num_preds
        ));
        if let Some(s) = &self.split {
            out.push_str(&format!(
                "split AR50/AR  all {}/{}  static {}/{}  moving {}/{}\n",
                pct(s.all_ar50).trim(),
                pct(s.all_ar).trim(),
                pct(s.static_ar50).trim(),
                pct(s.static_ar).trim(),
                pct(s.moving_ar50).trim(),
                pct(s.moving_ar).trim()
            ));
        }
        out
    }
}
