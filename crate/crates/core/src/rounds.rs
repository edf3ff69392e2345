//! Self-training rounds around an external detector.
//!
//! The pipeline produces three label rounds per frame:
//!
//! * `l0`: initial labels from motion and depth
//! * `l1`: confident predictions of a detector trained briefly on `l0`
//!   (moving to mobile)
//! * `l2`: aggregated predictions of a full-scale and a downscaled detector
//!   trained on `l1` (large to small)
//!
//! and finally a training request on `l2`. Detectors live outside this crate
//! and talk to it through an exchange directory:
//!
//! ```text
//! <work>/<branch>/request/<frame_id>.labels.json     training labels
//! <work>/<branch>/request/<frame_id>.transform.json  inference frame
//! <work>/<branch>/MANIFEST.json                      frame list + round config
//! <work>/<branch>/response/<frame_id>.pred.json      scored predictions
//! <work>/labels/<round>/<frame_id>.labels.json       round outputs
//! ```
//!
//! Predictions are expressed in the frame given by the request transform; the
//! pipeline maps them back. The manifest is written after every request file,
//! so a detector polling for it never sees a partial request.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{mask_agg, AggError, AggParams};
use crate::initlabel::{make_initial_labels, InitLabelConfig, InitLabelError};
use crate::io::{self, DatasetLayout, IoError};
use crate::label::LabelSet;
use crate::mask::{mask_iou, MaskError};
use crate::rescale::{
    crop_to_content, invert_labels, make_transform, transform_labels, RescaleError, ScaleTransform,
};
use crate::synthgen::{mock_detector, MockNoise};

#[derive(Debug, Error)]
pub enum RoundError {
    #[error("{branch}: no predictions for frame {frame_id}")]
    MissingPredictions { branch: Branch, frame_id: String },
    #[error("{stage} needs the {requires} labels, which do not exist yet")]
    StageOrderViolation {
        stage: Stage,
        requires: &'static str,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    InitLabel(#[from] InitLabelError),
    #[error(transparent)]
    Rescale(#[from] RescaleError),
    #[error(transparent)]
    Agg(#[from] AggError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

impl RoundError {
    /// 2 for contract violations, 3 for missing inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RoundError::MissingPredictions { .. } => 3,
            RoundError::Io(e) if e.is_not_found() => 3,
            RoundError::StageOrderViolation { .. }
            | RoundError::Contract(_)
            | RoundError::InvalidConfig(_)
            | RoundError::Io(_) => 2,
            _ => 1,
        }
    }
}

/// Keeps instances scoring at least `conf`.
pub fn threshold_filter(predictions: &LabelSet, conf: f64) -> LabelSet {
    predictions.retain(|_, inst| inst.score() >= conf)
}

/// Keeps predictions whose best mask IoU against `gt` is at least `min_iou`.
pub fn gt_overlap_filter(
    predictions: &LabelSet,
    gt: &LabelSet,
    min_iou: f64,
) -> Result<LabelSet, MaskError> {
    predictions.ensure_same_frame(gt)?;
    let gt_masks = gt.decode_masks();
    let keep: Vec<bool> = predictions
        .instances()
        .iter()
        .map(|p| {
            let m = p.mask();
            gt_masks
                .iter()
                .any(|g| mask_iou(&m, g).map(|iou| iou >= min_iou).unwrap_or(false))
        })
        .collect();
    Ok(predictions.retain(|i, _| keep[i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Moving2MobileConfig {
    pub conf: f64,
    /// Training scale jitter range, advisory for the detector.
    pub jitter: [f64; 2],
    /// Training length, advisory for the detector.
    pub epochs: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Large2SmallConfig {
    pub large_conf: f64,
    pub small_conf: f64,
    pub large_scale: f64,
    pub small_scale: f64,
    pub epochs: u32,
    pub agg: AggParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalConfig {
    pub jitter: [f64; 2],
    pub epochs: u32,
}

/// Configuration of one stage, as recorded in the exchange manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum RoundConfig {
    Moving2Mobile(Moving2MobileConfig),
    Large2Small(Large2SmallConfig),
    Final(FinalConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub init: InitLabelConfig,
    pub moving2mobile: Moving2MobileConfig,
    pub large2small: Large2SmallConfig,
    #[serde(rename = "final")]
    pub final_round: FinalConfig,
    /// Minimum IoU against ground truth for the oracle filter.
    pub gt_overlap: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            init: InitLabelConfig::default(),
            moving2mobile: Moving2MobileConfig {
                conf: 0.5,
                jitter: [0.5, 1.0],
                epochs: 3,
            },
            large2small: Large2SmallConfig {
                large_conf: 0.9,
                small_conf: 0.8,
                large_scale: 1.0,
                small_scale: 0.25,
                epochs: 20,
                agg: AggParams::default(),
            },
            final_round: FinalConfig {
                jitter: [0.5, 1.0],
                epochs: 20,
            },
            gt_overlap: 0.1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), RoundError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(RoundError::InvalidConfig(format!(
                    "{name}={v} outside [0, 1]"
                )))
            }
        };
        let scale = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(RoundError::InvalidConfig(format!(
                    "{name}={v} outside (0, 1]"
                )))
            }
        };
        unit("init.motion_threshold", self.init.motion_threshold)?;
        unit("moving2mobile.conf", self.moving2mobile.conf)?;
        unit("large2small.large_conf", self.large2small.large_conf)?;
        unit("large2small.small_conf", self.large2small.small_conf)?;
        unit("gt_overlap", self.gt_overlap)?;
        scale("large2small.large_scale", self.large2small.large_scale)?;
        scale("large2small.small_scale", self.large2small.small_scale)?;
        for (name, [lo, hi]) in [
            ("moving2mobile.jitter", self.moving2mobile.jitter),
            ("final.jitter", self.final_round.jitter),
        ] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(RoundError::InvalidConfig(format!("{name}=[{lo}, {hi}]")));
            }
        }
        self.init.dbscan.validate()?;
        self.large2small.agg.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Moving2Mobile,
    Large2Small,
    Final,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Moving2Mobile => "moving2mobile",
            Stage::Large2Small => "large2small",
            Stage::Final => "final",
        })
    }
}

/// One detector run. Large-to-small has two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    M2m,
    L2sLarge,
    L2sSmall,
    Final,
}

impl Branch {
    pub fn dir_name(self) -> &'static str {
        match self {
            Branch::M2m => "m2m",
            Branch::L2sLarge => "l2s-large",
            Branch::L2sSmall => "l2s-small",
            Branch::Final => "final",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Branch::M2m => 1,
            Branch::L2sLarge => 2,
            Branch::L2sSmall => 3,
            Branch::Final => 4,
        }
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// Moving to mobile: confident predictions become the next labels.
pub fn moving_to_mobile(predictions: &LabelSet, cfg: &Moving2MobileConfig) -> LabelSet {
    let kept = threshold_filter(predictions, cfg.conf);
    kept.renumbered(
        kept.instances()
            .iter()
            .cloned()
            .map(|i| i.with_moving(None)),
    )
}

/// Large to small: threshold both branches, map them back to the original
/// frame and aggregate. Small-branch pixels in the padding are discarded.
pub fn large_to_small(
    large: &LabelSet,
    large_t: &ScaleTransform,
    small: &LabelSet,
    small_t: &ScaleTransform,
    cfg: &Large2SmallConfig,
) -> Result<LabelSet, RoundError> {
    let back = |p: &LabelSet, t: &ScaleTransform, conf: f64| -> Result<LabelSet, RescaleError> {
        invert_labels(&crop_to_content(&threshold_filter(p, conf), t)?, t)
    };
    let ml = back(large, large_t, cfg.large_conf)?;
    let ms = back(small, small_t, cfg.small_conf)?;
    Ok(mask_agg(&ml, &ms, &cfg.agg)?)
}

/// Anything that turns a training request into predictions for one frame.
pub trait Detector: Sync {
    /// `frame_index` is the position of the frame in the sorted frame list.
    /// Predictions must be in the coordinates described by `transform`.
    fn predict(
        &self,
        branch: Branch,
        frame_index: usize,
        request: &LabelSet,
        transform: &ScaleTransform,
    ) -> Result<LabelSet, RoundError>;
}

/// Noise per detector run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchNoise {
    pub m2m: MockNoise,
    pub large: MockNoise,
    pub small: MockNoise,
    #[serde(rename = "final")]
    pub final_round: MockNoise,
}

impl BranchNoise {
    pub fn uniform(noise: MockNoise) -> Self {
        Self {
            m2m: noise.clone(),
            large: noise.clone(),
            small: noise.clone(),
            final_round: noise,
        }
    }

    fn get(&self, branch: Branch) -> &MockNoise {
        match branch {
            Branch::M2m => &self.m2m,
            Branch::L2sLarge => &self.large,
            Branch::L2sSmall => &self.small,
            Branch::Final => &self.final_round,
        }
    }
}

/// Stand-in detector that ignores its training labels and returns perturbed
/// ground truth, rescaled into the request frame.
#[derive(Debug, Clone)]
pub struct GtMockDetector {
    gt: HashMap<String, LabelSet>,
    noise: BranchNoise,
    seed: u64,
}

impl GtMockDetector {
    pub fn new(gt: impl IntoIterator<Item = LabelSet>, noise: BranchNoise, seed: u64) -> Self {
        Self {
            gt: gt
                .into_iter()
                .map(|l| (l.frame_id().to_string(), l))
                .collect(),
            noise,
            seed,
        }
    }

    /// Loads ground truth from `labels/` of a dataset.
    pub fn from_dataset(
        layout: &DatasetLayout,
        noise: BranchNoise,
        seed: u64,
    ) -> Result<Self, RoundError> {
        let gt = layout
            .frame_ids()?
            .par_iter()
            .map(|id| io::read_labels(&layout.labels_path(id)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(gt, noise, seed))
    }
}

impl Detector for GtMockDetector {
    fn predict(
        &self,
        branch: Branch,
        frame_index: usize,
        request: &LabelSet,
        transform: &ScaleTransform,
    ) -> Result<LabelSet, RoundError> {
        let gt = self.gt.get(request.frame_id()).ok_or_else(|| {
            RoundError::Contract(format!("no ground truth for frame {}", request.frame_id()))
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((branch.stream() << 40) | frame_index as u64);
        let visible = transform_labels(gt, transform)?;
        Ok(mock_detector(&visible, self.noise.get(branch), &mut rng))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub branch: Branch,
    pub frames: Vec<String>,
    pub config: RoundConfig,
}

/// Paths of a pipeline working directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub root: PathBuf,
}

/// Round outputs kept under `labels/`.
pub const ROUNDS: [&str; 3] = ["l0", "l1", "l2"];

impl Exchange {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest_path(&self, b: Branch) -> PathBuf {
        self.root.join(b.dir_name()).join("MANIFEST.json")
    }

    pub fn request_labels_path(&self, b: Branch, frame_id: &str) -> PathBuf {
        self.root
            .join(b.dir_name())
            .join("request")
            .join(format!("{frame_id}.labels.json"))
    }

    pub fn request_transform_path(&self, b: Branch, frame_id: &str) -> PathBuf {
        self.root
            .join(b.dir_name())
            .join("request")
            .join(format!("{frame_id}.transform.json"))
    }

    pub fn response_dir(&self, b: Branch) -> PathBuf {
        self.root.join(b.dir_name()).join("response")
    }

    pub fn response_path(&self, b: Branch, frame_id: &str) -> PathBuf {
        self.response_dir(b).join(format!("{frame_id}.pred.json"))
    }

    pub fn round_path(&self, round: &str, frame_id: &str) -> PathBuf {
        self.root
            .join("labels")
            .join(round)
            .join(format!("{frame_id}.labels.json"))
    }

    fn round_index_path(&self, round: &str) -> PathBuf {
        self.root.join("labels").join(round).join("INDEX.json")
    }

    /// True once every frame of `round` has been written.
    pub fn round_complete(&self, round: &str) -> bool {
        self.round_index_path(round).is_file()
    }

    pub fn read_round(
        &self,
        round: &str,
        frame_ids: &[String],
    ) -> Result<Vec<LabelSet>, RoundError> {
        frame_ids
            .par_iter()
            .map(|id| Ok(io::read_labels(&self.round_path(round, id))?))
            .collect()
    }

    fn write_round(&self, round: &str, labels: &[LabelSet]) -> Result<(), RoundError> {
        labels
            .par_iter()
            .try_for_each(|l| io::write_labels(&self.round_path(round, l.frame_id()), l))?;
        let index = serde_json::json!({
            "round": round,
            "frames": labels.iter().map(|l| l.frame_id()).collect::<Vec<_>>(),
            "instances": labels.iter().map(|l| l.len()).sum::<usize>(),
        });
        io::write_atomic(
            &self.round_index_path(round),
            format!("{index:#}\n").as_bytes(),
        )?;
        Ok(())
    }

    /// Writes request labels and transforms, then the manifest.
    pub fn write_request(
        &self,
        b: Branch,
        requests: &[(LabelSet, ScaleTransform)],
        config: RoundConfig,
    ) -> Result<(), RoundError> {
        requests
            .par_iter()
            .try_for_each(|(l, t)| -> Result<(), IoError> {
                io::write_labels(&self.request_labels_path(b, l.frame_id()), l)?;
                io::write_transform(&self.request_transform_path(b, l.frame_id()), t)
            })?;
        let manifest = Manifest {
            branch: b,
            frames: requests
                .iter()
                .map(|(l, _)| l.frame_id().to_string())
                .collect(),
            config,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        io::write_atomic(&self.manifest_path(b), text.as_bytes())?;
        Ok(())
    }

    pub fn read_manifest(&self, b: Branch) -> Result<Manifest, RoundError> {
        let path = self.manifest_path(b);
        let text = fs::read_to_string(&path).map_err(|source| IoError::Io { path, source })?;
        serde_json::from_str(&text).map_err(|e| RoundError::Contract(format!("{b} manifest: {e}")))
    }

    /// Reads one prediction file per requested frame and checks it against
    /// the request. Extra response files are a contract violation.
    pub fn read_responses(
        &self,
        b: Branch,
        requests: &[(LabelSet, ScaleTransform)],
    ) -> Result<Vec<LabelSet>, RoundError> {
        let wanted: BTreeSet<&str> = requests.iter().map(|(l, _)| l.frame_id()).collect();
        if let Ok(entries) = fs::read_dir(self.response_dir(b)) {
            for entry in entries.flatten() {
                let name = entry.file_name();
                let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".pred.json")) else {
                    continue;
                };
                if !wanted.contains(id) {
                    return Err(RoundError::Contract(format!(
                        "{b}: prediction for unrequested frame {id}"
                    )));
                }
            }
        }
        if let Some((l, _)) = requests
            .iter()
            .find(|(l, _)| !self.response_path(b, l.frame_id()).is_file())
        {
            return Err(RoundError::MissingPredictions {
                branch: b,
                frame_id: l.frame_id().to_string(),
            });
        }
        requests
            .par_iter()
            .map(|(req, _)| {
                let pred =
                    io::read_labels(&self.response_path(b, req.frame_id())).map_err(|e| {
                        RoundError::Contract(format!(
                            "{b}: predictions for frame {}: {e}",
                            req.frame_id()
                        ))
                    })?;
                if pred.frame_id() != req.frame_id() || pred.dims() != req.dims() {
                    return Err(RoundError::Contract(format!(
                        "{b}: predictions for frame {} describe frame {} of size {:?}",
                        req.frame_id(),
                        pred.frame_id(),
                        pred.dims()
                    )));
                }
                Ok(pred)
            })
            .collect()
    }

    fn responses_complete(&self, b: Branch, requests: &[(LabelSet, ScaleTransform)]) -> bool {
        requests
            .iter()
            .all(|(l, _)| self.response_path(b, l.frame_id()).is_file())
    }

    /// Runs `detector` on every request that has no response yet.
    pub fn fill_responses(
        &self,
        b: Branch,
        requests: &[(LabelSet, ScaleTransform)],
        detector: &dyn Detector,
    ) -> Result<(), RoundError> {
        requests
            .par_iter()
            .enumerate()
            .try_for_each(|(i, (req, t))| -> Result<(), RoundError> {
                let path = self.response_path(b, req.frame_id());
                if path.is_file() {
                    return Ok(());
                }
                let pred = detector.predict(b, i, req, t)?;
                io::write_labels(&path, &pred)?;
                Ok(())
            })
    }
}

/// Instance counts after a pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PipelineSummary {
    pub frames: usize,
    pub l0: usize,
    pub l1: usize,
    pub l2: usize,
    /// Stages computed in this run, as opposed to reused from disk.
    pub computed: Vec<Stage>,
}

impl std::fmt::Display for PipelineSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} frames: l0 {} / l1 {} / l2 {} instances",
            self.frames, self.l0, self.l1, self.l2
        )
    }
}

/// Resumable orchestration over a dataset and a working directory.
pub struct Pipeline<'a> {
    pub dataset: &'a DatasetLayout,
    pub exchange: &'a Exchange,
    pub config: &'a PipelineConfig,
    /// When set, missing responses are produced in-process.
    pub detector: Option<&'a dyn Detector>,
}

fn count(labels: &[LabelSet]) -> usize {
    labels.iter().map(|l| l.len()).sum()
}

impl Pipeline<'_> {
    fn frame_ids(&self) -> Result<Vec<String>, RoundError> {
        let ids = self.dataset.frame_ids()?;
        if ids.is_empty() {
            return Err(RoundError::Io(IoError::Io {
                path: self.dataset.root.join("depth"),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no frames"),
            }));
        }
        Ok(ids)
    }

    /// Initial labels from the dataset's motion and depth maps.
    pub fn initial(&self, ids: &[String]) -> Result<Vec<LabelSet>, RoundError> {
        if self.exchange.round_complete("l0") {
            return self.exchange.read_round("l0", ids);
        }
        let k = io::read_intrinsics(&self.dataset.intrinsics_path())?;
        let l0 = ids
            .par_iter()
            .map(|id| {
                let f = self.dataset.read_frame(id)?;
                Ok(make_initial_labels(
                    id,
                    &f.depth,
                    &f.motion,
                    &k,
                    &self.config.init,
                )?)
            })
            .collect::<Result<Vec<_>, RoundError>>()?;
        self.exchange.write_round("l0", &l0)?;
        Ok(l0)
    }

    fn require(&self, stage: Stage, round: &'static str) -> Result<(), RoundError> {
        if self.exchange.round_complete(round) {
            Ok(())
        } else {
            Err(RoundError::StageOrderViolation {
                stage,
                requires: round,
            })
        }
    }

    fn responses(
        &self,
        b: Branch,
        requests: &[(LabelSet, ScaleTransform)],
        config: RoundConfig,
    ) -> Result<Vec<LabelSet>, RoundError> {
        if !self.exchange.manifest_path(b).is_file() {
            self.exchange.write_request(b, requests, config)?;
        }
        if let Some(det) = self.detector {
            if !self.exchange.responses_complete(b, requests) {
                self.exchange.fill_responses(b, requests, det)?;
            }
        }
        self.exchange.read_responses(b, requests)
    }

    fn identity_requests(labels: &[LabelSet]) -> Vec<(LabelSet, ScaleTransform)> {
        labels
            .iter()
            .map(|l| (l.clone(), ScaleTransform::identity(l.height(), l.width())))
            .collect()
    }

    fn scaled_requests(
        labels: &[LabelSet],
        scale: f64,
    ) -> Result<Vec<(LabelSet, ScaleTransform)>, RoundError> {
        labels
            .par_iter()
            .map(|l| {
                let t = make_transform(l.height(), l.width(), scale)?;
                Ok((transform_labels(l, &t)?, t))
            })
            .collect()
    }

    /// Runs one stage. Its input round must already exist.
    pub fn run_stage(&self, stage: Stage) -> Result<Vec<LabelSet>, RoundError> {
        self.config.validate()?;
        let ids = self.frame_ids()?;
        let cfg = self.config;
        match stage {
            Stage::Moving2Mobile => {
                self.require(stage, "l0")?;
                if self.exchange.round_complete("l1") {
                    return self.exchange.read_round("l1", &ids);
                }
                let l0 = self.exchange.read_round("l0", &ids)?;
                let requests = Self::identity_requests(&l0);
                let preds = self.responses(
                    Branch::M2m,
                    &requests,
                    RoundConfig::Moving2Mobile(cfg.moving2mobile),
                )?;
                let l1 = preds
                    .par_iter()
                    .zip(&requests)
                    .map(|(p, (_, t))| {
                        let back = invert_labels(&crop_to_content(p, t)?, t)?;
                        Ok(moving_to_mobile(&back, &cfg.moving2mobile))
                    })
                    .collect::<Result<Vec<_>, RoundError>>()?;
                self.exchange.write_round("l1", &l1)?;
                Ok(l1)
            }
            Stage::Large2Small => {
                self.require(stage, "l1")?;
                if self.exchange.round_complete("l2") {
                    return self.exchange.read_round("l2", &ids);
                }
                let l1 = self.exchange.read_round("l1", &ids)?;
                let l2s = cfg.large2small;
                let large_req = Self::scaled_requests(&l1, l2s.large_scale)?;
                let small_req = Self::scaled_requests(&l1, l2s.small_scale)?;
                let config = RoundConfig::Large2Small(l2s);
                let large = self.responses(Branch::L2sLarge, &large_req, config)?;
                let small = self.responses(Branch::L2sSmall, &small_req, config)?;
                let l2 = (0..ids.len())
                    .into_par_iter()
                    .map(|i| {
                        large_to_small(&large[i], &large_req[i].1, &small[i], &small_req[i].1, &l2s)
                    })
                    .collect::<Result<Vec<_>, RoundError>>()?;
                self.exchange.write_round("l2", &l2)?;
                Ok(l2)
            }
            Stage::Final => {
                self.require(stage, "l2")?;
                let l2 = self.exchange.read_round("l2", &ids)?;
                if !self.exchange.manifest_path(Branch::Final).is_file() {
                    self.exchange.write_request(
                        Branch::Final,
                        &Self::identity_requests(&l2),
                        RoundConfig::Final(cfg.final_round),
                    )?;
                }
                Ok(l2)
            }
        }
    }

    /// Runs every stage whose outputs are missing, up to and including `last`.
    pub fn run(&self, last: Stage) -> Result<PipelineSummary, RoundError> {
        self.config.validate()?;
        let ids = self.frame_ids()?;
        let mut summary = PipelineSummary {
            frames: ids.len(),
            ..Default::default()
        };
        summary.l0 = count(&self.initial(&ids)?);
        for stage in [Stage::Moving2Mobile, Stage::Large2Small, Stage::Final] {
            if stage > last {
                break;
            }
            let done = match stage {
                Stage::Moving2Mobile => self.exchange.round_complete("l1"),
                Stage::Large2Small => self.exchange.round_complete("l2"),
                Stage::Final => self.exchange.manifest_path(Branch::Final).is_file(),
            };
            let out = self.run_stage(stage)?;
            if !done {
                summary.computed.push(stage);
            }
            match stage {
                Stage::Moving2Mobile => summary.l1 = count(&out),
                Stage::Large2Small => summary.l2 = count(&out),
                Stage::Final => {}
            }
        }
        Ok(summary)
    }
}

/// Removes a working directory's outputs for `stage` and everything after it.
pub fn reset_from(exchange: &Exchange, stage: Stage) -> Result<(), RoundError> {
    let mut dirs: Vec<PathBuf> = Vec::new();
    let rounds_from = match stage {
        Stage::Moving2Mobile => 1,
        Stage::Large2Small => 2,
        Stage::Final => 3,
    };
    for r in &ROUNDS[rounds_from.min(3)..] {
        dirs.push(exchange.root.join("labels").join(r));
    }
    let branches: &[Branch] = match stage {
        Stage::Moving2Mobile => &[
            Branch::M2m,
            Branch::L2sLarge,
            Branch::L2sSmall,
            Branch::Final,
        ],
        Stage::Large2Small => &[Branch::L2sLarge, Branch::L2sSmall, Branch::Final],
        Stage::Final => &[Branch::Final],
    };
    dirs.extend(branches.iter().map(|b| exchange.root.join(b.dir_name())));
    for d in dirs {
        remove_dir(&d)?;
    }
    Ok(())
}

fn remove_dir(path: &Path) -> Result<(), RoundError> {
    match fs::remove_dir_all(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(source) => Err(IoError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()),
    }
}
