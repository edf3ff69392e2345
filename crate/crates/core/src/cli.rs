//! The `mobilabel` command line.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or contract violation,
//! 3 missing inputs. A `--config` TOML file supplies flag values; flags given
//! on the command line win. Top-level keys are global flags, tables named
//! after a subcommand hold that subcommand's flags:
//!
//! ```toml
//! workers = 4
//!
//! [aggregate]
//! match-thrd = 0.6
//! ```

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::{mask_agg, nms, AggParams};
use crate::initlabel::{make_initial_labels, DbscanParams, InitLabelConfig, PartitionMethod};
use crate::io::{self, DatasetLayout, Frame, IoError};
use crate::label::LabelSet;
use crate::metrics::{evaluate, with_split, EvalConfig, EvalMode};
use crate::raster::{DepthMap, MotionMask};
use crate::rescale::{
    invert_labels, make_transform, transform_labels, transform_raster, ScaleTransform,
};
use crate::rounds::{
    gt_overlap_filter, reset_from, threshold_filter, BranchNoise, Exchange, GtMockDetector,
    Pipeline, PipelineConfig, RoundError, Stage,
};
use crate::synthgen::{frame_id, generate_scene, MockNoise, SceneSpec};

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn missing(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = if e.is_not_found() { 3 } else { 2 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<RoundError> for CliError {
    fn from(e: RoundError) -> Self {
        Self {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

macro_rules! internal_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::internal(e.to_string())
            }
        }
    )*};
}

internal_from!(
    crate::initlabel::InitLabelError,
    crate::rescale::RescaleError,
    crate::aggregate::AggError,
    crate::mask::MaskError,
    crate::synthgen::SynthError,
    crate::label::LabelError
);

impl From<crate::metrics::MetricsError> for CliError {
    fn from(e: crate::metrics::MetricsError) -> Self {
        use crate::metrics::MetricsError::*;
        let code = match e {
            FrameMismatch { .. } | MissingAttribute { .. } | InvalidConfig(_) => 2,
            Mask(_) => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<String, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "mobilabel",
    version,
    about = "Pseudo-labels for class-agnostic mobile-object detection",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for per-frame work (default: all cores).
    #[arg(long, global = true, env = "MOBILABEL_WORKERS")]
    pub workers: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// TOML file with flag values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with exact ground truth.
    Synth(SynthArgs),
    /// Initial labels from motion and depth.
    InitLabels(InitLabelsArgs),
    /// Apply or invert the downscale-and-pad transform.
    Rescale(RescaleArgs),
    /// Merge large-scale and small-scale proposals.
    Aggregate(AggregateArgs),
    /// Confidence or ground-truth-overlap filtering.
    Filter(FilterArgs),
    /// Class-agnostic AR / AP against ground truth.
    Eval(EvalArgs),
    /// Run the self-training rounds against an exchange directory.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 192)]
    pub height: usize,
    #[arg(long, default_value_t = 384)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub min_objects: usize,
    #[arg(long, default_value_t = 6)]
    pub max_objects: usize,
    /// Smallest object side, px.
    #[arg(long, default_value_t = 12)]
    pub min_size: usize,
    /// Largest object side, px.
    #[arg(long, default_value_t = 128)]
    pub max_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub moving_fraction: f64,
    /// Gaussian depth noise σ, meters.
    #[arg(long, default_value_t = 0.0)]
    pub depth_noise: f64,
    /// Box-blur radius of the motion map, px.
    #[arg(long, default_value_t = 0)]
    pub motion_blur: usize,
    /// Minimum gap between objects, px.
    #[arg(long, default_value_t = 12)]
    pub min_gap: usize,
}

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    /// Motion probability at or above which a pixel is moving.
    #[arg(long, default_value_t = 0.1)]
    pub motion_threshold: f64,
    /// DBSCAN radius in meters.
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    /// DBSCAN core-point threshold, the point itself included.
    #[arg(long, default_value_t = 4)]
    pub min_pts: usize,
    /// Width of the pixel window searched for neighbors.
    #[arg(long, default_value_t = 10)]
    pub pixel_window: usize,
    /// Instances smaller than this many pixels are dropped.
    #[arg(long, default_value_t = 16)]
    pub min_area: usize,
    /// 2D connected components instead of depth-aware clustering.
    #[arg(long)]
    pub contour: bool,
}

impl InitArgs {
    fn config(&self) -> InitLabelConfig {
        InitLabelConfig {
            motion_threshold: self.motion_threshold,
            dbscan: DbscanParams {
                eps: self.eps,
                min_pts: self.min_pts,
                pixel_window: self.pixel_window,
            },
            min_area: self.min_area,
            method: if self.contour {
                PartitionMethod::Contour
            } else {
                PartitionMethod::Depth
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct InitLabelsArgs {
    /// Dataset directory (depth/, motion/, intrinsics.json).
    #[arg(long)]
    pub data: PathBuf,
    /// Output label directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub init: InitArgs,
}

#[derive(Debug, Args)]
pub struct RescaleArgs {
    /// Directory of label files.
    #[arg(long)]
    pub labels: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Content scale in (0, 1].
    #[arg(long, default_value_t = 0.25, conflicts_with = "invert")]
    pub scale: f64,
    /// Map labels back with the per-frame transforms in `--transforms`.
    #[arg(long, requires = "transforms")]
    pub invert: bool,
    /// Directory of `<frame_id>.transform.json` files.
    #[arg(long)]
    pub transforms: Option<PathBuf>,
    /// Dataset whose depth and motion rasters are transformed too.
    #[arg(long, conflicts_with = "invert")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AggArgs {
    /// IoU above which a small proposal overlaps a large one.
    #[arg(long, default_value_t = 0.5)]
    pub match_thrd: f64,
    /// Coverage above which the smaller of two same-set proposals is dropped.
    #[arg(long, default_value_t = 0.75)]
    pub filt_frac: f64,
    /// Coverage that decides between a group and its parts.
    #[arg(long, default_value_t = 0.5)]
    pub cover_frac: f64,
}

impl AggArgs {
    fn params(&self) -> AggParams {
        AggParams {
            match_thrd: self.match_thrd,
            filt_frac: self.filt_frac,
            cover_frac: self.cover_frac,
        }
    }
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Large-scale proposals, in original coordinates.
    #[arg(long)]
    pub large: PathBuf,
    /// Small-scale proposals, in original coordinates.
    #[arg(long)]
    pub small: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub agg: AggArgs,
    /// Greedy NMS over the union instead of mask aggregation.
    #[arg(long)]
    pub nms: bool,
    /// IoU above which NMS suppresses.
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Directory of scored predictions.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep instances scoring at least this.
    #[arg(long)]
    pub conf: Option<f64>,
    /// Ground-truth directory; keeps predictions overlapping some GT instance.
    #[arg(long, value_name = "GT_DIR")]
    pub gt_overlap: Option<PathBuf>,
    /// Minimum IoU for `--gt-overlap`.
    #[arg(long, default_value_t = 0.1)]
    pub min_iou: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Box,
    Mask,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Mask)]
    pub mode: ModeArg,
    /// Also report AR over static and moving ground truth.
    #[arg(long)]
    pub split: bool,
    /// Write the full report as JSON.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    /// Maximum detections per frame.
    #[arg(long, default_value_t = 100)]
    pub max_dets: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StageArg {
    Moving2mobile,
    Large2small,
    Final,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Moving2mobile => Stage::Moving2Mobile,
            StageArg::Large2small => Stage::Large2Small,
            StageArg::Final => Stage::Final,
        }
    }
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Working directory holding requests, responses and label rounds.
    #[arg(long)]
    pub work: PathBuf,
    /// Stop after this stage.
    #[arg(long, value_enum, default_value_t = StageArg::Final)]
    pub until: StageArg,
    /// Run only this stage; its input round must exist.
    #[arg(long, value_enum, conflicts_with = "until")]
    pub stage: Option<StageArg>,
    /// Delete outputs of this stage and every later one first.
    #[arg(long, value_enum)]
    pub reset_from: Option<StageArg>,
    #[command(flatten)]
    pub init: InitArgs,
    /// Moving-to-mobile confidence threshold.
    #[arg(long, default_value_t = 0.5)]
    pub m2m_conf: f64,
    /// Large-to-small confidence threshold, large branch.
    #[arg(long, default_value_t = 0.9)]
    pub large_conf: f64,
    /// Large-to-small confidence threshold, small branch.
    #[arg(long, default_value_t = 0.8)]
    pub small_conf: f64,
    #[arg(long, default_value_t = 1.0)]
    pub large_scale: f64,
    #[arg(long, default_value_t = 0.25)]
    pub small_scale: f64,
    /// Training scale jitter lower bound (moving-to-mobile and final).
    #[arg(long, default_value_t = 0.5)]
    pub jitter_min: f64,
    /// Training scale jitter upper bound (moving-to-mobile and final).
    #[arg(long, default_value_t = 1.0)]
    pub jitter_max: f64,
    /// Advisory training length for moving-to-mobile.
    #[arg(long, default_value_t = 3)]
    pub m2m_epochs: u32,
    /// Advisory training length for large-to-small and final.
    #[arg(long, default_value_t = 20)]
    pub epochs: u32,
    #[command(flatten)]
    pub agg: AggArgs,
    #[command(flatten)]
    pub mock: MockArgs,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    /// Answer requests with perturbed ground truth from the dataset's labels/.
    #[arg(long)]
    pub mock_detector: bool,
    #[arg(long, default_value_t = 0)]
    pub mock_seed: u64,
    /// Maximum mask shift, px.
    #[arg(long, default_value_t = 0)]
    pub mock_shift: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mock_score_mean: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mock_score_std: f64,
    /// Probability of missing an instance.
    #[arg(long, default_value_t = 0.0)]
    pub mock_dropout: f64,
    /// Expected false positives per frame.
    #[arg(long, default_value_t = 0.0)]
    pub mock_fp: f64,
    /// Instances below this area (px, original frame) are invisible to the
    /// full-scale detector runs.
    #[arg(long, default_value_t = 0)]
    pub mock_min_area: u64,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            init: self.init.config(),
            ..PipelineConfig::default()
        };
        cfg.moving2mobile.conf = self.m2m_conf;
        cfg.moving2mobile.jitter = [self.jitter_min, self.jitter_max];
        cfg.moving2mobile.epochs = self.m2m_epochs;
        cfg.large2small.large_conf = self.large_conf;
        cfg.large2small.small_conf = self.small_conf;
        cfg.large2small.large_scale = self.large_scale;
        cfg.large2small.small_scale = self.small_scale;
        cfg.large2small.epochs = self.epochs;
        cfg.large2small.agg = self.agg.params();
        cfg.final_round.jitter = [self.jitter_min, self.jitter_max];
        cfg.final_round.epochs = self.epochs;
        cfg
    }
}

impl MockArgs {
    fn noise(&self) -> BranchNoise {
        let base = MockNoise {
            shift: self.mock_shift,
            score_mean: self.mock_score_mean,
            score_std: self.mock_score_std,
            dropout: self.mock_dropout,
            min_area: self.mock_min_area,
            false_positives: self.mock_fp,
            ..MockNoise::default()
        };
        let mut noise = BranchNoise::uniform(base);
        // the downscaled run is the one that sees small objects
        noise.small.min_area = 0;
        noise
    }
}

// ---- config file ----

fn push_flag(out: &mut Vec<OsString>, key: &str, v: &toml::Value) -> Result<(), CliError> {
    let value = match v {
        toml::Value::Boolean(true) => {
            out.push(format!("--{key}").into());
            return Ok(());
        }
        toml::Value::Boolean(false) => return Ok(()),
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        _ => {
            return Err(CliError::usage(format!(
                "config key {key}: expected a scalar"
            )))
        }
    };
    out.push(format!("--{key}={value}").into());
    Ok(())
}

/// Index of the subcommand token, skipping global options and their values.
fn subcommand_index(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--workers" || a == "--config" {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut found = None;
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            found = it.next().map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            found = Some(PathBuf::from(p));
        }
    }
    found
}

/// Splices flags from the `--config` file in right after the subcommand, so
/// explicit flags that follow override them.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::missing(format!("config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let Some(pos) = subcommand_index(&args) else {
        return Ok(args);
    };
    let sub = args[pos].to_string_lossy().into_owned();
    let mut injected = Vec::new();
    for (key, v) in &table {
        match v {
            toml::Value::Table(t) => {
                if *key == sub {
                    for (k, v) in t {
                        push_flag(&mut injected, k, v)?;
                    }
                }
            }
            _ => push_flag(&mut injected, key, v)?,
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

// ---- helpers ----

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::missing(format!(
            "{what} directory {} not found",
            path.display()
        )))
    }
}

/// Label files (`*.labels.json`, `*.pred.json`) of a directory, keyed and
/// sorted by frame id.
fn read_label_dir(dir: &Path) -> Result<BTreeMap<String, LabelSet>, CliError> {
    require_dir(dir, "label")?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::missing(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".labels.json") || n.ends_with(".pred.json"))
        })
        .collect();
    paths.sort();
    let sets = paths
        .par_iter()
        .map(|p| io::read_labels(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = BTreeMap::new();
    for l in sets {
        let id = l.frame_id().to_string();
        if out.insert(id.clone(), l).is_some() {
            return Err(CliError::usage(format!(
                "{}: frame {id} appears twice",
                dir.display()
            )));
        }
    }
    Ok(out)
}

fn write_label_dir(dir: &Path, sets: &[LabelSet]) -> Result<(), CliError> {
    sets.par_iter().try_for_each(|l| {
        io::write_labels(&dir.join(format!("{}.labels.json", l.frame_id())), l)
    })?;
    Ok(())
}

fn count(sets: &[LabelSet]) -> usize {
    sets.iter().map(|l| l.len()).sum()
}

/// Pairs two label directories by frame id; both must hold the same frames.
fn paired(
    a: &BTreeMap<String, LabelSet>,
    b: &BTreeMap<String, LabelSet>,
    a_name: &str,
    b_name: &str,
) -> Result<(Vec<LabelSet>, Vec<LabelSet>), CliError> {
    if let Some(id) = b.keys().find(|k| !a.contains_key(*k)) {
        return Err(CliError::missing(format!(
            "frame {id} has {b_name} but no {a_name}"
        )));
    }
    if let Some(id) = a.keys().find(|k| !b.contains_key(*k)) {
        return Err(CliError::missing(format!(
            "frame {id} has {a_name} but no {b_name}"
        )));
    }
    for (id, l) in a {
        if l.dims() != b[id].dims() {
            return Err(CliError::usage(format!(
                "frame {id}: {a_name} is {:?}, {b_name} is {:?}",
                l.dims(),
                b[id].dims()
            )));
        }
    }
    Ok((a.values().cloned().collect(), b.values().cloned().collect()))
}

// ---- subcommands ----

fn synth(a: &SynthArgs) -> CliResult {
    let spec = SceneSpec {
        seed: a.seed,
        height: a.height,
        width: a.width,
        object_count: (a.min_objects, a.max_objects),
        object_size: (a.min_size, a.max_size),
        moving_fraction: a.moving_fraction,
        depth_noise: a.depth_noise,
        motion_blur: a.motion_blur,
        min_gap: a.min_gap,
        ..SceneSpec::default()
    };
    spec.validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let layout = DatasetLayout::new(&a.out);
    io::write_intrinsics(&layout.intrinsics_path(), &spec.intrinsics())?;
    let counts = (0..a.frames)
        .into_par_iter()
        .map(|i| -> Result<(usize, usize), CliError> {
            let s = generate_scene(&spec, i)?;
            let id = frame_id(i);
            layout.write_frame(&Frame {
                frame_id: id.clone(),
                depth: s.depth,
                motion: s.motion,
            })?;
            io::write_labels(&layout.labels_path(&id), &s.gt)?;
            let moving =
                s.gt.instances()
                    .iter()
                    .filter(|i| i.moving() == Some(true))
                    .count();
            Ok((s.gt.len(), moving))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let total: usize = counts.iter().map(|c| c.0).sum();
    let moving: usize = counts.iter().map(|c| c.1).sum();
    Ok(format!(
        "synth: {} frames, {total} objects ({moving} moving) -> {}",
        a.frames,
        a.out.display()
    ))
}

fn init_labels(a: &InitLabelsArgs) -> CliResult {
    require_dir(&a.data, "dataset")?;
    let layout = DatasetLayout::new(&a.data);
    let cfg = a.init.config();
    cfg.dbscan
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&cfg.motion_threshold) {
        return Err(CliError::usage("--motion-threshold must lie in [0, 1]"));
    }
    let k = io::read_intrinsics(&layout.intrinsics_path())?;
    let ids = layout.frame_ids()?;
    let sets = ids
        .par_iter()
        .map(|id| -> Result<LabelSet, CliError> {
            let f = layout.read_frame(id)?;
            Ok(make_initial_labels(id, &f.depth, &f.motion, &k, &cfg)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_label_dir(&a.out, &sets)?;
    Ok(format!(
        "init-labels: {} frames, {} instances -> {}",
        sets.len(),
        count(&sets),
        a.out.display()
    ))
}

fn rescale(a: &RescaleArgs) -> CliResult {
    let labels = read_label_dir(&a.labels)?;
    if a.invert {
        let tdir = a.transforms.as_ref().expect("clap enforces --transforms");
        require_dir(tdir, "transform")?;
        let out = labels
            .par_iter()
            .map(|(id, l)| -> Result<LabelSet, CliError> {
                let t = io::read_transform(&tdir.join(format!("{id}.transform.json")))?;
                invert_labels(l, &t).map_err(|e| CliError::usage(format!("frame {id}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        write_label_dir(&a.out, &out)?;
        return Ok(format!(
            "rescale --invert: {} frames, {} instances -> {}",
            out.len(),
            count(&out),
            a.out.display()
        ));
    }
    if !(a.scale > 0.0 && a.scale <= 1.0) {
        return Err(CliError::usage("--scale must lie in (0, 1]"));
    }
    let out = labels
        .par_iter()
        .map(|(id, l)| -> Result<LabelSet, CliError> {
            let t = make_transform(l.height(), l.width(), a.scale)?;
            io::write_transform(&a.out.join(format!("{id}.transform.json")), &t)?;
            Ok(transform_labels(l, &t)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_label_dir(&a.out, &out)?;
    if let Some(data) = &a.data {
        require_dir(data, "dataset")?;
        let src = DatasetLayout::new(data);
        let dst = DatasetLayout::new(a.out.join("data"));
        src.frame_ids()?
            .par_iter()
            .try_for_each(|id| -> Result<(), CliError> {
                let f = src.read_frame(id)?;
                let (h, w) = f.depth.dims();
                let t: ScaleTransform = make_transform(h, w, a.scale)?;
                let depth = DepthMap(transform_raster(f.depth.raster(), &t, 0.0)?);
                let motion = MotionMask::from_raster(transform_raster(f.motion.raster(), &t, 0.0)?)
                    .map_err(|e| CliError::internal(e.to_string()))?;
                dst.write_frame(&Frame {
                    frame_id: id.clone(),
                    depth,
                    motion,
                })?;
                Ok(())
            })?;
    }
    Ok(format!(
        "rescale: scale {} on {} frames, {} instances -> {}",
        a.scale,
        out.len(),
        count(&out),
        a.out.display()
    ))
}

fn aggregate(a: &AggregateArgs) -> CliResult {
    let large = read_label_dir(&a.large)?;
    let small = read_label_dir(&a.small)?;
    let (large, small) = paired(&large, &small, "large proposals", "small proposals")?;
    let params = a.agg.params();
    params
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&a.nms_iou) {
        return Err(CliError::usage("--nms-iou must lie in [0, 1]"));
    }
    let out = large
        .par_iter()
        .zip(&small)
        .map(|(l, s)| -> Result<LabelSet, CliError> {
            if a.nms {
                let union = l.renumbered(l.instances().iter().chain(s.instances()).cloned());
                Ok(nms(&union, a.nms_iou))
            } else {
                Ok(mask_agg(l, s, &params)?)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_label_dir(&a.out, &out)?;
    let method = if a.nms { "nms" } else { "mask-agg" };
    Ok(format!(
        "aggregate ({method}): {} + {} proposals -> {} instances in {}",
        count(&large),
        count(&small),
        count(&out),
        a.out.display()
    ))
}

fn filter(a: &FilterArgs) -> CliResult {
    if a.conf.is_none() && a.gt_overlap.is_none() {
        return Err(CliError::usage("filter needs --conf and/or --gt-overlap"));
    }
    if let Some(c) = a.conf {
        if !(0.0..=1.0).contains(&c) {
            return Err(CliError::usage("--conf must lie in [0, 1]"));
        }
    }
    let preds = read_label_dir(&a.input)?;
    let before: usize = preds.values().map(|l| l.len()).sum();
    let gt = match &a.gt_overlap {
        Some(dir) => Some(read_label_dir(dir)?),
        None => None,
    };
    let out = preds
        .par_iter()
        .map(|(id, p)| -> Result<LabelSet, CliError> {
            let mut l = match a.conf {
                Some(c) => threshold_filter(p, c),
                None => p.clone(),
            };
            if let Some(gt) = &gt {
                let g = gt
                    .get(id)
                    .ok_or_else(|| CliError::missing(format!("no ground truth for frame {id}")))?;
                l = gt_overlap_filter(&l, g, a.min_iou)
                    .map_err(|e| CliError::usage(format!("frame {id}: {e}")))?;
            }
            Ok(l)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_label_dir(&a.out, &out)?;
    Ok(format!(
        "filter: kept {} of {before} instances over {} frames -> {}",
        count(&out),
        out.len(),
        a.out.display()
    ))
}

fn eval(a: &EvalArgs) -> CliResult {
    let preds = read_label_dir(&a.pred)?;
    let gt = read_label_dir(&a.gt)?;
    let (gt, preds) = paired(&gt, &preds, "ground truth", "predictions")?;
    let cfg = EvalConfig {
        max_dets: a.max_dets,
        mode: match a.mode {
            ModeArg::Box => EvalMode::Box,
            ModeArg::Mask => EvalMode::Mask,
        },
        ..EvalConfig::default()
    };
    cfg.validate()?;
    let mut report = evaluate(&preds, &gt, &cfg)?;
    if a.split {
        report = with_split(report, &preds, &gt, &cfg)?;
    }
    print!("{}", report.to_table());
    if let Some(path) = &a.json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        io::write_atomic(path, text.as_bytes())?;
    }
    Ok(format!(
        "eval: {} frames, AR50 {:.4} AR {:.4} AP50 {:.4} AP {:.4}",
        report.num_frames, report.ar50, report.ar, report.ap50, report.ap
    ))
}

#[derive(Serialize)]
struct PipelineRecord<'a> {
    config: &'a PipelineConfig,
}

fn pipeline(a: &PipelineArgs) -> CliResult {
    require_dir(&a.data, "dataset")?;
    let cfg = a.config();
    cfg.validate()?;
    let dataset = DatasetLayout::new(&a.data);
    let exchange = Exchange::new(&a.work);
    if let Some(s) = a.reset_from {
        reset_from(&exchange, s.into())?;
    }
    let record = serde_json::to_string_pretty(&PipelineRecord { config: &cfg })
        .expect("config serializes")
        + "\n";
    io::write_atomic(&a.work.join("pipeline.json"), record.as_bytes())?;

    let mock = if a.mock.mock_detector {
        Some(GtMockDetector::from_dataset(
            &dataset,
            a.mock.noise(),
            a.mock.mock_seed,
        )?)
    } else {
        None
    };
    let p = Pipeline {
        dataset: &dataset,
        exchange: &exchange,
        config: &cfg,
        detector: mock.as_ref().map(|d| d as &dyn crate::rounds::Detector),
    };
    if let Some(stage) = a.stage {
        let stage: Stage = stage.into();
        let out = p.run_stage(stage)?;
        return Ok(format!(
            "pipeline: {stage} done, {} frames, {} instances",
            out.len(),
            count(&out)
        ));
    }
    let summary = p.run(a.until.into())?;
    info!("computed stages: {:?}", summary.computed);
    Ok(format!("pipeline: {summary}"))
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::InitLabels(a) => init_labels(a),
        Command::Rescale(a) => rescale(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Filter(a) => filter(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", e.message);
            return e.code;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
