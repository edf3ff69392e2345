//! Initial pseudo-labels from motion and depth.
//!
//! A motion-probability map is binarized, every moving pixel is lifted to a
//! camera-frame 3D point using its depth and the pinhole intrinsics, and the
//! points are grouped into instances with a pixel-windowed DBSCAN. Grouping in
//! 3D separates objects that touch in the image but sit at different depths,
//! which a purely 2D connected-component split (kept here as a baseline)
//! cannot do.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{InstanceLabel, LabelError, LabelSet};
use crate::mask::{connected_components, BinaryMask, Connectivity, MaskError};
use crate::raster::{DepthMap, MotionMask};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitLabelError {
    #[error("non-positive or non-finite depth at (row {row}, col {col})")]
    NonPositiveDepth { row: usize, col: usize },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// Pinhole intrinsics. Integer pixel coordinates address pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, InitLabelError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), InitLabelError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(InitLabelError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(InitLabelError::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    /// `depth * K^-1 [col, row, 1]^T`.
    pub fn unproject_pixel(&self, row: usize, col: usize, depth: f64) -> [f64; 3] {
        [
            (col as f64 - self.cx) / self.fx * depth,
            (row as f64 - self.cy) / self.fy * depth,
            depth,
        ]
    }

    /// Projects a camera-frame point, returning `(row, col)` as reals.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (
            self.fy * p[1] / p[2] + self.cy,
            self.fx * p[0] / p[2] + self.cx,
        )
    }
}

/// A moving pixel lifted to camera coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint3 {
    pub row: usize,
    pub col: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl PixelPoint3 {
    fn dist2(&self, other: &PixelPoint3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        dx * dx + dy * dy + dz * dz
    }
}

/// Neighborhood of a point: other points within `eps` meters in 3D whose
/// pixel lies in the `pixel_window`-wide square centered on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
    pub pixel_window: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: 1.0,
            min_pts: 4,
            pixel_window: 10,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<(), InitLabelError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(InitLabelError::InvalidParams(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.min_pts == 0 || self.pixel_window == 0 {
            return Err(InitLabelError::InvalidParams(
                "min_pts and pixel_window must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Chebyshev pixel radius of the window. Even widths round up to the
    /// next odd square so the neighbor relation stays symmetric.
    pub fn pixel_radius(&self) -> usize {
        self.pixel_window / 2
    }
}

/// Pixels with probability `>= threshold` become foreground.
pub fn binarize_motion(m: &MotionMask, threshold: f64) -> BinaryMask {
    let (h, w) = m.dims();
    let data = m
        .raster()
        .as_slice()
        .iter()
        .map(|&p| p as f64 >= threshold)
        .collect();
    BinaryMask::from_vec(h, w, data).expect("motion raster has valid dimensions")
}

pub fn unproject(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    moving: &BinaryMask,
) -> Result<Vec<PixelPoint3>, InitLabelError> {
    if depth.dims() != moving.dims() {
        return Err(InitLabelError::DimensionMismatch(
            depth.dims(),
            moving.dims(),
        ));
    }
    moving
        .pixels()
        .map(|(row, col)| {
            let d = depth.at(row, col) as f64;
            if !(d > 0.0 && d.is_finite()) {
                return Err(InitLabelError::NonPositiveDepth { row, col });
            }
            let [x, y, z] = k.unproject_pixel(row, col, d);
            Ok(PixelPoint3 { row, col, x, y, z })
        })
        .collect()
}

/// Pixel-windowed DBSCAN over `points`, rasterized into `height x width`
/// masks ordered by their first foreground pixel.
///
/// Points are visited in `(row, col)` order, so the result does not depend
/// on the input order. A border point reachable from several clusters joins
/// the one whose first core point comes earliest in that order. Noise is
/// dropped.
pub fn dbscan_partition(
    points: &[PixelPoint3],
    params: &DbscanParams,
    height: usize,
    width: usize,
) -> Result<Vec<BinaryMask>, InitLabelError> {
    params.validate()?;
    if height == 0 || width == 0 {
        return Err(MaskError::InvalidDimensions { height, width }.into());
    }
    if let Some(p) = points.iter().find(|p| p.row >= height || p.col >= width) {
        return Err(MaskError::OutOfBounds {
            row: p.row,
            col: p.col,
            height,
            width,
        }
        .into());
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        (p.row, p.col)
            .cmp(&(q.row, q.col))
            .then(p.z.total_cmp(&q.z))
            .then(p.x.total_cmp(&q.x))
            .then(p.y.total_cmp(&q.y))
    });
    let sorted: Vec<PixelPoint3> = order.iter().map(|&i| points[i]).collect();

    // cell_start[p]..cell_start[p + 1] indexes the sorted points on pixel p
    let mut cell_start = vec![0u32; height * width + 1];
    for p in &sorted {
        cell_start[p.row * width + p.col + 1] += 1;
    }
    for i in 0..height * width {
        cell_start[i + 1] += cell_start[i];
    }

    let radius = params.pixel_radius();
    let eps2 = params.eps * params.eps;
    let neighbors = |i: usize, out: &mut Vec<usize>| {
        out.clear();
        let p = &sorted[i];
        let (r0, r1) = (
            p.row.saturating_sub(radius),
            (p.row + radius).min(height - 1),
        );
        let (c0, c1) = (
            p.col.saturating_sub(radius),
            (p.col + radius).min(width - 1),
        );
        for r in r0..=r1 {
            let lo = cell_start[r * width + c0] as usize;
            let hi = cell_start[r * width + c1 + 1] as usize;
            for (j, q) in sorted.iter().enumerate().take(hi).skip(lo) {
                if p.dist2(q) <= eps2 {
                    out.push(j);
                }
            }
        }
    };

    let mut buf = Vec::new();
    let core: Vec<bool> = (0..sorted.len())
        .map(|i| {
            neighbors(i, &mut buf);
            buf.len() >= params.min_pts
        })
        .collect();

    let mut cluster: Vec<Option<usize>> = vec![None; sorted.len()];
    let mut n_clusters = 0;
    let mut stack = Vec::new();
    for seed in 0..sorted.len() {
        if !core[seed] || cluster[seed].is_some() {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        cluster[seed] = Some(id);
        stack.push(seed);
        while let Some(q) = stack.pop() {
            neighbors(q, &mut buf);
            for &j in &buf {
                if cluster[j].is_none() {
                    cluster[j] = Some(id);
                    if core[j] {
                        stack.push(j);
                    }
                }
            }
        }
    }

    let mut masks = vec![BinaryMask::new(height, width)?; n_clusters];
    for (p, c) in sorted.iter().zip(&cluster) {
        if let Some(c) = c {
            masks[*c].set(p.row, p.col, true)?;
        }
    }
    // clusters are created in scan order of their first core point; sort by
    // first foreground pixel (a border pixel can precede it)
    let mut keyed: Vec<_> = masks
        .into_iter()
        .map(|m| {
            let first = m.pixels().next().expect("cluster has a seed");
            (first, m)
        })
        .collect();
    keyed.sort_by_key(|(first, _)| *first);
    Ok(keyed.into_iter().map(|(_, m)| m).collect())
}

/// Depth-agnostic baseline: 8-connected components of the motion mask.
pub fn contour_partition(moving: &BinaryMask) -> Vec<BinaryMask> {
    connected_components(moving, Connectivity::Eight)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMethod {
    #[default]
    Depth,
    Contour,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitLabelConfig {
    pub motion_threshold: f64,
    pub dbscan: DbscanParams,
    pub min_area: usize,
    pub method: PartitionMethod,
}

impl Default for InitLabelConfig {
    fn default() -> Self {
        Self {
            motion_threshold: 0.1,
            dbscan: DbscanParams::default(),
            min_area: 16,
            method: PartitionMethod::Depth,
        }
    }
}

/// Binarize, lift, partition and filter one frame into the first-round
/// label set. Every instance gets score 1.0 and ids follow mask order.
pub fn make_initial_labels(
    frame_id: &str,
    depth: &DepthMap,
    motion: &MotionMask,
    k: &CameraIntrinsics,
    cfg: &InitLabelConfig,
) -> Result<LabelSet, InitLabelError> {
    if depth.dims() != motion.dims() {
        return Err(InitLabelError::DimensionMismatch(
            depth.dims(),
            motion.dims(),
        ));
    }
    k.validate()?;
    let (h, w) = motion.dims();
    let moving = binarize_motion(motion, cfg.motion_threshold);
    let parts = match cfg.method {
        PartitionMethod::Depth => {
            let points = unproject(depth, k, &moving)?;
            dbscan_partition(&points, &cfg.dbscan, h, w)?
        }
        PartitionMethod::Contour => contour_partition(&moving),
    };
    let instances = parts
        .iter()
        .filter(|m| m.area() >= cfg.min_area)
        .enumerate()
        .map(|(i, m)| InstanceLabel::from_mask(i as u64, m, 1.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabelSet::new(frame_id, h, w, instances)?)
}
