//! Deterministic synthetic scenes with exact ground truth.
//!
//! Each frame places rectangles and ellipses at constant depths in front of a
//! vertical background depth ramp (far at the top, near at the bottom).
//! Objects are disjoint in the image and separated by at least `min_gap`
//! pixels. Moving objects have motion probability 1 inside their mask
//! (optionally box-blurred); everything else has probability 0. A frame is a
//! pure function of `(spec, frame_index)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::initlabel::CameraIntrinsics;
use crate::label::{InstanceLabel, LabelSet};
use crate::mask::BinaryMask;
use crate::raster::{DepthMap, MotionMask};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("frame {frame}: placed {placed} of {requested} objects")]
    PlacementFailure {
        frame: usize,
        placed: usize,
        requested: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Inclusive range of objects per frame.
    pub object_count: (usize, usize),
    /// Inclusive range of object side lengths, pixels.
    pub object_size: (usize, usize),
    /// Object depth range, meters.
    pub object_depth: (f64, f64),
    /// Background depth at the top and bottom rows, meters.
    pub background_depth: (f64, f64),
    /// Probability that an object is moving.
    pub moving_fraction: f64,
    /// Gaussian depth noise σ, meters.
    pub depth_noise: f64,
    /// Box-blur radius applied to the motion map, pixels.
    pub motion_blur: usize,
    /// Minimum empty gap between objects, pixels.
    pub min_gap: usize,
    pub max_retries: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 192,
            width: 384,
            object_count: (3, 6),
            object_size: (12, 128),
            object_depth: (4.0, 25.0),
            background_depth: (80.0, 30.0),
            moving_fraction: 0.5,
            depth_noise: 0.0,
            motion_blur: 0,
            min_gap: 12,
            max_retries: 500,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.height == 0 || self.width == 0 {
            return fail("frame size must be positive");
        }
        if self.object_count.0 > self.object_count.1 {
            return fail("object_count range is empty");
        }
        let (smin, smax) = self.object_size;
        if smin == 0 || smin > smax || smax > self.height.min(self.width) {
            return fail("object_size must satisfy 1 <= min <= max <= frame side");
        }
        let (dmin, dmax) = self.object_depth;
        if !(dmin > 0.0 && dmin <= dmax) {
            return fail("object_depth range must be positive and non-empty");
        }
        let (far, near) = self.background_depth;
        if !(near > 0.0 && far >= near) {
            return fail("background depth must be positive, far at the top");
        }
        if dmax >= near {
            return fail("objects must be strictly in front of the background");
        }
        if !(0.0..=1.0).contains(&self.moving_fraction) {
            return fail("moving_fraction outside [0, 1]");
        }
        if !(self.depth_noise >= 0.0 && self.depth_noise.is_finite()) {
            return fail("depth_noise must be non-negative");
        }
        Ok(())
    }

    /// Pinhole intrinsics shared by every frame: focal length equal to the
    /// frame width, principal point at the image center.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.width as f64,
            fy: self.width as f64,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        }
    }

    fn background_at(&self, row: usize) -> f64 {
        let (far, near) = self.background_depth;
        if self.height == 1 {
            return near;
        }
        far + (near - far) * row as f64 / (self.height - 1) as f64
    }

    fn rng(&self, frame_index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame_index as u64);
        rng
    }
}

pub fn frame_id(index: usize) -> String {
    format!("{index:06}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub depth: DepthMap,
    pub motion: MotionMask,
    pub intrinsics: CameraIntrinsics,
    /// Exact masks with the moving attribute set on every instance.
    pub gt: LabelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    shape: Shape,
    depth: f64,
    moving: bool,
}

impl Placed {
    fn contains(&self, r: usize, c: usize) -> bool {
        if c < self.x || c >= self.x + self.w || r < self.y || r >= self.y + self.h {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                let (a, b) = (self.w as f64 / 2.0, self.h as f64 / 2.0);
                let dx = (c as f64 + 0.5 - self.x as f64 - a) / a;
                let dy = (r as f64 + 0.5 - self.y as f64 - b) / b;
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    fn clear_of(&self, other: &Placed, gap: usize) -> bool {
        self.x + self.w + gap <= other.x
            || other.x + other.w + gap <= self.x
            || self.y + self.h + gap <= other.y
            || other.y + other.h + gap <= self.y
    }
}

fn place_objects(
    spec: &SceneSpec,
    frame: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Placed>, SynthError> {
    let requested = rng.random_range(spec.object_count.0..=spec.object_count.1);
    let mut placed: Vec<Placed> = Vec::with_capacity(requested);
    for _ in 0..requested {
        let mut ok = false;
        for _ in 0..spec.max_retries {
            let w = rng.random_range(spec.object_size.0..=spec.object_size.1);
            let h = rng.random_range(spec.object_size.0..=spec.object_size.1);
            let cand = Placed {
                x: rng.random_range(0..=spec.width - w),
                y: rng.random_range(0..=spec.height - h),
                w,
                h,
                shape: if rng.random_bool(0.5) {
                    Shape::Rect
                } else {
                    Shape::Ellipse
                },
                depth: rng.random_range(spec.object_depth.0..=spec.object_depth.1),
                moving: rng.random_bool(spec.moving_fraction),
            };
            if placed.iter().all(|p| cand.clear_of(p, spec.min_gap)) {
                placed.push(cand);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(SynthError::PlacementFailure {
                frame,
                placed: placed.len(),
                requested,
            });
        }
    }
    Ok(placed)
}

fn box_blur(values: &[f32], h: usize, w: usize, radius: usize) -> Vec<f32> {
    if radius == 0 {
        return values.to_vec();
    }
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(h - 1));
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(w - 1));
            let mut sum = 0.0f32;
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    sum += values[rr * w + cc];
                }
            }
            // full-window normalization so borders fade like the interior
            let n = ((2 * radius + 1) * (2 * radius + 1)) as f32;
            out[r * w + c] = (sum / n).clamp(0.0, 1.0);
        }
    }
    out
}

fn render(spec: &SceneSpec, frame: usize, objects: &[Placed], rng: &mut ChaCha8Rng) -> Scene {
    let (h, w) = (spec.height, spec.width);
    let mut depth = vec![0.0f32; h * w];
    let mut moving = vec![0.0f32; h * w];
    let mut masks: Vec<BinaryMask> = Vec::with_capacity(objects.len());
    for o in objects {
        masks.push(BinaryMask::from_fn(h, w, |r, c| o.contains(r, c)).expect("valid frame"));
    }
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut d = spec.background_at(r);
            for (o, m) in objects.iter().zip(&masks) {
                if m.as_slice()[i] {
                    d = o.depth;
                    if o.moving {
                        moving[i] = 1.0;
                    }
                }
            }
            depth[i] = d as f32;
        }
    }
    if spec.depth_noise > 0.0 {
        let noise = Normal::new(0.0, spec.depth_noise).expect("finite sigma");
        for d in depth.iter_mut() {
            *d = (*d + noise.sample(rng) as f32).max(0.05);
        }
    }
    let motion = box_blur(&moving, h, w, spec.motion_blur);

    let instances = objects
        .iter()
        .zip(&masks)
        .filter(|(_, m)| !m.is_empty())
        .enumerate()
        .map(|(i, (o, m))| {
            InstanceLabel::from_mask(i as u64, m, 1.0)
                .expect("non-empty mask")
                .with_moving(Some(o.moving))
        })
        .collect();
    Scene {
        depth: DepthMap::new(h, w, depth).expect("valid frame"),
        motion: MotionMask::new(h, w, motion).expect("probabilities clamped"),
        intrinsics: spec.intrinsics(),
        gt: LabelSet::new(frame_id(frame), h, w, instances).expect("unique ids"),
    }
}

pub fn generate_scene(spec: &SceneSpec, frame_index: usize) -> Result<Scene, SynthError> {
    spec.validate()?;
    let mut rng = spec.rng(frame_index);
    let objects = place_objects(spec, frame_index, &mut rng)?;
    Ok(render(spec, frame_index, &objects, &mut rng))
}

/// Frames `0..frames`, generated in parallel.
pub fn generate_dataset(spec: &SceneSpec, frames: usize) -> Result<Vec<Scene>, SynthError> {
    (0..frames)
        .into_par_iter()
        .map(|i| generate_scene(spec, i))
        .collect()
}

/// Two moving rectangles sharing an edge in the image, the left one at 5 m
/// and the right one at 50 m, over an 80 m background. Depth-aware
/// clustering splits them into two instances; 2D connected components merge
/// them into one.
pub fn occlusion_scene(height: usize, width: usize) -> Scene {
    assert!(
        height >= 8 && width >= 8,
        "occlusion fixture needs at least 8x8"
    );
    let spec = SceneSpec {
        height,
        width,
        object_size: (1, height.min(width)),
        object_depth: (5.0, 50.0),
        background_depth: (80.0, 80.0),
        ..SceneSpec::default()
    };
    let (bh, bw) = (height / 2, width / 4);
    let (y, x) = (height / 4, width / 4);
    let objects = [
        Placed {
            x,
            y,
            w: bw,
            h: bh,
            shape: Shape::Rect,
            depth: 5.0,
            moving: true,
        },
        Placed {
            x: x + bw,
            y,
            w: bw,
            h: bh,
            shape: Shape::Rect,
            depth: 50.0,
            moving: true,
        },
    ];
    let mut rng = spec.rng(0);
    render(&spec, 0, &objects, &mut rng)
}

/// Perturbation model for the stand-in detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockNoise {
    /// Maximum translation of each mask, pixels, per axis.
    pub shift: usize,
    pub score_mean: f64,
    pub score_std: f64,
    /// Probability of missing a visible instance.
    pub dropout: f64,
    /// Instances smaller than this are never detected, pixels.
    pub min_area: u64,
    /// Expected false positives per frame.
    pub false_positives: f64,
    pub fp_score_mean: f64,
}

impl Default for MockNoise {
    fn default() -> Self {
        Self {
            shift: 0,
            score_mean: 1.0,
            score_std: 0.0,
            dropout: 0.0,
            min_area: 0,
            false_positives: 0.0,
            fp_score_mean: 0.5,
        }
    }
}

fn sample_score<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    if std <= 0.0 {
        return mean.clamp(0.0, 1.0);
    }
    Normal::new(mean, std)
        .expect("finite std")
        .sample(rng)
        .clamp(0.0, 1.0)
}

fn translate(mask: &BinaryMask, dr: isize, dc: isize) -> BinaryMask {
    let (h, w) = mask.dims();
    let src = mask.as_slice();
    BinaryMask::from_fn(h, w, |r, c| {
        let (sr, sc) = (r as isize - dr, c as isize - dc);
        sr >= 0
            && sc >= 0
            && (sr as usize) < h
            && (sc as usize) < w
            && src[sr as usize * w + sc as usize]
    })
    .expect("same dims")
}

/// Detector stand-in: perturbed copies of `gt` plus injected false
/// positives. Attributes are stripped and ids renumbered.
pub fn mock_detector<R: Rng + ?Sized>(gt: &LabelSet, noise: &MockNoise, rng: &mut R) -> LabelSet {
    let (h, w) = gt.dims();
    let mut out = Vec::new();
    for inst in gt.instances() {
        if inst.area() < noise.min_area {
            continue;
        }
        let dropped = noise.dropout > 0.0 && rng.random_bool(noise.dropout.min(1.0));
        let s = noise.shift as isize;
        let (dr, dc) = if s > 0 {
            (
                rng.random_range(-s as i64..=s as i64) as isize,
                rng.random_range(-s as i64..=s as i64) as isize,
            )
        } else {
            (0, 0)
        };
        let score = sample_score(noise.score_mean, noise.score_std, rng);
        if dropped {
            continue;
        }
        let mask = if (dr, dc) == (0, 0) {
            inst.mask()
        } else {
            translate(&inst.mask(), dr, dc)
        };
        if let Ok(pred) = InstanceLabel::from_mask(out.len() as u64, &mask, score) {
            out.push(pred);
        }
    }
    let fp = noise.false_positives.max(0.0);
    let mut n_fp = fp.floor() as usize;
    if rng.random_bool(fp.fract()) {
        n_fp += 1;
    }
    for _ in 0..n_fp {
        let bw = rng.random_range(1..=w.clamp(1, 24));
        let bh = rng.random_range(1..=h.clamp(1, 24));
        let x = rng.random_range(0..=w - bw);
        let y = rng.random_range(0..=h - bh);
        let mask = BinaryMask::from_fn(h, w, |r, c| {
            (x..x + bw).contains(&c) && (y..y + bh).contains(&r)
        })
        .expect("same dims");
        let score = sample_score(noise.fp_score_mean, noise.score_std, rng);
        out.push(InstanceLabel::from_mask(out.len() as u64, &mask, score).expect("non-empty"));
    }
    LabelSet::new(gt.frame_id(), h, w, out).expect("sequential ids")
}
