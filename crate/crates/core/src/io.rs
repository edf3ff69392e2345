//! File formats and the on-disk dataset layout.
//!
//! * depth: `DPF1`, width and height as `u32` LE, then row-major `f32` LE meters
//! * motion: binary PGM (`P5`, maxval 255), probability = value / 255
//! * labels: JSON with COCO-style RLE masks
//! * intrinsics and scale transforms: small JSON objects
//!
//! Every reader validates fully and returns a typed [`IoError`]; every writer
//! is deterministic and replaces files atomically.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::initlabel::CameraIntrinsics;
use crate::label::{InstanceLabel, LabelSet};
use crate::mask::{bbox_of, rle_decode, MaskError, Rle};
use crate::raster::{DepthMap, MotionMask};
use crate::rescale::ScaleTransform;

/// Files describing frames larger than this are rejected before anything is
/// allocated.
pub const MAX_FRAME_PIXELS: u64 = 1 << 26;

const DEPTH_MAGIC: &[u8; 4] = b"DPF1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("{extra} unexpected bytes after the payload")]
    TrailingData { extra: u64 },
    #[error("invalid dimensions {height}x{width}")]
    InvalidDimensions { height: u64, width: u64 },
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("{path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("{path}: RLE counts sum to {sum}, frame has {expected} pixels")]
    RleSumMismatch {
        path: String,
        sum: u64,
        expected: u64,
    },
    #[error("{path}: box {stored:?} is not the tight box of the mask {derived:?}")]
    BoxMaskInconsistency {
        path: String,
        stored: [f64; 4],
        derived: [f64; 4],
    },
    #[error("dataset: {0}")]
    Layout(String),
}

impl IoError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        IoError::SchemaViolation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a missing file.
    pub fn is_not_found(&self) -> bool {
        matches!(self, IoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let io_err = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

// ---- depth ----

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let (h, w) = depth.dims();
    let values = depth.raster().as_slice();
    let mut out = Vec::with_capacity(12 + 4 * values.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap, IoError> {
    if bytes.len() < 4 {
        return Err(IoError::TruncatedFile {
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != DEPTH_MAGIC {
        return Err(IoError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(IoError::TruncatedFile {
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    if w == 0 || h == 0 || w.saturating_mul(h) > MAX_FRAME_PIXELS {
        return Err(IoError::InvalidDimensions {
            height: h,
            width: w,
        });
    }
    let expected = 12 + 4 * w * h;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(IoError::TruncatedFile { expected, found });
    }
    if found > expected {
        return Err(IoError::TrailingData {
            extra: found - expected,
        });
    }
    let mut values = Vec::with_capacity((w * h) as usize);
    for (index, chunk) in bytes[12..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(IoError::NonFiniteValue { index });
        }
        values.push(v);
    }
    Ok(DepthMap::new(h as usize, w as usize, values).expect("length checked"))
}

pub fn read_depth(path: &Path) -> Result<DepthMap, IoError> {
    decode_depth(&read_bytes(path)?)
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    write_atomic(path, &encode_depth(depth))
}

// ---- motion ----

pub fn encode_motion(motion: &MotionMask) -> Vec<u8> {
    let (h, w) = motion.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        motion
            .raster()
            .as_slice()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

/// Parses the next header token, skipping whitespace and `#` comments.
fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], IoError> {
    loop {
        match bytes.get(*pos) {
            None => return Err(IoError::BadHeader("header ends early".into())),
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                    *pos += 1;
                }
            }
            Some(_) => break,
        }
    }
    let start = *pos;
    while bytes
        .get(*pos)
        .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
    {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn pgm_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u64, IoError> {
    let tok = pgm_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .filter(|s| !s.is_empty() && s.len() <= 10 && s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoError::BadHeader(format!("invalid {what}")))
}

pub fn decode_motion(bytes: &[u8]) -> Result<MotionMask, IoError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(IoError::BadHeader("missing P5 magic".into()));
    }
    let mut pos = 2;
    if !bytes
        .get(pos)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(IoError::BadHeader("missing P5 magic".into()));
    }
    let w = pgm_number(bytes, &mut pos, "width")?;
    let h = pgm_number(bytes, &mut pos, "height")?;
    let maxval = pgm_number(bytes, &mut pos, "maxval")?;
    if w == 0 || h == 0 || w.saturating_mul(h) > MAX_FRAME_PIXELS {
        return Err(IoError::InvalidDimensions {
            height: h,
            width: w,
        });
    }
    if maxval != 255 {
        return Err(IoError::BadHeader(format!("maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(IoError::BadHeader("missing separator after maxval".into()));
    }
    pos += 1;
    let payload = &bytes[pos..];
    let expected = w * h;
    let found = payload.len() as u64;
    if found < expected {
        return Err(IoError::TruncatedFile {
            expected: pos as u64 + expected,
            found: bytes.len() as u64,
        });
    }
    if found > expected {
        return Err(IoError::TrailingData {
            extra: found - expected,
        });
    }
    let values = payload.iter().map(|&v| v as f32 / 255.0).collect();
    Ok(MotionMask::new(h as usize, w as usize, values).expect("values in [0, 1]"))
}

pub fn read_motion(path: &Path) -> Result<MotionMask, IoError> {
    decode_motion(&read_bytes(path)?)
}

pub fn write_motion(path: &Path, motion: &MotionMask) -> Result<(), IoError> {
    write_atomic(path, &encode_motion(motion))
}

// ---- labels ----

fn instance_json(inst: &InstanceLabel) -> Value {
    let rle = inst.rle();
    let mut obj = Map::new();
    obj.insert("id".into(), json!(inst.id()));
    obj.insert("score".into(), json!(inst.score()));
    obj.insert("box".into(), json!(inst.bbox().to_array()));
    obj.insert(
        "rle".into(),
        json!({ "size": [rle.height, rle.width], "counts": rle.counts }),
    );
    if let Some(moving) = inst.moving() {
        obj.insert("attributes".into(), json!({ "moving": moving }));
    }
    Value::Object(obj)
}

/// Canonical JSON: sorted keys, shortest round-trip floats, trailing newline.
pub fn encode_labels(labels: &LabelSet) -> String {
    let doc = json!({
        "frame_id": labels.frame_id(),
        "height": labels.height(),
        "width": labels.width(),
        "instances": labels.instances().iter().map(instance_json).collect::<Vec<_>>(),
    });
    let mut s = serde_json::to_string(&doc).expect("labels serialize");
    s.push('\n');
    s
}

fn expect_object<'a>(
    v: &'a Value,
    path: &str,
    keys: &[&str],
    optional: &[&str],
) -> Result<&'a Map<String, Value>, IoError> {
    let obj = v
        .as_object()
        .ok_or_else(|| IoError::schema(path, "expected an object"))?;
    for k in obj.keys() {
        if !keys.contains(&k.as_str()) && !optional.contains(&k.as_str()) {
            return Err(IoError::schema(format!("{path}.{k}"), "unknown field"));
        }
    }
    for k in keys {
        if !obj.contains_key(*k) {
            return Err(IoError::schema(format!("{path}.{k}"), "missing field"));
        }
    }
    Ok(obj)
}

fn expect_u64(v: &Value, path: &str) -> Result<u64, IoError> {
    v.as_u64()
        .ok_or_else(|| IoError::schema(path, "expected a non-negative integer"))
}

fn expect_f64(v: &Value, path: &str) -> Result<f64, IoError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| IoError::schema(path, "expected a finite number"))
}

fn expect_array<'a>(
    v: &'a Value,
    path: &str,
    len: Option<usize>,
) -> Result<&'a Vec<Value>, IoError> {
    let arr = v
        .as_array()
        .ok_or_else(|| IoError::schema(path, "expected an array"))?;
    if let Some(n) = len {
        if arr.len() != n {
            return Err(IoError::schema(
                path,
                format!("expected {n} elements, found {}", arr.len()),
            ));
        }
    }
    Ok(arr)
}

fn parse_instance(v: &Value, path: &str, dims: (usize, usize)) -> Result<InstanceLabel, IoError> {
    let obj = expect_object(v, path, &["id", "score", "box", "rle"], &["attributes"])?;
    let id = expect_u64(&obj["id"], &format!("{path}.id"))?;
    let score = expect_f64(&obj["score"], &format!("{path}.score"))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(IoError::schema(format!("{path}.score"), "outside [0, 1]"));
    }
    let box_path = format!("{path}.box");
    let mut stored = [0.0; 4];
    for (i, x) in expect_array(&obj["box"], &box_path, Some(4))?
        .iter()
        .enumerate()
    {
        stored[i] = expect_f64(x, &format!("{box_path}[{i}]"))?;
    }

    let rle_path = format!("{path}.rle");
    let rle_obj = expect_object(&obj["rle"], &rle_path, &["size", "counts"], &[])?;
    let size = expect_array(&rle_obj["size"], &format!("{rle_path}.size"), Some(2))?;
    let rh = expect_u64(&size[0], &format!("{rle_path}.size[0]"))?;
    let rw = expect_u64(&size[1], &format!("{rle_path}.size[1]"))?;
    if (rh, rw) != (dims.0 as u64, dims.1 as u64) {
        return Err(IoError::schema(
            format!("{rle_path}.size"),
            format!("[{rh}, {rw}] differs from frame [{}, {}]", dims.0, dims.1),
        ));
    }
    let counts_path = format!("{rle_path}.counts");
    let counts = expect_array(&rle_obj["counts"], &counts_path, None)?
        .iter()
        .enumerate()
        .map(|(i, c)| expect_u64(c, &format!("{counts_path}[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let rle = Rle {
        height: dims.0,
        width: dims.1,
        counts,
    };
    match rle.validate() {
        Ok(()) => {}
        Err(MaskError::SumMismatch { sum, expected }) => {
            return Err(IoError::RleSumMismatch {
                path: counts_path,
                sum,
                expected,
            })
        }
        Err(e) => return Err(IoError::schema(counts_path, e.to_string())),
    }
    let mask = rle_decode(&rle).map_err(|e| IoError::schema(&counts_path, e.to_string()))?;
    let derived = bbox_of(&mask)
        .map_err(|_| IoError::schema(&counts_path, "mask is empty"))?
        .to_array();
    if stored != derived {
        return Err(IoError::BoxMaskInconsistency {
            path: box_path,
            stored,
            derived,
        });
    }

    let moving = match obj.get("attributes") {
        None => None,
        Some(a) => {
            let apath = format!("{path}.attributes");
            let attrs = expect_object(a, &apath, &[], &["moving"])?;
            match attrs.get("moving") {
                None | Some(Value::Null) => None,
                Some(Value::Bool(b)) => Some(*b),
                Some(_) => {
                    return Err(IoError::schema(
                        format!("{apath}.moving"),
                        "expected a boolean",
                    ))
                }
            }
        }
    };
    Ok(InstanceLabel::from_rle(id, rle, score)
        .map_err(|e| IoError::schema(path, e.to_string()))?
        .with_moving(moving))
}

pub fn decode_labels(text: &str) -> Result<LabelSet, IoError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| IoError::schema("$", format!("invalid JSON: {e}")))?;
    let obj = expect_object(
        &doc,
        "$",
        &["frame_id", "height", "width", "instances"],
        &[],
    )?;
    let frame_id = obj["frame_id"]
        .as_str()
        .ok_or_else(|| IoError::schema("$.frame_id", "expected a string"))?;
    let h = expect_u64(&obj["height"], "$.height")?;
    let w = expect_u64(&obj["width"], "$.width")?;
    if h == 0 || w == 0 || h.saturating_mul(w) > MAX_FRAME_PIXELS {
        return Err(IoError::InvalidDimensions {
            height: h,
            width: w,
        });
    }
    let dims = (h as usize, w as usize);
    let mut ids = HashSet::new();
    let mut instances = Vec::new();
    for (i, v) in expect_array(&obj["instances"], "$.instances", None)?
        .iter()
        .enumerate()
    {
        let path = format!("$.instances[{i}]");
        let inst = parse_instance(v, &path, dims)?;
        if !ids.insert(inst.id()) {
            return Err(IoError::schema(
                format!("{path}.id"),
                format!("duplicate id {}", inst.id()),
            ));
        }
        instances.push(inst);
    }
    Ok(LabelSet::new(frame_id, dims.0, dims.1, instances).expect("validated above"))
}

pub fn read_labels(path: &Path) -> Result<LabelSet, IoError> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| IoError::schema("$", "not UTF-8"))?;
    decode_labels(text)
}

pub fn write_labels(path: &Path, labels: &LabelSet) -> Result<(), IoError> {
    write_atomic(path, encode_labels(labels).as_bytes())
}

// ---- intrinsics and transforms ----

pub fn encode_intrinsics(k: &CameraIntrinsics) -> String {
    let mut s =
        serde_json::to_string(&json!({"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy})).unwrap();
    s.push('\n');
    s
}

pub fn decode_intrinsics(text: &str) -> Result<CameraIntrinsics, IoError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| IoError::schema("$", format!("invalid JSON: {e}")))?;
    let obj = expect_object(&doc, "$", &["fx", "fy", "cx", "cy"], &[])?;
    let f = |k: &str| expect_f64(&obj[k], &format!("$.{k}"));
    let k = CameraIntrinsics {
        fx: f("fx")?,
        fy: f("fy")?,
        cx: f("cx")?,
        cy: f("cy")?,
    };
    k.validate()
        .map_err(|e| IoError::schema("$", e.to_string()))?;
    Ok(k)
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, IoError> {
    let bytes = read_bytes(path)?;
    decode_intrinsics(&String::from_utf8_lossy(&bytes))
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<(), IoError> {
    write_atomic(path, encode_intrinsics(k).as_bytes())
}

pub fn encode_transform(t: &ScaleTransform) -> String {
    let mut s = serde_json::to_string(&json!({
        "scale": t.scale,
        "pad_right": t.pad_right,
        "pad_bottom": t.pad_bottom,
        "orig_height": t.orig_height,
        "orig_width": t.orig_width,
    }))
    .unwrap();
    s.push('\n');
    s
}

pub fn decode_transform(text: &str) -> Result<ScaleTransform, IoError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| IoError::schema("$", format!("invalid JSON: {e}")))?;
    let obj = expect_object(
        &doc,
        "$",
        &[
            "scale",
            "pad_right",
            "pad_bottom",
            "orig_height",
            "orig_width",
        ],
        &[],
    )?;
    let u = |k: &str| expect_u64(&obj[k], &format!("$.{k}")).map(|v| v as usize);
    let t = ScaleTransform {
        scale: expect_f64(&obj["scale"], "$.scale")?,
        pad_right: u("pad_right")?,
        pad_bottom: u("pad_bottom")?,
        orig_height: u("orig_height")?,
        orig_width: u("orig_width")?,
    };
    t.validate()
        .map_err(|e| IoError::schema("$", e.to_string()))?;
    Ok(t)
}

pub fn read_transform(path: &Path) -> Result<ScaleTransform, IoError> {
    let bytes = read_bytes(path)?;
    decode_transform(&String::from_utf8_lossy(&bytes))
}

pub fn write_transform(path: &Path, t: &ScaleTransform) -> Result<(), IoError> {
    write_atomic(path, encode_transform(t).as_bytes())
}

// ---- dataset layout ----

/// `root/depth/<id>.dpf`, `root/motion/<id>.pgm`, `root/labels/<id>.labels.json`
/// and a shared `root/intrinsics.json`. Frame ids are zero-padded decimals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

/// One frame as stored in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub depth: DepthMap,
    pub motion: MotionMask,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn depth_path(&self, frame_id: &str) -> PathBuf {
        self.root.join("depth").join(format!("{frame_id}.dpf"))
    }

    pub fn motion_path(&self, frame_id: &str) -> PathBuf {
        self.root.join("motion").join(format!("{frame_id}.pgm"))
    }

    pub fn labels_path(&self, frame_id: &str) -> PathBuf {
        self.root
            .join("labels")
            .join(format!("{frame_id}.labels.json"))
    }

    pub fn intrinsics_path(&self) -> PathBuf {
        self.root.join("intrinsics.json")
    }

    /// Sorted frame ids found under `depth/`, each checked for a motion file.
    pub fn frame_ids(&self) -> Result<Vec<String>, IoError> {
        let dir = self.root.join("depth");
        let entries = fs::read_dir(&dir).map_err(|source| IoError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| IoError::Io {
                path: dir.clone(),
                source,
            })?;
            let name = entry.file_name();
            let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".dpf")) else {
                continue;
            };
            if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
                return Err(IoError::Layout(format!(
                    "frame id {id:?} is not a zero-padded decimal"
                )));
            }
            if !self.motion_path(id).is_file() {
                return Err(IoError::Layout(format!(
                    "frame {id} has depth but no motion file"
                )));
            }
            ids.push(id.to_string());
        }
        ids.sort();
        Ok(ids)
    }

    pub fn read_frame(&self, frame_id: &str) -> Result<Frame, IoError> {
        let depth = read_depth(&self.depth_path(frame_id))?;
        let motion = read_motion(&self.motion_path(frame_id))?;
        if depth.dims() != motion.dims() {
            return Err(IoError::Layout(format!(
                "frame {frame_id}: depth is {:?}, motion is {:?}",
                depth.dims(),
                motion.dims()
            )));
        }
        Ok(Frame {
            frame_id: frame_id.to_string(),
            depth,
            motion,
        })
    }

    pub fn write_frame(&self, frame: &Frame) -> Result<(), IoError> {
        write_depth(&self.depth_path(&frame.frame_id), &frame.depth)?;
        write_motion(&self.motion_path(&frame.frame_id), &frame.motion)
    }
}
