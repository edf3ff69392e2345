//! Brute-force reference implementations and random fixtures shared by the
//! integration tests. Everything here is written for clarity, not speed, and
//! shares no code with the library beyond its data types.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use mobilabel::initlabel::{CameraIntrinsics, DbscanParams, PixelPoint3};
use mobilabel::label::{InstanceLabel, LabelSet};
use mobilabel::mask::BinaryMask;
use rand::Rng;

pub mod bin;

pub type Pixels = BTreeSet<(usize, usize)>;

pub fn pixels_of(m: &BinaryMask) -> Pixels {
    let mut out = Pixels::new();
    for r in 0..m.height() {
        for c in 0..m.width() {
            if m.get(r, c).unwrap() {
                out.insert((r, c));
            }
        }
    }
    out
}

pub fn mask_of(h: usize, w: usize, px: &Pixels) -> BinaryMask {
    BinaryMask::from_fn(h, w, |r, c| px.contains(&(r, c))).unwrap()
}

pub fn rect_mask(h: usize, w: usize, x: usize, y: usize, bw: usize, bh: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |r, c| c >= x && c < x + bw && r >= y && r < y + bh).unwrap()
}

// ---- DBSCAN ----

fn canonical_order(points: &[PixelPoint3]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        (p.row, p.col)
            .cmp(&(q.row, q.col))
            .then(p.z.total_cmp(&q.z))
            .then(p.x.total_cmp(&q.x))
            .then(p.y.total_cmp(&q.y))
    });
    idx
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// All-pairs DBSCAN with union-find over core points. Border points go to the
/// component whose first core point (in canonical order) is earliest.
pub fn dbscan_oracle(
    points: &[PixelPoint3],
    params: &DbscanParams,
    h: usize,
    w: usize,
) -> Vec<BinaryMask> {
    let order = canonical_order(points);
    let pts: Vec<PixelPoint3> = order.iter().map(|&i| points[i]).collect();
    let n = pts.len();
    let rad = params.pixel_window / 2;
    let eps2 = params.eps * params.eps;
    let near = |a: &PixelPoint3, b: &PixelPoint3| {
        let dr = a.row.abs_diff(b.row);
        let dc = a.col.abs_diff(b.col);
        let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
        dr <= rad && dc <= rad && dx * dx + dy * dy + dz * dz <= eps2
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(&pts[i], &pts[j])).count() >= params.min_pts)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if core[i] && core[j] && near(&pts[i], &pts[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // rank of a component = its smallest core index
    let mut label: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        if core[i] {
            label[i] = Some(find(&mut parent, i));
        }
    }
    for i in 0..n {
        if !core[i] {
            label[i] = (0..n)
                .filter(|&j| core[j] && near(&pts[i], &pts[j]))
                .map(|j| find(&mut parent, j))
                .min();
        }
    }
    let roots: BTreeSet<usize> = label.iter().flatten().copied().collect();
    let mut masks: Vec<BinaryMask> = roots
        .iter()
        .map(|&root| {
            let px: Pixels = (0..n)
                .filter(|&i| label[i] == Some(root))
                .map(|i| (pts[i].row, pts[i].col))
                .collect();
            mask_of(h, w, &px)
        })
        .collect();
    masks.sort_by_key(|m| pixels_of(m).iter().next().copied());
    masks
}

/// Random pixel-point cloud over a few depth layers, optionally with several
/// points on one pixel.
pub fn random_points<R: Rng>(
    rng: &mut R,
    h: usize,
    w: usize,
    max_points: usize,
) -> Vec<PixelPoint3> {
    let k = CameraIntrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0).unwrap();
    let layers: Vec<f64> = (0..rng.random_range(1..=4))
        .map(|_| rng.random_range(2.0..60.0))
        .collect();
    let n = rng.random_range(0..=max_points);
    let mut used = HashSet::new();
    let mut out = Vec::with_capacity(n);
    // a few blobs so clusters actually form
    let centers: Vec<(usize, usize, f64)> = (0..rng.random_range(1..=6))
        .map(|_| {
            (
                rng.random_range(0..h),
                rng.random_range(0..w),
                layers[rng.random_range(0..layers.len())],
            )
        })
        .collect();
    for _ in 0..n {
        let (cr, cc, d) = centers[rng.random_range(0..centers.len())];
        let spread: i64 = rng.random_range(1..=12);
        let r = (cr as i64 + rng.random_range(-spread..=spread)).clamp(0, h as i64 - 1) as usize;
        let c = (cc as i64 + rng.random_range(-spread..=spread)).clamp(0, w as i64 - 1) as usize;
        let duplicate_ok = rng.random_bool(0.05);
        if !used.insert((r, c)) && !duplicate_ok {
            continue;
        }
        let depth = d + rng.random_range(-0.3..0.3) + if rng.random_bool(0.1) { 10.0 } else { 0.0 };
        let [x, y, z] = k.unproject_pixel(r, c, depth);
        out.push(PixelPoint3 {
            row: r,
            col: c,
            x,
            y,
            z,
        });
    }
    out
}

pub fn random_dbscan_params<R: Rng>(rng: &mut R) -> DbscanParams {
    DbscanParams {
        eps: rng.random_range(0.05..2.0),
        min_pts: rng.random_range(1..=9),
        pixel_window: rng.random_range(1..=12),
    }
}

// ---- mask aggregation ----

#[derive(Debug, Clone)]
pub struct Proposal {
    pub px: Pixels,
    pub score: f64,
    /// 0 = large-scale set, 1 = small-scale set
    pub src: u8,
    pub id: u64,
}

fn covered(refs: &[&Proposal], targ: &Proposal) -> f64 {
    let union: Pixels = refs.iter().flat_map(|r| r.px.iter().copied()).collect();
    union.intersection(&targ.px).count() as f64 / targ.px.len() as f64
}

fn iou(a: &Pixels, b: &Pixels) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn remove_smaller_overlapping(ml: &[Proposal], filt: f64) -> Vec<Proposal> {
    ml.iter()
        .filter(|a| {
            !ml.iter()
                .any(|b| b.px.len() > a.px.len() && covered(&[b], a) > filt)
        })
        .cloned()
        .collect()
}

fn remove_larger_overlapping(ms: &[Proposal], filt: f64) -> Vec<Proposal> {
    ms.iter()
        .filter(|a| {
            !ms.iter()
                .any(|b| b.px.len() < a.px.len() && covered(&[a], b) > filt)
        })
        .cloned()
        .collect()
}

fn higher_scoring<'a>(m1: &'a Proposal, m2: &'a Proposal) -> &'a Proposal {
    if m1.score > m2.score {
        m1
    } else {
        m2
    }
}

/// Line-by-line transcription of the aggregation pseudocode. Returns
/// `(src, id)` of every selected proposal.
pub fn mask_agg_oracle(
    ml: &[Proposal],
    ms: &[Proposal],
    match_thrd: f64,
    filt_frac: f64,
    cover_frac: f64,
) -> BTreeSet<(u8, u64)> {
    let ml = remove_smaller_overlapping(ml, filt_frac);
    let ms = remove_larger_overlapping(ms, filt_frac);
    let mut agg: BTreeSet<(u8, u64)> = BTreeSet::new();
    let add = |agg: &mut BTreeSet<(u8, u64)>, p: &Proposal| {
        agg.insert((p.src, p.id));
    };
    for m in &ml {
        let m_s: Vec<&Proposal> = ms.iter().filter(|s| covered(&[s], m) > 0.0).collect();
        if m_s.is_empty() {
            continue;
        } else if m_s.len() == 1 && iou(&m_s[0].px, &m.px) > match_thrd {
            add(&mut agg, higher_scoring(m_s[0], m));
        } else if covered(&m_s, m) > cover_frac {
            for s in &m_s {
                add(&mut agg, s);
            }
        } else {
            add(&mut agg, m);
        }
    }
    let ms_refs: Vec<&Proposal> = ms.iter().collect();
    let ml_refs: Vec<&Proposal> = ml.iter().collect();
    for m in &ml {
        if covered(&ms_refs, m) == 0.0 {
            add(&mut agg, m);
        }
    }
    for m in &ms {
        if covered(&ml_refs, m) == 0.0 {
            add(&mut agg, m);
        }
    }
    agg
}

pub fn proposals_of(set: &LabelSet, src: u8) -> Vec<Proposal> {
    set.instances()
        .iter()
        .map(|i| Proposal {
            px: pixels_of(&i.mask()),
            score: i.score(),
            src,
            id: i.id(),
        })
        .collect()
}

/// Random large-scale and small-scale proposal sets with groups, parts and
/// near-duplicates.
pub fn random_agg_case<R: Rng>(rng: &mut R, h: usize, w: usize) -> (LabelSet, LabelSet) {
    let score = |rng: &mut R| {
        if rng.random_bool(0.3) {
            [0.5, 0.7, 0.9][rng.random_range(0..3)]
        } else {
            rng.random_range(0.0..=1.0)
        }
    };
    let mut large = Vec::new();
    let mut small = Vec::new();
    for _ in 0..rng.random_range(0..=5) {
        let bw = rng.random_range(4..=w / 2);
        let bh = rng.random_range(4..=h / 2);
        let x = rng.random_range(0..=w - bw);
        let y = rng.random_range(0..=h - bh);
        large.push(rect_mask(h, w, x, y, bw, bh));
        match rng.random_range(0..4) {
            // group: split into pieces
            0 => {
                let cut = rng.random_range(1..bw);
                small.push(rect_mask(h, w, x, y, cut, bh));
                small.push(rect_mask(h, w, x + cut, y, bw - cut, bh));
            }
            // part
            1 => small.push(rect_mask(h, w, x, y, (bw / 3).max(1), (bh / 3).max(1))),
            // near duplicate
            2 => {
                let sx = (x + rng.random_range(0..=1)).min(w - bw);
                small.push(rect_mask(h, w, sx, y, bw, bh));
            }
            _ => {}
        }
    }
    for _ in 0..rng.random_range(0..=3) {
        let bw = rng.random_range(1..=6);
        let bh = rng.random_range(1..=6);
        small.push(rect_mask(
            h,
            w,
            rng.random_range(0..=w - bw),
            rng.random_range(0..=h - bh),
            bw,
            bh,
        ));
    }
    let mk = |rng: &mut R, masks: Vec<BinaryMask>| {
        let inst = masks
            .iter()
            .enumerate()
            .map(|(i, m)| InstanceLabel::from_mask(i as u64, m, score(rng)).unwrap())
            .collect();
        LabelSet::new("f", h, w, inst).unwrap()
    };
    let l = mk(rng, large);
    let s = mk(rng, small);
    (l, s)
}

// ---- metrics ----

pub struct OracleFrame {
    pub frame_id: String,
    /// `(id, score, pixels)`
    pub preds: Vec<(u64, f64, Pixels)>,
    /// `(id, pixels)`
    pub gt: Vec<(u64, Pixels)>,
}

pub fn oracle_frame(preds: &LabelSet, gt: &LabelSet) -> OracleFrame {
    OracleFrame {
        frame_id: preds.frame_id().to_string(),
        preds: preds
            .instances()
            .iter()
            .map(|i| (i.id(), i.score(), pixels_of(&i.mask())))
            .collect(),
        gt: gt
            .instances()
            .iter()
            .map(|i| (i.id(), pixels_of(&i.mask())))
            .collect(),
    }
}

/// Every partial injective assignment of ranked predictions to GT indices.
fn all_matchings(n_pred: usize, n_gt: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(
        p: usize,
        n_pred: usize,
        n_gt: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if p == n_pred {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(p + 1, n_pred, n_gt, used, cur, out);
        cur.pop();
        for g in 0..n_gt {
            if !used[g] {
                used[g] = true;
                cur.push(Some(g));
                rec(p + 1, n_pred, n_gt, used, cur, out);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(
        0,
        n_pred,
        n_gt,
        &mut vec![false; n_gt],
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// True when `m` is what a greedy matcher would produce: each prediction, in
/// rank order, takes the free GT with the highest IoU (lower id on ties)
/// provided it reaches `thr`, and stays unmatched otherwise.
fn greedy_consistent(m: &[Option<usize>], ious: &[Vec<f64>], gt_ids: &[u64], thr: f64) -> bool {
    let mut used = vec![false; gt_ids.len()];
    for (p, choice) in m.iter().enumerate() {
        let free: Vec<usize> = (0..gt_ids.len()).filter(|&g| !used[g]).collect();
        match choice {
            None => {
                if free.iter().any(|&g| ious[p][g] >= thr) {
                    return false;
                }
            }
            Some(g) => {
                let v = ious[p][*g];
                if used[*g] || v < thr {
                    return false;
                }
                for &o in &free {
                    if o == *g {
                        continue;
                    }
                    let better = ious[p][o] > v || (ious[p][o] == v && gt_ids[o] < gt_ids[*g]);
                    if better {
                        return false;
                    }
                }
                used[*g] = true;
            }
        }
    }
    true
}

pub struct OracleResult {
    pub ar: f64,
    pub ap: f64,
    pub ar_bucket: [f64; 3],
    pub ap_bucket: [f64; 3],
}

fn bucket(area: f64, bounds: [f64; 2]) -> usize {
    if area < bounds[0] {
        0
    } else if area < bounds[1] {
        1
    } else {
        2
    }
}

/// Max-precision interpolated AP at recall points 0, 0.01, ..., 1.
fn ap_from(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut points = Vec::new();
    let mut hits = 0;
    for (i, &t) in tp.iter().enumerate() {
        if t {
            hits += 1;
        }
        points.push((hits as f64 / num_gt as f64, hits as f64 / (i + 1) as f64));
    }
    (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            points
                .iter()
                .filter(|(rc, _)| *rc >= r)
                .map(|(_, pr)| *pr)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

/// Exhaustive AR / AP in mask mode. The matching of each frame is found by
/// enumerating every assignment and keeping the unique greedy-consistent one.
pub fn metric_oracle(frames: &[OracleFrame], thresholds: &[f64], bounds: [f64; 2]) -> OracleResult {
    struct Ranked {
        ids: Vec<u64>,
        scores: Vec<f64>,
        areas: Vec<f64>,
        ious: Vec<Vec<f64>>,
        gt_ids: Vec<u64>,
        gt_areas: Vec<f64>,
    }
    let ranked: Vec<Ranked> = frames
        .iter()
        .map(|f| {
            let mut preds: Vec<&(u64, f64, Pixels)> = f.preds.iter().collect();
            preds.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            Ranked {
                ids: preds.iter().map(|p| p.0).collect(),
                scores: preds.iter().map(|p| p.1).collect(),
                areas: preds.iter().map(|p| p.2.len() as f64).collect(),
                ious: preds
                    .iter()
                    .map(|p| f.gt.iter().map(|g| iou(&p.2, &g.1)).collect())
                    .collect(),
                gt_ids: f.gt.iter().map(|g| g.0).collect(),
                gt_areas: f.gt.iter().map(|g| g.1.len() as f64).collect(),
            }
        })
        .collect();

    let total_gt: usize = ranked.iter().map(|r| r.gt_ids.len()).sum();
    let mut gt_per_bucket = [0usize; 3];
    for r in &ranked {
        for &a in &r.gt_areas {
            gt_per_bucket[bucket(a, bounds)] += 1;
        }
    }
    // pooled order: score, then frame id, then instance id
    let mut pooled: Vec<(usize, usize)> = ranked
        .iter()
        .enumerate()
        .flat_map(|(f, r)| (0..r.ids.len()).map(move |p| (f, p)))
        .collect();
    pooled.sort_by(|&(fa, pa), &(fb, pb)| {
        ranked[fb].scores[pb]
            .partial_cmp(&ranked[fa].scores[pa])
            .unwrap()
            .then(frames[fa].frame_id.cmp(&frames[fb].frame_id))
            .then(ranked[fa].ids[pa].cmp(&ranked[fb].ids[pb]))
    });

    let (mut ar, mut ap) = (0.0, 0.0);
    let (mut ar_b, mut ap_b) = ([0.0; 3], [0.0; 3]);
    for &thr in thresholds {
        let matchings: Vec<Vec<Option<usize>>> = ranked
            .iter()
            .map(|r| {
                let ok: Vec<_> = all_matchings(r.ids.len(), r.gt_ids.len())
                    .into_iter()
                    .filter(|m| greedy_consistent(m, &r.ious, &r.gt_ids, thr))
                    .collect();
                assert_eq!(ok.len(), 1, "greedy matching must be unique");
                ok.into_iter().next().unwrap()
            })
            .collect();
        let mut hit_b = [0usize; 3];
        for (r, m) in ranked.iter().zip(&matchings) {
            for g in m.iter().flatten() {
                hit_b[bucket(r.gt_areas[*g], bounds)] += 1;
            }
        }
        let hits: usize = hit_b.iter().sum();
        ar += if total_gt == 0 {
            0.0
        } else {
            hits as f64 / total_gt as f64
        };
        let tp: Vec<bool> = pooled
            .iter()
            .map(|&(f, p)| matchings[f][p].is_some())
            .collect();
        ap += ap_from(&tp, total_gt);
        for b in 0..3 {
            ar_b[b] += if gt_per_bucket[b] == 0 {
                0.0
            } else {
                hit_b[b] as f64 / gt_per_bucket[b] as f64
            };
            let seq: Vec<bool> = pooled
                .iter()
                .filter_map(|&(f, p)| match matchings[f][p] {
                    Some(g) => (bucket(ranked[f].gt_areas[g], bounds) == b).then_some(true),
                    None => (bucket(ranked[f].areas[p], bounds) == b).then_some(false),
                })
                .collect();
            ap_b[b] += ap_from(&seq, gt_per_bucket[b]);
        }
    }
    let n = thresholds.len() as f64;
    OracleResult {
        ar: ar / n,
        ap: ap / n,
        ar_bucket: ar_b.map(|v| v / n),
        ap_bucket: ap_b.map(|v| v / n),
    }
}

/// A random frame of at most `max_total` instances across predictions and
/// ground truth, on a 24 x 24 grid. Predictions are mostly jittered copies of
/// ground truth.
pub fn random_eval_frame<R: Rng>(
    rng: &mut R,
    frame_id: &str,
    max_total: usize,
) -> (LabelSet, LabelSet) {
    let (h, w) = (24, 24);
    let n_gt = rng.random_range(0..=max_total / 2 + 1).min(max_total);
    let n_pred = rng.random_range(0..=max_total - n_gt);
    let mut gt = Vec::new();
    let mut boxes = Vec::new();
    for i in 0..n_gt {
        let bw = rng.random_range(2..=14);
        let bh = rng.random_range(2..=14);
        let (x, y) = (rng.random_range(0..=w - bw), rng.random_range(0..=h - bh));
        boxes.push((x, y, bw, bh));
        gt.push(
            InstanceLabel::from_mask(i as u64 * 3 + 1, &rect_mask(h, w, x, y, bw, bh), 1.0)
                .unwrap(),
        );
    }
    let mut preds = Vec::new();
    for i in 0..n_pred {
        let (x, y, bw, bh) = if !boxes.is_empty() && rng.random_bool(0.7) {
            let (x, y, bw, bh) = boxes[rng.random_range(0..boxes.len())];
            let dx = rng.random_range(-2i64..=2);
            let dy = rng.random_range(-2i64..=2);
            let nx = (x as i64 + dx).clamp(0, (w - bw) as i64) as usize;
            let ny = (y as i64 + dy).clamp(0, (h - bh) as i64) as usize;
            (nx, ny, bw, bh)
        } else {
            let bw = rng.random_range(1..=12);
            let bh = rng.random_range(1..=12);
            (
                rng.random_range(0..=w - bw),
                rng.random_range(0..=h - bh),
                bw,
                bh,
            )
        };
        let score = if rng.random_bool(0.3) {
            [0.3, 0.6, 0.9][rng.random_range(0..3)]
        } else {
            rng.random_range(0.0..=1.0)
        };
        preds.push(
            InstanceLabel::from_mask(i as u64, &rect_mask(h, w, x, y, bw, bh), score).unwrap(),
        );
    }
    (
        LabelSet::new(frame_id, h, w, preds).unwrap(),
        LabelSet::new(frame_id, h, w, gt).unwrap(),
    )
}

/// Writes a synthetic dataset under `root` the way `mobilabel synth` does and
/// returns its ground truth.
pub fn write_synth(
    root: &std::path::Path,
    spec: &mobilabel::synthgen::SceneSpec,
    frames: usize,
) -> Vec<LabelSet> {
    use mobilabel::io::{self, DatasetLayout, Frame};
    let layout = DatasetLayout::new(root);
    io::write_intrinsics(&layout.intrinsics_path(), &spec.intrinsics()).unwrap();
    mobilabel::synthgen::generate_dataset(spec, frames)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let id = mobilabel::synthgen::frame_id(i);
            layout
                .write_frame(&Frame {
                    frame_id: id.clone(),
                    depth: s.depth,
                    motion: s.motion,
                })
                .unwrap();
            io::write_labels(&layout.labels_path(&id), &s.gt).unwrap();
            s.gt
        })
        .collect()
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

/// Whether some instance of `set` overlaps `m` with IoU at least `thr`.
pub fn recovered(set: &LabelSet, m: &BinaryMask, thr: f64) -> bool {
    let want = pixels_of(m);
    set.instances().iter().any(|i| {
        let got = pixels_of(&i.mask());
        let inter = got.intersection(&want).count() as f64;
        let union = (got.len() + want.len()) as f64 - inter;
        union > 0.0 && inter / union >= thr
    })
}

// ---- shared by several targets ----

/// Maps an aggregation output back to `(src, id)` of the inputs by mask and
/// score. Inputs in these fixtures never repeat a (mask, score) pair across
/// sets unless they are interchangeable.
pub fn identify(
    out: &LabelSet,
    ml: &LabelSet,
    ms: &LabelSet,
) -> std::collections::BTreeSet<(u8, u64)> {
    out.instances()
        .iter()
        .map(|o| {
            let hit = |set: &LabelSet| {
                set.instances()
                    .iter()
                    .find(|i| i.rle() == o.rle() && i.score() == o.score())
                    .map(|i| i.id())
            };
            match hit(ml) {
                Some(id) => (0, id),
                None => (1, hit(ms).expect("output must be an input instance")),
            }
        })
        .collect()
}

pub fn ambiguous(ml: &LabelSet, ms: &LabelSet) -> bool {
    ml.instances().iter().any(|l| {
        ms.instances()
            .iter()
            .any(|s| s.rle() == l.rle() && s.score() == l.score())
    })
}

/// Truncates, flips, inserts or deletes bytes.
pub fn corrupt<R: Rng>(bytes: &[u8], rng: &mut R) -> Vec<u8> {
    let mut b = bytes.to_vec();
    for _ in 0..rng.random_range(1..=4) {
        match rng.random_range(0..5) {
            0 => b.truncate(rng.random_range(0..=b.len())),
            1 if !b.is_empty() => {
                let i = rng.random_range(0..b.len());
                b[i] ^= 1 << rng.random_range(0..8);
            }
            2 => {
                let i = rng.random_range(0..=b.len());
                b.insert(i, rng.random());
            }
            3 if !b.is_empty() => {
                let i = rng.random_range(0..b.len());
                b.remove(i);
            }
            _ if !b.is_empty() => {
                let i = rng.random_range(0..b.len());
                b[i] = b"0123456789{}[],:\"-.e \n"[rng.random_range(0..22)];
            }
            _ => {}
        }
    }
    b
}
