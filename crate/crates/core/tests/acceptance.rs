//! The nine acceptance criteria. Each prints one PASS or FAIL line with its
//! measurement and wall time; the target exits non-zero if any fails. Runs
//! without the test harness so the lines are never captured.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use mobilabel::aggregate::{mask_agg, AggParams};
use mobilabel::initlabel::{dbscan_partition, CameraIntrinsics, DbscanParams, PixelPoint3};
use mobilabel::io::{self, DatasetLayout};
use mobilabel::label::{InstanceLabel, LabelSet};
use mobilabel::mask::{bbox_of, mask_iou, BinaryMask};
use mobilabel::metrics::{
    average_precision, average_recall, coco_iou_thresholds, evaluate, with_split, EvalConfig,
};
use mobilabel::rescale::{invert_labels, make_transform, transform_labels};
use mobilabel::rounds::{BranchNoise, Exchange, GtMockDetector, Pipeline, PipelineConfig, Stage};
use mobilabel::synthgen::{generate_scene, MockNoise, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(
        elapsed < limit,
        format!("took {elapsed:.2?}, limit {limit:?}"),
    )
}

// ---- 1 ----

fn unprojection_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (h, w) = (
            rng.random_range(1..4000usize),
            rng.random_range(1..4000usize),
        );
        let k = CameraIntrinsics::new(
            rng.random_range(50.0..5000.0),
            rng.random_range(50.0..5000.0),
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
        )
        .map_err(|e| e.to_string())?;
        let (row, col) = (rng.random_range(0..h), rng.random_range(0..w));
        let depth = rng.random_range(0.1..200.0);
        let (r, c) = k.project(k.unproject_pixel(row, col, depth));
        worst = worst
            .max((r - row as f64).abs())
            .max((c - col as f64).abs());
    }
    let t = start.elapsed();
    check(worst <= 1e-9, format!("max pixel error {worst:e}"))?;
    within(t, Duration::from_secs(1))?;
    Ok(format!(
        "10000 triples, max pixel error {worst:.1e}, {t:.2?}"
    ))
}

// ---- 2 ----

fn dbscan_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut clusters = 0;
    let mut largest = 0;
    for case in 0..200 {
        let (h, w) = (rng.random_range(1..=80), rng.random_range(1..=120));
        let pts = random_points(&mut rng, h, w, 2000);
        largest = largest.max(pts.len());
        let p = random_dbscan_params(&mut rng);
        let got = dbscan_partition(&pts, &p, h, w).map_err(|e| e.to_string())?;
        check(
            got == dbscan_oracle(&pts, &p, h, w),
            format!("case {case}: partition differs"),
        )?;
        clusters += got.len();
    }
    // adjacent 4x4 patches at 5 m and 50 m
    let k = CameraIntrinsics::new(100.0, 100.0, 10.0, 5.0).unwrap();
    let mut pts = Vec::new();
    for r in 0..4 {
        for c in 0..8 {
            let [x, y, z] = k.unproject_pixel(r, c, if c < 4 { 5.0 } else { 50.0 });
            pts.push(PixelPoint3 {
                row: r,
                col: c,
                x,
                y,
                z,
            });
        }
    }
    let p = DbscanParams::default();
    let got = dbscan_partition(&pts, &p, 4, 8).map_err(|e| e.to_string())?;
    check(
        got.len() == 2,
        format!("depth fixture gave {} clusters", got.len()),
    )?;
    check(
        got == dbscan_oracle(&pts, &p, 4, 8),
        "depth fixture differs from oracle",
    )?;
    let t = start.elapsed();
    within(t, Duration::from_secs(30))?;
    Ok(format!(
        "200 sets (up to {largest} points, {clusters} clusters) + depth fixture, {t:.2?}"
    ))
}

// ---- 3 ----

fn agg_fixture(
    name: &str,
    h: usize,
    w: usize,
    ml: &[(BinaryMask, f64)],
    ms: &[(BinaryMask, f64)],
    want: &[(u8, u64)],
) -> Result<(), String> {
    let set = |v: &[(BinaryMask, f64)]| {
        LabelSet::new(
            "f",
            h,
            w,
            v.iter()
                .enumerate()
                .map(|(i, (m, s))| InstanceLabel::from_mask(i as u64, m, *s).unwrap())
                .collect(),
        )
        .unwrap()
    };
    let (ml, ms) = (set(ml), set(ms));
    let p = AggParams::default();
    let want: std::collections::BTreeSet<(u8, u64)> = want.iter().copied().collect();
    let out = mask_agg(&ml, &ms, &p).map_err(|e| e.to_string())?;
    check(
        identify(&out, &ml, &ms) == want,
        format!("{name}: library output differs"),
    )?;
    let oracle = mask_agg_oracle(
        &proposals_of(&ml, 0),
        &proposals_of(&ms, 1),
        p.match_thrd,
        p.filt_frac,
        p.cover_frac,
    );
    check(
        oracle == want,
        format!("{name}: interpreter output differs"),
    )
}

fn algorithm_one() -> Outcome {
    let start = Instant::now();
    let (h, w) = (40, 40);
    let r = |x, y, bw, bh| rect_mask(h, w, x, y, bw, bh);
    // group: three parts cover 270 of 300 px
    agg_fixture(
        "group",
        h,
        w,
        &[(r(0, 0, 30, 10), 0.95)],
        &[
            (r(0, 0, 9, 10), 0.85),
            (r(10, 0, 9, 10), 0.84),
            (r(20, 0, 9, 10), 0.83),
        ],
        &[(1, 0), (1, 1), (1, 2)],
    )?;
    // singleton at IoU 0.8, small scores higher
    agg_fixture(
        "singleton",
        h,
        w,
        &[(r(0, 0, 10, 10), 0.7)],
        &[(r(0, 0, 10, 8), 0.9)],
        &[(1, 0)],
    )?;
    // no overlap either way
    agg_fixture(
        "zero-coverage",
        h,
        w,
        &[(r(0, 0, 10, 10), 0.91)],
        &[(r(25, 25, 5, 5), 0.81)],
        &[(0, 0), (1, 0)],
    )?;
    // empty small set keeps the pre-filtered large set; the inner mask is
    // 100% inside the outer one and removed
    agg_fixture(
        "empty-MS",
        h,
        w,
        &[
            (r(0, 0, 10, 10), 0.9),
            (r(1, 1, 4, 4), 0.95),
            (r(20, 20, 6, 6), 0.8),
        ],
        &[],
        &[(0, 0), (0, 2)],
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut outputs) = (0, 0);
    while checked < 50 {
        let (ml, ms) = random_agg_case(&mut rng, 20, 20);
        if ambiguous(&ml, &ms) {
            continue;
        }
        let p = AggParams {
            match_thrd: rng.random_range(0.05..0.95),
            filt_frac: rng.random_range(0.05..0.95),
            cover_frac: rng.random_range(0.05..0.95),
        };
        let out = mask_agg(&ml, &ms, &p).map_err(|e| e.to_string())?;
        let want = mask_agg_oracle(
            &proposals_of(&ml, 0),
            &proposals_of(&ms, 1),
            p.match_thrd,
            p.filt_frac,
            p.cover_frac,
        );
        check(
            out.len() == want.len() && identify(&out, &ml, &ms) == want,
            format!("random case {checked} differs"),
        )?;
        checked += 1;
        outputs += out.len();
    }
    let t = start.elapsed();
    within(t, Duration::from_secs(10))?;
    Ok(format!(
        "4 fixtures + 50 random cases ({outputs} outputs), {t:.2?}"
    ))
}

// ---- 4 ----

fn metric_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = EvalConfig {
        size_buckets: [40.0, 100.0],
        ..EvalConfig::default()
    };
    let thresholds = coco_iou_thresholds();
    let frames: Vec<(LabelSet, LabelSet)> = (0..100)
        .map(|i| random_eval_frame(&mut rng, &format!("{i:06}"), 10))
        .collect();
    let mut worst = 0.0f64;
    let mut compare = |frames: &[(LabelSet, LabelSet)]| -> Result<(), String> {
        let preds: Vec<LabelSet> = frames.iter().map(|f| f.0.clone()).collect();
        let gt: Vec<LabelSet> = frames.iter().map(|f| f.1.clone()).collect();
        let of: Vec<OracleFrame> = frames.iter().map(|(p, g)| oracle_frame(p, g)).collect();
        let want = metric_oracle(&of, &thresholds, cfg.size_buckets);
        let ar = average_recall(&preds, &gt, &cfg).map_err(|e| e.to_string())?;
        let ap = average_precision(&preds, &gt, &cfg).map_err(|e| e.to_string())?;
        worst = worst
            .max((ar.ar - want.ar).abs())
            .max((ap.ap - want.ap).abs());
        for b in 0..3 {
            worst = worst
                .max((ar.per_bucket[b] - want.ar_bucket[b]).abs())
                .max((ap.per_bucket[b] - want.ap_bucket[b]).abs());
        }
        Ok(())
    };
    for f in &frames {
        compare(std::slice::from_ref(f))?;
    }
    compare(&frames)?;
    check(
        worst <= 1e-9,
        format!("max deviation from oracle {worst:e}"),
    )?;

    let gt: Vec<LabelSet> = frames.iter().map(|f| f.1.clone()).collect();
    let id = evaluate(&gt, &gt, &cfg).map_err(|e| e.to_string())?;
    check(
        id.ar == 1.0 && id.ap == 1.0,
        format!("identity: AR {} AP {}", id.ar, id.ap),
    )?;
    let empty: Vec<LabelSet> = gt
        .iter()
        .map(|g| LabelSet::empty(g.frame_id(), g.height(), g.width()))
        .collect();
    let none = evaluate(&empty, &gt, &cfg).map_err(|e| e.to_string())?;
    check(
        none.ar == 0.0 && none.ap == 0.0,
        format!("empty: AR {} AP {}", none.ar, none.ap),
    )?;
    let t = start.elapsed();
    within(t, Duration::from_secs(60))?;
    Ok(format!(
        "100 frames ({} GT) singly and pooled, max deviation {worst:.1e}; identity 1.0, empty 0.0, {t:.2?}",
        id.num_gt
    ))
}

// ---- 5 ----

fn default_snapshot() -> Outcome {
    let cfg = PipelineConfig::default();
    let json = serde_json::to_string(&cfg).map_err(|e| e.to_string())?;
    let want = r#"{"init":{"motion_threshold":0.1,"dbscan":{"eps":1.0,"min_pts":4,"pixel_window":10},"min_area":16,"method":"depth"},"moving2mobile":{"conf":0.5,"jitter":[0.5,1.0],"epochs":3},"large2small":{"large_conf":0.9,"small_conf":0.8,"large_scale":1.0,"small_scale":0.25,"epochs":20,"agg":{"match_thrd":0.5,"filt_frac":0.75,"cover_frac":0.5}},"final":{"jitter":[0.5,1.0],"epochs":20},"gt_overlap":0.1}"#;
    check(json == want, format!("got {json}"))?;
    let agg = serde_json::to_string(&AggParams::default()).map_err(|e| e.to_string())?;
    check(
        agg == r#"{"match_thrd":0.5,"filt_frac":0.75,"cover_frac":0.5}"#,
        format!("got {agg}"),
    )?;
    let l = cfg.large2small;
    let values = [
        ("motion", cfg.init.motion_threshold, 0.1),
        ("M2M conf", cfg.moving2mobile.conf, 0.5),
        ("large scale", l.large_scale, 1.0),
        ("small scale", l.small_scale, 0.25),
        ("large conf", l.large_conf, 0.9),
        ("small conf", l.small_conf, 0.8),
        ("jitter lo", cfg.moving2mobile.jitter[0], 0.5),
        ("jitter hi", cfg.moving2mobile.jitter[1], 1.0),
        ("matchThrd", l.agg.match_thrd, 0.5),
        ("filtFrac", l.agg.filt_frac, 0.75),
        ("coverFrac", l.agg.cover_frac, 0.5),
        ("gt overlap", cfg.gt_overlap, 0.1),
    ];
    for (name, got, want) in values {
        check(got == want, format!("{name}: {got} != {want}"))?;
    }
    Ok("serialization matches byte for byte".into())
}

// ---- 6 ----

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    pool.install(|| -> Outcome {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let data = dir.path().join("data");
        let spec = SceneSpec { seed: 1, depth_noise: 0.05, ..SceneSpec::default() };
        let gt = write_synth(&data, &spec, 100);
        let layout = DatasetLayout::new(&data);
        let cfg = PipelineConfig::default();
        let ids: Vec<String> = (0..100).map(mobilabel::synthgen::frame_id).collect();
        let run = |work: &str, noise: BranchNoise| -> Result<[Vec<LabelSet>; 3], String> {
            let det = GtMockDetector::from_dataset(&layout, noise, 7).map_err(|e| e.to_string())?;
            let ex = Exchange::new(dir.path().join(work));
            Pipeline { dataset: &layout, exchange: &ex, config: &cfg, detector: Some(&det) }
                .run(Stage::Final)
                .map_err(|e| e.to_string())?;
            let r = |n| ex.read_round(n, &ids).map_err(|e| e.to_string());
            Ok([r("l0")?, r("l1")?, r("l2")?])
        };
        // noisy detector that cannot see small objects at full scale
        let full = MockNoise { shift: 1, score_std: 0.05, min_area: 1024, ..MockNoise::default() };
        let noisy = BranchNoise { small: MockNoise { min_area: 0, ..full }, ..BranchNoise::uniform(full) };
        let [l0, l1, l2] = run("noisy", noisy)?;
        let ecfg = EvalConfig::default();
        let report = |l: &[LabelSet]| -> Result<mobilabel::metrics::EvalReport, String> {
            let r = evaluate(l, &gt, &ecfg).map_err(|e| e.to_string())?;
            with_split(r, l, &gt, &ecfg).map_err(|e| e.to_string())
        };
        let (r0, r1, r2) = (report(&l0)?, report(&l1)?, report(&l2)?);
        let (s0, s1) = (r0.split.unwrap(), r1.split.unwrap());
        check(
            s0.moving_ar50 >= 0.90 && s0.static_ar50 == 0.0,
            format!("(a) L0 moving AR50 {:.3}, static AR50 {:.3}", s0.moving_ar50, s0.static_ar50),
        )?;
        check(
            s1.static_ar50 > s0.static_ar50,
            format!("(b) static AR50 L0 {:.3} -> L1 {:.3}", s0.static_ar50, s1.static_ar50),
        )?;
        check(r2.ar_s > r1.ar_s, format!("(c) AR_S L1 {:.3} -> L2 {:.3}", r1.ar_s, r2.ar_s))?;
        let [_, _, clean] = run("clean", BranchNoise::uniform(MockNoise::default()))?;
        let rc = report(&clean)?;
        check(rc.ar50 >= 0.95, format!("(d) zero-noise final AR50 {:.3}", rc.ar50))?;
        let t = start.elapsed();
        within(t, Duration::from_secs(300))?;
        Ok(format!(
            "{} GT ({} static, {} small): L0 moving/static AR50 {:.3}/{:.3}; L1 static AR50 {:.3}; AR_S {:.3} -> {:.3}; clean AR50 {:.3}; {t:.2?}",
            r0.num_gt,
            s0.static_gt,
            r0.bucket_gt[0],
            s0.moving_ar50,
            s0.static_ar50,
            s1.static_ar50,
            r1.ar_s,
            r2.ar_s,
            rc.ar50
        ))
    })
}

// ---- 7 ----

/// A random disk, ellipse, squircle or rectangle `min` to `2 * min` px across.
fn random_blob(rng: &mut ChaCha8Rng, h: usize, w: usize, min: f64) -> BinaryMask {
    let (a, b) = (
        rng.random_range(min / 2.0..min),
        rng.random_range(min / 2.0..min),
    );
    let (cy, cx) = (
        rng.random_range(b..h as f64 - b),
        rng.random_range(a..w as f64 - a),
    );
    let kind = rng.random_range(0..3);
    BinaryMask::from_fn(h, w, |r, c| {
        let (dy, dx) = ((r as f64 - cy) / b, (c as f64 - cx) / a);
        match kind {
            0 => dx * dx + dy * dy <= 1.0,
            1 => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            _ => dx.abs().powf(1.5) + dy.abs().powf(1.5) <= 1.0,
        }
    })
    .unwrap()
}

fn rescale_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_box, mut worst_iou) = (0.0f64, 1.0f64);
    for i in 0..500 {
        let (h, w) = (rng.random_range(170..=260), rng.random_range(170..=360));
        // 20 px in the scaled frame is 80 px here
        let m = random_blob(&mut rng, h, w, 80.0);
        let labels = LabelSet::new(
            format!("{i}"),
            h,
            w,
            vec![InstanceLabel::from_mask(0, &m, 0.9).unwrap()],
        )
        .unwrap();
        let t = make_transform(h, w, 0.25).map_err(|e| e.to_string())?;
        let back = invert_labels(
            &transform_labels(&labels, &t).map_err(|e| e.to_string())?,
            &t,
        )
        .map_err(|e| e.to_string())?;
        check(back.len() == 1, format!("label {i}: instance lost"))?;
        let got = back.instances()[0].mask();
        worst_iou = worst_iou.min(mask_iou(&m, &got).map_err(|e| e.to_string())?);
        let (a, b) = (bbox_of(&m).unwrap(), back.instances()[0].bbox());
        // per coordinate: both corners
        for (u, v) in [
            (a.x, b.x),
            (a.y, b.y),
            (a.x + a.w, b.x + b.w),
            (a.y + a.h, b.y + b.h),
        ] {
            worst_box = worst_box.max((u - v).abs());
        }
    }
    check(worst_box <= 4.0, format!("box error {worst_box} px"))?;
    check(worst_iou >= 0.9, format!("min IoU {worst_iou:.3}"))?;
    let t = start.elapsed();
    within(t, Duration::from_secs(10))?;
    Ok(format!(
        "500 labels, max box error {worst_box} px, min IoU {worst_iou:.3}, {t:.2?}"
    ))
}

// ---- 8 ----

fn format_robustness() -> Outcome {
    let start = Instant::now();
    let spec = SceneSpec {
        height: 48,
        width: 64,
        object_count: (1, 3),
        object_size: (6, 20),
        min_gap: 4,
        depth_noise: 0.2,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec, 0).map_err(|e| e.to_string())?;
    let transform = make_transform(48, 64, 0.25).unwrap();
    let samples: [(&str, Vec<u8>); 5] = [
        ("depth", io::encode_depth(&scene.depth)),
        ("motion", io::encode_motion(&scene.motion)),
        ("labels", io::encode_labels(&scene.gt).into_bytes()),
        (
            "intrinsics",
            io::encode_intrinsics(&scene.intrinsics).into_bytes(),
        ),
        ("transform", io::encode_transform(&transform).into_bytes()),
    ];
    let decode = |fmt: &str, b: &[u8]| -> bool {
        let text = || String::from_utf8_lossy(b).into_owned();
        match fmt {
            "depth" => io::decode_depth(b).is_ok(),
            "motion" => io::decode_motion(b).is_ok(),
            "labels" => io::decode_labels(&text()).is_ok(),
            "intrinsics" => io::decode_intrinsics(&text()).is_ok(),
            _ => io::decode_transform(&text()).is_ok(),
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rejected = 0;
    for (fmt, bytes) in &samples {
        check(decode(fmt, bytes), format!("{fmt}: pristine file rejected"))?;
        for i in 0..10_000 {
            // every tenth case is a plain truncation, which must be rejected;
            // dropping only trailing whitespace leaves a complete document
            let truncated = i % 10 == 0;
            let b = if truncated {
                bytes[..rng.random_range(0..bytes.trim_ascii_end().len())].to_vec()
            } else {
                corrupt(bytes, &mut rng)
            };
            let accepted = catch_unwind(AssertUnwindSafe(|| decode(fmt, &b)))
                .map_err(|_| format!("{fmt}: decoder panicked on case {i}"))?;
            check(
                !(truncated && accepted),
                format!("{fmt}: truncated file accepted (case {i})"),
            )?;
            rejected += usize::from(!accepted);
        }
    }
    // writers: repeated encodes and on-disk writes agree byte for byte
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let again = generate_scene(&spec, 0).map_err(|e| e.to_string())?;
    check(
        io::encode_depth(&again.depth) == samples[0].1,
        "depth writer",
    )?;
    check(
        io::encode_motion(&again.motion) == samples[1].1,
        "motion writer",
    )?;
    check(
        io::encode_labels(&again.gt).into_bytes() == samples[2].1,
        "labels writer",
    )?;
    let p = dir.path().join("x.labels.json");
    io::write_labels(&p, &scene.gt).map_err(|e| e.to_string())?;
    let first = std::fs::read(&p).unwrap();
    io::write_labels(&p, &io::read_labels(&p).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    check(
        std::fs::read(&p).unwrap() == first,
        "labels rewrite differs",
    )?;
    let t = start.elapsed();
    within(t, Duration::from_secs(60))?;
    Ok(format!(
        "5 formats x 10000 cases, {rejected} rejected, no panics, {t:.2?}"
    ))
}

// ---- 9 ----

fn cli_determinism() -> Outcome {
    let start = Instant::now();
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let logs: Vec<String> = dirs
        .iter()
        .zip(["1", "1", "8"])
        .map(|(d, w)| bin::full_run(d.path(), w))
        .collect();
    let trees: Vec<_> = dirs.iter().map(|d| tree(d.path())).collect();
    check(trees[0] == trees[1], "two single-worker runs differ")?;
    check(trees[0] == trees[2], "--workers 8 differs from --workers 1")?;
    check(logs[0] == logs[1] && logs[0] == logs[2], "stdout differs")?;
    Ok(format!(
        "7 subcommands x 3 runs, {} identical files, {:.2?}",
        trees[0].len(),
        start.elapsed()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("unprojection round trip", unprojection_round_trip),
        ("DBSCAN oracle equivalence", dbscan_equivalence),
        ("mask aggregation fixtures", algorithm_one),
        ("metric oracle equivalence", metric_equivalence),
        ("default configuration snapshot", default_snapshot),
        ("end-to-end pipeline", end_to_end),
        ("rescale round trip", rescale_round_trip),
        ("format robustness", format_robustness),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = Vec::new();
    for (n, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail}", n + 1),
            Err(why) => {
                println!("FAIL {} {name}: {why}", n + 1);
                failed.push(n + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("criteria {failed:?} failed");
        std::process::exit(1);
    }
}
