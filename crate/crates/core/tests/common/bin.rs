//! Runs the `mobilabel` binary built for this test target.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mobilabel");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MOBILABEL_WORKERS")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exited normally")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs every subcommand under `root` with the given worker count.
pub fn full_run(root: &Path, workers: &str) -> String {
    let data = root.join("data");
    let w = ["--workers", workers];
    let mut log = String::new();
    log += &ok(&[
        &w[..],
        &[
            "synth",
            "--out",
            s(&data),
            "--frames",
            "12",
            "--seed",
            "5",
            "--height",
            "96",
            "--width",
            "160",
            "--max-size",
            "48",
            "--depth-noise",
            "0.05",
        ],
    ]
    .concat());
    log += &ok(&[
        &w[..],
        &[
            "init-labels",
            "--data",
            s(&data),
            "--out",
            s(&root.join("l0")),
        ],
    ]
    .concat());
    log += &ok(&[
        &w[..],
        &[
            "rescale",
            "--labels",
            s(&data.join("labels")),
            "--out",
            s(&root.join("small")),
            "--scale",
            "0.5",
            "--data",
            s(&data),
        ],
    ]
    .concat());
    log += &ok(&[
        &w[..],
        &[
            "rescale",
            "--labels",
            s(&root.join("small")),
            "--out",
            s(&root.join("back")),
            "--invert",
            "--transforms",
            s(&root.join("small")),
        ],
    ]
    .concat());
    log += &ok(&[
        &w[..],
        &[
            "aggregate",
            "--large",
            s(&data.join("labels")),
            "--small",
            s(&root.join("back")),
            "--out",
            s(&root.join("agg")),
        ],
    ]
    .concat());
    log += &ok(&[
        &w[..],
        &[
            "aggregate",
            "--large",
            s(&data.join("labels")),
            "--small",
            s(&root.join("back")),
            "--out",
            s(&root.join("nms")),
            "--nms",
        ],
    ]
    .concat());
    log += &ok(&[
        &w[..],
        &[
            "filter",
            "--in",
            s(&root.join("l0")),
            "--out",
            s(&root.join("filt")),
            "--conf",
            "0.5",
            "--gt-overlap",
            s(&data.join("labels")),
        ],
    ]
    .concat());
    log += &ok(&[
        &w[..],
        &[
            "eval",
            "--pred",
            s(&root.join("agg")),
            "--gt",
            s(&data.join("labels")),
            "--split",
            "--json",
            s(&root.join("eval.json")),
        ],
    ]
    .concat());
    log += &ok(&[
        &w[..],
        &[
            "pipeline",
            "--data",
            s(&data),
            "--work",
            s(&root.join("work")),
            "--mock-detector",
            "--mock-seed",
            "3",
            "--mock-shift",
            "1",
            "--mock-score-std",
            "0.1",
            "--mock-dropout",
            "0.1",
            "--mock-fp",
            "0.5",
            "--mock-min-area",
            "300",
        ],
    ]
    .concat());
    log.replace(s(root), "<root>")
}
