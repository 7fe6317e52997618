//! End-to-end pipeline over the bundled synthetic world, shared by the CLI
//! integration tests and the acceptance suite.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_uavloc");

/// Files compared byte-for-byte against `tests/data/golden/`.
pub const GOLDEN_FILES: [&str; 5] = [
    "gallery/tiles.jsonl",
    "out/replay_global.jsonl",
    "out/replay_neighbor.jsonl",
    "out/trajectory_global.geojson",
    "out/trajectory_neighbor.geojson",
];

pub const NEIGHBOR_RADIUS_M: &str = "80";

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to spawn uavloc")
}

fn run_ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "uavloc {} failed ({:?}):\n{}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn copy_dir(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for e in fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        let to = dst.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &to);
        } else {
            fs::copy(e.path(), to).unwrap();
        }
    }
}

/// Runs cut -> embed -> replay (global and neighbour) inside `dir` using
/// relative paths only, so the outputs do not depend on where `dir` lives.
pub fn golden_pipeline(dir: &Path) {
    copy_dir(&data_dir().join("world"), &dir.join("world"));
    run_ok(
        dir,
        &[
            "cut",
            "world/mosaic.png",
            "--windows",
            "96,128,160",
            "--stride",
            "1/4",
            "--out",
            "gallery",
        ],
    );
    run_ok(
        dir,
        &[
            "embed",
            "--manifest",
            "gallery/tiles.jsonl",
            "--grid",
            "8",
            "--out",
            "gallery/embeddings.emb",
        ],
    );
    run_ok(
        dir,
        &[
            "embed",
            "--manifest",
            "world/trace.jsonl",
            "--grid",
            "8",
            "--out",
            "world/queries.emb",
        ],
    );
    let common = [
        "replay",
        "--trace",
        "world/trace.jsonl",
        "--queries",
        "world/queries.emb",
        "--gallery-manifest",
        "gallery/tiles.jsonl",
        "--gallery-store",
        "gallery/embeddings.emb",
        "--k",
        "10",
    ];
    let mut global = common.to_vec();
    global.extend([
        "--global",
        "--out",
        "out/replay_global.jsonl",
        "--trajectory",
        "out/trajectory_global.geojson",
    ]);
    run_ok(dir, &global);
    let mut neighbor = common.to_vec();
    neighbor.extend([
        "--radius-m",
        NEIGHBOR_RADIUS_M,
        "--out",
        "out/replay_neighbor.jsonl",
        "--trajectory",
        "out/trajectory_neighbor.geojson",
    ]);
    run_ok(dir, &neighbor);
}

/// Compares the pipeline outputs in `dir` with the checked-in golden files.
/// With `UPDATE_GOLDEN=1` the golden files are rewritten instead.
pub fn compare_golden(dir: &Path) -> Result<(), String> {
    let golden = data_dir().join("golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v == "1");
    let mut mismatches = Vec::new();
    for f in GOLDEN_FILES {
        let got = fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let want_path = golden.join(Path::new(f).file_name().unwrap());
        if update {
            fs::create_dir_all(&golden).unwrap();
            fs::write(&want_path, &got).unwrap();
            continue;
        }
        match fs::read(&want_path) {
            Ok(want) if want == got => {}
            Ok(_) => mismatches.push(format!("{f} differs from {}", want_path.display())),
            Err(e) => mismatches.push(format!("{}: {e}", want_path.display())),
        }
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(mismatches.join("; "))
    }
}
