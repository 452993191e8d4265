#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn makeup(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_makeup"))
        .current_dir(cwd)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn makeup")
}

/// Runs a command and panics with its stderr unless it exits with 0.
pub fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = makeup(cwd, args);
    assert!(
        out.status.success(),
        "makeup {} failed ({:?}): {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub struct PipelineRun {
    pub root: PathBuf,
    pub manifests: Vec<PathBuf>,
    pub faces: Vec<PathBuf>,
    pub generated: Vec<PathBuf>,
}

/// Small end-to-end run with relative paths inside `root`: synthetic data,
/// pairs, a short branch run, a short style run, generation with extras,
/// evaluation and a guidance sweep.
pub fn pipeline(root: &Path) -> PipelineRun {
    let q = "-q";
    ok(root, &[q, "synth-faces", "--out", "photos", "--count", "6", "--seed", "1"]);
    ok(root, &[q, "synth-faces", "--out", "faces", "--count", "2", "--seed", "2", "--bare"]);
    ok(root, &[q, "prepare-data", "--in", "photos", "--out", "pairs"]);
    ok(root, &[q, "train-mafor", "--pairs", "pairs", "--out", "branch.ckpt", "--preset", "toy", "--steps", "20"]);
    ok(root, &[q, "synth-refs", "--out", "refs", "--count", "4", "--seed", "3"]);
    ok(root, &[q, "learn-style", "--refs", "refs", "--out", "style.tok", "--preset", "toy", "--steps", "40"]);
    let mut generated = Vec::new();
    let mut manifests = vec![
        root.join("photos/run_manifest.json"),
        root.join("faces/run_manifest.json"),
        root.join("pairs/run_manifest.json"),
        root.join("branch.ckpt.manifest.json"),
        root.join("refs/run_manifest.json"),
        root.join("style.tok.manifest.json"),
    ];
    std::fs::create_dir_all(root.join("gen")).unwrap();
    std::fs::create_dir_all(root.join("extras")).unwrap();
    let faces = vec![root.join("faces/face_0000.png"), root.join("faces/face_0001.png")];
    for i in 0..2 {
        let face = format!("faces/face_{i:04}.png");
        let out = format!("gen/out_{i}.png");
        ok(
            root,
            &[q, "generate", "--face", &face, "--style", "style.tok", "--branch", "branch.ckpt", "--steps", "20", "--seed", "5", "--out", &out],
        );
        let extra = format!("extras/out_{i}.png");
        ok(
            root,
            &[q, "generate", "--face", &face, "--style", "style.tok", "--branch", "branch.ckpt", "--steps", "20", "--seed", "5", "--extras", "--out", &extra],
        );
        generated.push(root.join(&extra));
        manifests.push(root.join(format!("gen/out_{i}.png.manifest.json")));
        manifests.push(root.join(format!("extras/out_{i}.png.manifest.json")));
    }
    ok(root, &[q, "evaluate", "--generated", "gen", "--reference", "refs", "--out", "report"]);
    manifests.push(root.join("report/run_manifest.json"));
    ok(
        root,
        &[q, "sweep", "--face", "faces/face_0000.png", "--style", "style.tok", "--branch", "branch.ckpt", "--steps", "10", "--param", "guidance", "--values", "0,2,4,6,8", "--out", "sweep"],
    );
    manifests.push(root.join("sweep/run_manifest.json"));
    for m in &manifests {
        assert!(m.is_file(), "missing manifest {}", m.display());
    }
    PipelineRun {
        root: root.to_path_buf(),
        manifests,
        faces,
        generated,
    }
}

/// Every regular file under `dir`, relative path and bytes, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
