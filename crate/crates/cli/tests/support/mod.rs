#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use lba_sodkit::image_io::{save_image, Image};

pub fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

pub fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lba-sodkit"));
    cmd.args(args).env_remove("LBA_SODKIT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Asserts a single `error <kind>: ...` line on stderr.
pub fn assert_error_line(o: &Output, kind: &str) {
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error {kind}: ")), "{err}");
}

pub fn gray(path: &Path, w: usize, h: usize, data: Vec<u8>) {
    save_image(path, &Image::gray(w, h, data).unwrap()).unwrap();
}

pub fn rgb(path: &Path, w: usize, h: usize, data: Vec<u8>) {
    save_image(path, &Image::new(w, h, 3, data).unwrap()).unwrap();
}

/// Rectangle mask bytes (255 inside).
pub fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<u8> {
    (0..w * h)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
                255
            } else {
                0
            }
        })
        .collect()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
